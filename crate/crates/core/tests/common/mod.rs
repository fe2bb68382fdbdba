#![allow(dead_code)]

use phmc_lar::model::{
    simulate_with_rng, Hyper, InitialLaw, LabelSet, LabeledSequence, LarParams, ModelParams, PhmcParams,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dirichlet(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Random model with strictly positive chain probabilities.
pub fn random_model(rng: &mut ChaCha8Rng, k: usize, p: usize) -> ModelParams {
    let lar = (0..k)
        .map(|_| {
            let mut phi: Vec<f64> = (0..=p)
                .map(|i| if i == 0 { rng.random_range(-2.0..2.0) } else { rng.random_range(-0.9..0.9) })
                .collect();
            // Keep the lag weights a contraction so the switching series stays bounded.
            let total: f64 = phi[1..].iter().map(|c| c.abs()).sum();
            if total > 0.9 {
                phi[1..].iter_mut().for_each(|c| *c *= 0.9 / total);
            }
            LarParams::new(phi, rng.random_range(0.3..2.0))
        })
        .collect();
    let cov = (0..p).map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    ModelParams {
        hyper: Hyper::new(k, p).unwrap(),
        phmc: PhmcParams { pi: dirichlet(rng, k), a: (0..k).map(|_| dirichlet(rng, k)).collect() },
        lar,
        g0: InitialLaw { mean: vec![0.0; p], cov },
    }
}

/// Random label set: hidden, the true state, a random singleton, or a random
/// subset containing the true state.
pub fn random_label(rng: &mut ChaCha8Rng, k: usize, truth: usize) -> LabelSet {
    match rng.random_range(0..4) {
        0 => LabelSet::full(k),
        1 => LabelSet::singleton(truth),
        2 => LabelSet::singleton(rng.random_range(0..k)),
        _ => {
            let mut states: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.5)).collect();
            states.push(truth);
            LabelSet::from_states(&states).unwrap()
        }
    }
}

/// Small instance within the oracle ranges: K <= 3, T <= 8, p <= 2.
pub fn small_instance(rng: &mut ChaCha8Rng) -> (ModelParams, LabeledSequence) {
    let k = rng.random_range(1..=3);
    let p = rng.random_range(1..=2);
    let t = rng.random_range(1..=8);
    let m = random_model(rng, k, p);
    let (states, seq) = simulate_with_rng(&m, t, rng).unwrap();
    let labels = states.iter().map(|&s| random_label(rng, k, s)).collect();
    (m, LabeledSequence::new(seq.initial, seq.series, labels).unwrap())
}

/// Keep each label of a fully labelled sequence with probability `keep`.
pub fn hide_labels(rng: &mut ChaCha8Rng, seq: &LabeledSequence, k: usize, keep: f64) -> LabeledSequence {
    let labels = seq.labels.iter().map(|&l| if rng.random_bool(keep) { l } else { LabelSet::full(k) }).collect();
    LabeledSequence::new(seq.initial.clone(), seq.series.clone(), labels).unwrap()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
