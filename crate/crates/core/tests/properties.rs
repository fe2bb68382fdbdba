mod common;

use common::{hide_labels, max_abs_diff, random_model, small_instance};
use phmc_lar::decode::{brute_force_decode, viterbi, viterbi_emissions};
use phmc_lar::em::{em_fit, m_step_s, m_step_x, m_step_x_quasi_newton, q_x, random_start, EmConfig};
use phmc_lar::experiments::{corrupt_labels, mask_labels, mpe, rmse_at_h, NoiseSpec};
use phmc_lar::forecast::forecast;
use phmc_lar::io::{model_from_json, model_to_json, sequence_from_json, sequence_to_json};
use phmc_lar::model::{
    emission_logdensity, emission_mean, log_emission_table, reference_model, simulate, LabelSet, LabeledSequence,
    LarParams,
};
use phmc_lar::smoothing::{brute_force_posterior, smooth, smooth_emissions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emission_density_integrates_to_one(
        phi in prop::collection::vec(-3.0f64..3.0, 3),
        lags in prop::collection::vec(-5.0f64..5.0, 2),
        h in 0.05f64..5.0,
    ) {
        let lar = LarParams::new(phi, h);
        let mean = emission_mean(&lar, &lags).unwrap();
        // Composite Simpson over mean ± 10h.
        let n = 4000;
        let (lo, hi) = (mean - 10.0 * h, mean + 10.0 * h);
        let dx = (hi - lo) / n as f64;
        let f = |x: f64| emission_logdensity(&lar, x, &lags).unwrap().exp();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * dx);
        }
        prop_assert!((s * dx / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn smoothing_matches_enumeration(seed in any::<u64>()) {
        let (m, seq) = small_instance(&mut rng(seed));
        match (smooth(&m, &seq), brute_force_posterior(&m, &seq)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.loglik - b.loglik).abs() < 1e-9);
                prop_assert!(max_abs_diff(&a.gamma, &b.gamma) < 1e-9);
                for (x, y) in a.xi.iter().zip(&b.xi) {
                    prop_assert!(max_abs_diff(x, y) < 1e-9);
                }
            }
            (a, b) => prop_assert_eq!(a.err().map(|e| e.kind()), b.err().map(|e| e.kind())),
        }
    }

    #[test]
    fn posteriors_respect_labels(seed in any::<u64>()) {
        let (m, seq) = small_instance(&mut rng(seed));
        if let Ok(post) = smooth(&m, &seq) {
            for (t, row) in post.gamma.iter().enumerate() {
                for (s, g) in row.iter().enumerate() {
                    if !seq.labels[t].contains(s) {
                        prop_assert_eq!(*g, 0.0);
                    }
                }
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn emission_rescaling_shifts_loglik_only(seed in any::<u64>(), step in 0usize..8, ln_c in -50.0f64..50.0) {
        let (m, seq) = small_instance(&mut rng(seed));
        let mut log_e = log_emission_table(&m, &seq);
        let Ok(base) = smooth_emissions(&m.phmc, &seq.labels, &log_e) else { return Ok(()); };
        let t = step % seq.len();
        log_e[t].iter_mut().for_each(|v| *v += ln_c);
        let scaled = smooth_emissions(&m.phmc, &seq.labels, &log_e).unwrap();
        prop_assert!((scaled.loglik - base.loglik - ln_c).abs() < 1e-10 * (1.0 + base.loglik.abs()));
        prop_assert!(max_abs_diff(&scaled.gamma, &base.gamma) < 1e-10);
        for (x, y) in scaled.xi.iter().zip(&base.xi) {
            prop_assert!(max_abs_diff(x, y) < 1e-10);
        }
    }

    #[test]
    fn viterbi_matches_enumeration(seed in any::<u64>()) {
        let (m, seq) = small_instance(&mut rng(seed));
        match (viterbi(&m, &seq), brute_force_decode(&m, &seq)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.states, &b.states);
                prop_assert!((a.log_joint - b.log_joint).abs() < 1e-10);
                for (t, &s) in a.states.iter().enumerate() {
                    prop_assert!(seq.labels[t].contains(s));
                }
            }
            (a, b) => prop_assert_eq!(a.err().map(|e| e.kind()), b.err().map(|e| e.kind())),
        }
    }

    #[test]
    fn revealing_optimal_state_keeps_score(seed in any::<u64>(), pick in any::<usize>()) {
        let (m, seq) = small_instance(&mut rng(seed));
        let Ok(best) = brute_force_decode(&m, &seq) else { return Ok(()); };
        let before = viterbi(&m, &seq).unwrap();
        let t = pick % seq.len();
        let mut labels = seq.labels.clone();
        labels[t] = LabelSet::singleton(best.states[t]);
        let log_e = log_emission_table(&m, &seq);
        let after = viterbi_emissions(&m.phmc, &labels, &log_e).unwrap();
        prop_assert!(after.log_joint >= before.log_joint - 1e-12);
    }

    #[test]
    fn chain_m_step_is_stochastic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_model(&mut r, 3, 1);
        let posts: Vec<_> = (0..3)
            .filter_map(|_| {
                let (_, seq) = phmc_lar::model::simulate_with_rng(&m, r.random_range(1..20), &mut r).unwrap();
                smooth(&m, &hide_labels(&mut r, &seq, 3, 0.3)).ok()
            })
            .collect();
        let up = m_step_s(&posts).unwrap();
        prop_assert!((up.params.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for row in &up.params.a {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forecasts_are_convex_combinations(seed in any::<u64>(), horizon in 1usize..8) {
        let mut r = rng(seed);
        let k = r.random_range(1..=4);
        let m = random_model(&mut r, k, 2);
        let (_, seq) = phmc_lar::model::simulate_with_rng(&m, 30, &mut r).unwrap();
        let seq = hide_labels(&mut r, &seq, k, 0.5);
        let future: Vec<LabelSet> = (0..horizon)
            .map(|_| if r.random_bool(0.5) { LabelSet::full(k) } else { LabelSet::singleton(r.random_range(0..k)) })
            .collect();
        let f = forecast(&m, &seq, horizon, &future).unwrap();
        let mut history = seq.full_series();
        for (h, x) in f.predictions.iter().enumerate() {
            let n = history.len();
            let lags = [history[n - 1], history[n - 2]];
            let means: Vec<f64> = m.lar.iter().map(|l| emission_mean(l, &lags).unwrap()).collect();
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
            prop_assert!(*x >= lo - tol && *x <= hi + tol);
            prop_assert!((f.state_weights[h].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if let Some(s) = future[h].single() {
                prop_assert!((x - means[s]).abs() <= tol);
            }
            history.push(*x);
        }
    }

    #[test]
    fn masking_and_corruption_are_reproducible(seed in any::<u64>(), percent in 0.0f64..=100.0, rho in 0.0f64..0.95) {
        let (_, seq) = simulate(&reference_model(), 50, seed).unwrap();
        let a = mask_labels(&seq, percent, 4, seed).unwrap();
        prop_assert_eq!(&a, &mask_labels(&seq, percent, 4, seed).unwrap());
        let kept = a.labels.iter().filter(|l| l.single().is_some()).count();
        prop_assert_eq!(kept, (percent * 50.0 / 100.0 + 0.5).floor() as usize);
        let noise = NoiseSpec::new(rho, seed);
        let b = corrupt_labels(&seq, &noise, 4).unwrap();
        prop_assert_eq!(&b, &corrupt_labels(&seq, &noise, 4).unwrap());
    }

    #[test]
    fn metrics_match_reference(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..6);
        let truth: Vec<Vec<usize>> = (0..n).map(|_| (0..r.random_range(1..30)).map(|_| r.random_range(0..4)).collect()).collect();
        let pred: Vec<Vec<usize>> = truth.iter().map(|s| s.iter().map(|&x| if r.random_bool(0.3) { r.random_range(0..4) } else { x }).collect()).collect();
        let mut reference = 0.0;
        for i in 0..n {
            let mut wrong = 0;
            for t in 0..truth[i].len() {
                if truth[i][t] != pred[i][t] {
                    wrong += 1;
                }
            }
            reference += wrong as f64 / truth[i].len() as f64;
        }
        prop_assert_eq!(mpe(&truth, &pred).unwrap(), reference / n as f64);

        let xs: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let mut sq = 0.0;
        for i in 0..n {
            sq += (xs[i] - ys[i]).powi(2);
        }
        prop_assert_eq!(rmse_at_h(&xs, &ys).unwrap(), (sq / n as f64).sqrt());
    }

    #[test]
    fn json_round_trip_is_exact(seed in any::<u64>()) {
        let (m, seq) = small_instance(&mut rng(seed));
        prop_assert_eq!(&model_from_json(&model_to_json(&m).unwrap()).unwrap(), &m);
        prop_assert_eq!(sequence_from_json(&sequence_to_json(&seq, m.k()).unwrap(), m.k()).unwrap(), seq);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn em_log_likelihood_never_decreases(seed in any::<u64>(), keep in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let m = reference_model();
        let data: Vec<LabeledSequence> = (0..3)
            .map(|_| {
                let (_, s) = phmc_lar::model::simulate_with_rng(&m, 60, &mut r).unwrap();
                hide_labels(&mut r, &s, 4, keep)
            })
            .collect();
        let start = random_start(&data, m.hyper, &mut r).unwrap();
        let cfg = EmConfig { max_iter: 40, restart_iters: 1, ..EmConfig::default() };
        let rep = em_fit(&data, m.hyper, &start, &cfg).unwrap();
        for w in rep.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn closed_form_m_step_beats_quasi_newton_and_perturbations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_model(&mut r, 2, 2);
        let data: Vec<LabeledSequence> = (0..2).map(|_| phmc_lar::model::simulate_with_rng(&m, 80, &mut r).unwrap().1).collect();
        let gammas: Vec<Vec<Vec<f64>>> = data
            .iter()
            .map(|s| (0..s.len()).map(|_| { let w = r.random_range(0.05..0.95); vec![w, 1.0 - w] }).collect())
            .collect();
        let closed = m_step_x(&data, &gammas, 2, None).unwrap().params;
        let best = q_x(&closed, &data, &gammas).unwrap();
        let qn = m_step_x_quasi_newton(&data, &gammas, &m.lar).unwrap();
        prop_assert!((q_x(&qn, &data, &gammas).unwrap() - best).abs() < 1e-6);
        for _ in 0..100 {
            let nudged: Vec<LarParams> = closed
                .iter()
                .map(|l| LarParams::new(l.phi.iter().map(|v| v + r.random_range(-0.05..0.05)).collect(), l.h * r.random_range(0.9..1.1)))
                .collect();
            prop_assert!(q_x(&nudged, &data, &gammas).unwrap() <= best);
        }
    }
}

#[test]
fn simulated_transition_frequencies_match_chain() {
    let m = reference_model();
    let (states, _) = simulate(&m, 100_001, 2024).unwrap();
    let mut counts = [[0usize; 4]; 4];
    for w in states.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    for i in 0..4 {
        let total: usize = counts[i].iter().sum();
        for j in 0..4 {
            let freq = counts[i][j] as f64 / total as f64;
            assert!((freq - m.phmc.a[i][j]).abs() < 0.01, "a[{i}][{j}]: {freq}");
        }
    }
}

#[test]
fn chain_estimate_from_large_labelled_corpus() {
    let m = reference_model();
    let posts: Vec<_> = (0..1000).map(|i| smooth(&m, &simulate(&m, 100, i).unwrap().1).unwrap()).collect();
    let up = m_step_s(&posts).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert!((up.params.a[i][j] - m.phmc.a[i][j]).abs() < 0.02);
        }
    }
}

#[test]
fn corruption_rate_matches_rho() {
    let (_, seq) = simulate(&reference_model(), 100_000, 5).unwrap();
    let noisy = corrupt_labels(&seq, &NoiseSpec::new(0.3, 11), 4).unwrap();
    let changed = seq.labels.iter().zip(&noisy.labels).filter(|(a, b)| a != b).count();
    assert!((changed as f64 / 1e5 - 0.3).abs() < 0.01);
}
