//! Label masking and noise, evaluation metrics, and seeded experiment runners.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::viterbi;
use crate::em::{train, EmConfig};
use crate::error::{Error, Result};
use crate::forecast::forecast;
use crate::model::{reference_model, simulate_with_rng, LabelSet, LabeledSequence, ModelParams};

/// Default spread of the per-step labelling error probability.
pub const DEFAULT_NOISE_SD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Mean labelling error probability, in `[0, 1)`.
    pub rho: f64,
    /// Standard deviation of the per-step error probability.
    pub sd: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(rho: f64, seed: u64) -> Self {
        NoiseSpec { rho, sd: DEFAULT_NOISE_SD, seed }
    }

    /// Beta shape parameters with the requested mean, or `None` when the
    /// error probability is constant. An infeasible spread is clamped to 95%
    /// of its upper bound.
    pub fn beta_shapes(&self) -> Result<Option<(f64, f64)>> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.sd >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise sd must be >= 0, got {}", self.sd)));
        }
        let bound = self.rho * (1.0 - self.rho);
        if self.rho == 0.0 || self.sd == 0.0 {
            return Ok(None);
        }
        let mut sd = self.sd;
        if sd * sd >= bound {
            sd = 0.95 * bound.sqrt();
            log::info!("noise sd {} infeasible for rho {}; clamped to {sd}", self.sd, self.rho);
        }
        let nu = bound / (sd * sd) - 1.0;
        Ok(Some((self.rho * nu, (1.0 - self.rho) * nu)))
    }
}

fn require_singletons(seq: &LabeledSequence) -> Result<Vec<usize>> {
    seq.observed_path().ok_or_else(|| Error::InvalidSequence { reason: "expected a fully labelled sequence".into() })
}

/// Keep `round(P·T/100)` uniformly chosen labels and hide the rest.
///
/// For a fixed seed the kept positions are nested as `percent` grows.
pub fn mask_labels(seq: &LabeledSequence, percent: f64, k: usize, seed: u64) -> Result<LabeledSequence> {
    require_singletons(seq)?;
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::InvalidConfig(format!("label percentage must lie in [0, 100], got {percent}")));
    }
    let n = seq.len();
    let keep = (percent * n as f64 / 100.0 + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![LabelSet::full(k); n];
    for &t in &order[..keep.min(n)] {
        labels[t] = seq.labels[t];
    }
    LabeledSequence::new(seq.initial.clone(), seq.series.clone(), labels)
}

/// Replace each label, with a per-step Beta-distributed probability, by a
/// uniform draw over the other `k - 1` states.
pub fn corrupt_labels(seq: &LabeledSequence, noise: &NoiseSpec, k: usize) -> Result<LabeledSequence> {
    let path = require_singletons(seq)?;
    let shapes = noise.beta_shapes()?;
    if noise.rho == 0.0 || k < 2 {
        return Ok(seq.clone());
    }
    let beta = match shapes {
        Some((a, b)) => Some(Beta::new(a, b).map_err(|e| Error::InvalidConfig(e.to_string()))?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let labels = path
        .iter()
        .map(|&s| {
            let p_t = beta.as_ref().map_or(noise.rho, |b| b.sample(&mut rng));
            if rng.random::<f64>() < p_t {
                let other = rng.random_range(0..k - 1);
                LabelSet::singleton(if other >= s { other + 1 } else { other })
            } else {
                LabelSet::singleton(s)
            }
        })
        .collect();
    LabeledSequence::new(seq.initial.clone(), seq.series.clone(), labels)
}

/// Mean over sequences of the fraction of mismatched states.
pub fn mpe(truth: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} true vs {} predicted sequences", truth.len(), pred.len())));
    }
    let mut total = 0.0;
    for (a, b) in truth.iter().zip(pred) {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::ShapeMismatch(format!("sequence lengths {} and {}", a.len(), b.len())));
        }
        total += a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64;
    }
    Ok(total / truth.len() as f64)
}

/// Root mean squared error across replicates.
pub fn rmse_at_h(truths: &[f64], preds: &[f64]) -> Result<f64> {
    if truths.len() != preds.len() || truths.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} truths vs {} predictions", truths.len(), preds.len())));
    }
    let sq: f64 = truths.iter().zip(preds).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sq / truths.len() as f64).sqrt())
}

/// Independent RNG stream for one purpose and job.
fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) ^ (a << 28) ^ b);
    rng
}

const GEN_TRAIN: u64 = 1;
const GEN_TEST: u64 = 2;
const LABELS: u64 = 3;
const FIT: u64 = 4;
const TEST_LABELS: u64 = 5;

/// Which training or test condition a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Percentage of labelled training observations.
    Labelled,
    /// Mean labelling error probability on fully labelled training data.
    Noise,
    /// Percentage of labelled test observations, at a fixed training percentage.
    TestLabelled,
}

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub generator: ModelParams,
    pub sweep: SweepKind,
    pub values: Vec<f64>,
    pub train_sequences: usize,
    pub train_length: usize,
    pub replicates: usize,
    pub test_sequences: usize,
    pub test_length: usize,
    /// Training label percentage used by the test-label sweep.
    pub train_percent: f64,
    /// Test label percentage used by the other sweeps.
    pub test_percent: f64,
    pub noise_sd: f64,
    pub em: EmConfig,
    pub seed: u64,
}

impl InferenceConfig {
    pub fn new(sweep: SweepKind, values: Vec<f64>) -> Self {
        InferenceConfig {
            generator: reference_model(),
            sweep,
            values,
            train_sequences: 10,
            train_length: 100,
            replicates: 5,
            test_sequences: 20,
            test_length: 200,
            train_percent: 10.0,
            test_percent: 0.0,
            noise_sd: DEFAULT_NOISE_SD,
            em: EmConfig::default(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.em.validate()?;
        crate::model::validate_model(&self.generator)?;
        if self.values.is_empty() || self.replicates == 0 || self.train_sequences == 0 || self.test_sequences == 0 {
            return Err(Error::InvalidConfig("sweep values, replicates and corpus sizes must be non-empty".into()));
        }
        if self.train_length == 0 || self.test_length == 0 {
            return Err(Error::InvalidConfig("sequence lengths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceRow {
    pub sweep_value: f64,
    pub replicate: usize,
    pub mpe: Option<f64>,
    pub em_iterations: Option<usize>,
    pub train_loglik: Option<f64>,
    /// `ok`, or the error kind that aborted the replicate.
    pub status: String,
}

fn corpus(
    m: &ModelParams,
    count: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Vec<usize>, LabeledSequence)>> {
    (0..count).map(|_| simulate_with_rng(m, len, rng)).collect()
}

fn relabel(
    cfg_seed: u64,
    data: &[(Vec<usize>, LabeledSequence)],
    value_idx: usize,
    replicate: usize,
    k: usize,
    f: impl Fn(&LabeledSequence, u64, usize) -> Result<LabeledSequence>,
) -> Result<Vec<LabeledSequence>> {
    let mut rng = stream(cfg_seed, LABELS, value_idx as u64, replicate as u64);
    data.iter().map(|(_, s)| f(s, rng.random(), k)).collect()
}

fn decode_all(model: &ModelParams, test: &[LabeledSequence]) -> Result<Vec<Vec<usize>>> {
    test.iter().map(|s| viterbi(model, s).map(|d| d.states)).collect()
}

/// Train under each sweep value and replicate, decode the test corpus and
/// report MPE, EM iterations and the training log-likelihood.
///
/// Training and test corpora are simulated once; replicates differ by which
/// labels are kept or corrupted. The EM seed depends on the replicate only,
/// so a noise-free run reproduces the fully labelled run.
pub fn run_inference_experiment(cfg: &InferenceConfig) -> Result<Vec<InferenceRow>> {
    cfg.validate()?;
    let k = cfg.generator.k();
    let hyper = cfg.generator.hyper;
    let train_set =
        corpus(&cfg.generator, cfg.train_sequences, cfg.train_length, &mut stream(cfg.seed, GEN_TRAIN, 0, 0))?;
    let test_set = corpus(&cfg.generator, cfg.test_sequences, cfg.test_length, &mut stream(cfg.seed, GEN_TEST, 0, 0))?;
    let test_truth: Vec<Vec<usize>> = test_set.iter().map(|(s, _)| s.clone()).collect();

    let test_masked = |percent: f64, replicate: usize| -> Result<Vec<LabeledSequence>> {
        let mut rng = stream(cfg.seed, TEST_LABELS, 0, replicate as u64);
        test_set.iter().map(|(_, s)| mask_labels(s, percent, k, rng.random())).collect()
    };
    let fit_cfg =
        |replicate: usize| EmConfig { seed: stream(cfg.seed, FIT, 0, replicate as u64).random(), ..cfg.em.clone() };

    let row =
        |value: f64, replicate: usize, outcome: std::result::Result<(f64, usize, f64), &'static str>| match outcome {
            Ok((mpe, it, ll)) => InferenceRow {
                sweep_value: value,
                replicate,
                mpe: Some(mpe),
                em_iterations: Some(it),
                train_loglik: Some(ll),
                status: "ok".into(),
            },
            Err(e) => InferenceRow {
                sweep_value: value,
                replicate,
                mpe: None,
                em_iterations: None,
                train_loglik: None,
                status: e.into(),
            },
        };

    if cfg.sweep == SweepKind::TestLabelled {
        // Training does not depend on the sweep value: one fit per replicate.
        let per_rep: Vec<Vec<InferenceRow>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let fit =
                    relabel(cfg.seed, &train_set, 0, r, k, |s, seed, k| mask_labels(s, cfg.train_percent, k, seed))
                        .and_then(|data| train(&data, hyper, &fit_cfg(r)));
                cfg.values
                    .iter()
                    .map(|&q| {
                        let outcome = fit.as_ref().map_err(|e| e.kind()).and_then(|rep| {
                            let scored = (|| {
                                let pred = decode_all(&rep.model, &test_masked(q, r)?)?;
                                mpe(&test_truth, &pred)
                            })();
                            scored.map(|m| (m, rep.iterations, rep.final_loglik())).map_err(|e| e.kind())
                        });
                        row(q, r, outcome)
                    })
                    .collect()
            })
            .collect();
        // Order rows by sweep value, then replicate.
        let mut rows = Vec::new();
        for v in 0..cfg.values.len() {
            rows.extend(per_rep.iter().map(|rs| rs[v].clone()));
        }
        return Ok(rows);
    }

    let jobs: Vec<(usize, usize)> =
        (0..cfg.values.len()).flat_map(|v| (0..cfg.replicates).map(move |r| (v, r))).collect();
    let rows = jobs
        .into_par_iter()
        .map(|(v, r)| {
            let value = cfg.values[v];
            let outcome = (|| {
                let data = match cfg.sweep {
                    SweepKind::Labelled => {
                        relabel(cfg.seed, &train_set, v, r, k, |s, seed, k| mask_labels(s, value, k, seed))?
                    }
                    _ => relabel(cfg.seed, &train_set, v, r, k, |s, seed, k| {
                        corrupt_labels(s, &NoiseSpec { rho: value, sd: cfg.noise_sd, seed }, k)
                    })?,
                };
                let rep = train(&data, hyper, &fit_cfg(r))?;
                let pred = decode_all(&rep.model, &test_masked(cfg.test_percent, r)?)?;
                Ok((mpe(&test_truth, &pred)?, rep.iterations, rep.final_loglik()))
            })();
            row(value, r, outcome.map_err(|e: Error| e.kind()))
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ForecastConfig {
    pub generator: ModelParams,
    /// `Labelled` or `Noise`.
    pub sweep: SweepKind,
    pub values: Vec<f64>,
    /// Training prefix length.
    pub train_length: usize,
    pub horizon: usize,
    pub replicates: usize,
    pub noise_sd: f64,
    pub em: EmConfig,
    pub seed: u64,
}

impl ForecastConfig {
    pub fn new(sweep: SweepKind, values: Vec<f64>) -> Self {
        ForecastConfig {
            generator: reference_model(),
            sweep,
            values,
            train_length: 100,
            horizon: 10,
            replicates: 5,
            noise_sd: DEFAULT_NOISE_SD,
            em: EmConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    Known,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub sweep_value: f64,
    pub h: usize,
    pub mode: StateMode,
    pub rmse: Option<f64>,
    /// Replicates that trained and forecast successfully.
    pub replicates_ok: usize,
}

/// Forecast errors `(known, unknown)` at horizons `1..=H` for one replicate.
type ReplicateErrors = (Vec<f64>, Vec<f64>);

/// Train on a labelled prefix of one simulated sequence, forecast the next
/// `H` steps with future states hidden and known, and report RMSE per horizon
/// across replicates.
pub fn run_forecast_experiment(cfg: &ForecastConfig) -> Result<Vec<ForecastRow>> {
    cfg.em.validate()?;
    if cfg.horizon == 0 {
        return Err(Error::InvalidConfig("forecast horizon must be >= 1".into()));
    }
    if cfg.values.is_empty() || cfg.replicates == 0 || cfg.train_length == 0 {
        return Err(Error::InvalidConfig("sweep values, replicates and prefix length must be non-empty".into()));
    }
    if cfg.sweep == SweepKind::TestLabelled {
        return Err(Error::InvalidConfig("forecast sweeps vary training labels or noise only".into()));
    }
    let k = cfg.generator.k();
    let hyper = cfg.generator.hyper;
    let total = cfg.train_length + cfg.horizon;
    let (states, full) = simulate_with_rng(&cfg.generator, total, &mut stream(cfg.seed, GEN_TRAIN, 0, 0))?;
    let n = cfg.train_length;
    let prefix = LabeledSequence::new(full.initial.clone(), full.series[..n].to_vec(), full.labels[..n].to_vec())?;
    let prefix = [(states[..n].to_vec(), prefix)];
    let truth = &full.series[n..];
    let known: Vec<LabelSet> = states[n..].iter().map(|&s| LabelSet::singleton(s)).collect();
    let hidden = vec![LabelSet::full(k); cfg.horizon];

    let jobs: Vec<(usize, usize)> =
        (0..cfg.values.len()).flat_map(|v| (0..cfg.replicates).map(move |r| (v, r))).collect();
    let results: Vec<Result<ReplicateErrors>> = jobs
        .par_iter()
        .map(|&(v, r)| {
            let value = cfg.values[v];
            let data = match cfg.sweep {
                SweepKind::Labelled => {
                    relabel(cfg.seed, &prefix, v, r, k, |s, seed, k| mask_labels(s, value, k, seed))?
                }
                _ => relabel(cfg.seed, &prefix, v, r, k, |s, seed, k| {
                    corrupt_labels(s, &NoiseSpec { rho: value, sd: cfg.noise_sd, seed }, k)
                })?,
            };
            let em = EmConfig { seed: stream(cfg.seed, FIT, 0, r as u64).random(), ..cfg.em.clone() };
            let rep = train(&data, hyper, &em)?;
            let with_known = forecast(&rep.model, &data[0], cfg.horizon, &known)?;
            let with_hidden = forecast(&rep.model, &data[0], cfg.horizon, &hidden)?;
            Ok((with_known.predictions, with_hidden.predictions))
        })
        .collect();

    let mut rows = Vec::new();
    for (v, &value) in cfg.values.iter().enumerate() {
        let ok: Vec<&ReplicateErrors> =
            results[v * cfg.replicates..(v + 1) * cfg.replicates].iter().filter_map(|r| r.as_ref().ok()).collect();
        for mode in [StateMode::Known, StateMode::Unknown] {
            for h in 0..cfg.horizon {
                let preds: Vec<f64> =
                    ok.iter().map(|(kn, un)| if mode == StateMode::Known { kn[h] } else { un[h] }).collect();
                let truths = vec![truth[h]; preds.len()];
                let rmse = if preds.is_empty() { None } else { Some(rmse_at_h(&truths, &preds)?) };
                rows.push(ForecastRow { sweep_value: value, h: h + 1, mode, rmse, replicates_ok: ok.len() });
            }
        }
    }
    Ok(rows)
}

/// Write rows as CSV with a header line.
pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;

    fn labelled(t: usize, seed: u64) -> LabeledSequence {
        simulate(&reference_model(), t, seed).unwrap().1
    }

    fn observed(seq: &LabeledSequence) -> usize {
        seq.labels.iter().filter(|l| l.single().is_some()).count()
    }

    #[test]
    fn mask_extremes_and_counts() {
        let seq = labelled(100, 1);
        assert_eq!(observed(&mask_labels(&seq, 0.0, 4, 5).unwrap()), 0);
        assert_eq!(mask_labels(&seq, 100.0, 4, 5).unwrap(), seq);
        assert_eq!(observed(&mask_labels(&seq, 50.0, 4, 5).unwrap()), 50);
        // round-half-up: 2.5 -> 3
        let short = labelled(5, 2);
        assert_eq!(observed(&mask_labels(&short, 50.0, 4, 1).unwrap()), 3);
    }

    #[test]
    fn masks_are_nested_and_reproducible() {
        let seq = labelled(60, 3);
        let a = mask_labels(&seq, 25.0, 4, 9).unwrap();
        let b = mask_labels(&seq, 75.0, 4, 9).unwrap();
        assert_eq!(a, mask_labels(&seq, 25.0, 4, 9).unwrap());
        for (x, y) in a.labels.iter().zip(&b.labels) {
            if x.single().is_some() {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn corruption_changes_state_when_applied() {
        let seq = labelled(2000, 4);
        let noisy = corrupt_labels(&seq, &NoiseSpec::new(0.5, 3), 4).unwrap();
        assert!(noisy.labels.iter().all(|l| l.single().is_some()));
        let changed = seq.labels.iter().zip(&noisy.labels).filter(|(a, b)| a != b).count();
        assert!(changed > 800 && changed < 1200, "{changed}");
        assert_eq!(corrupt_labels(&seq, &NoiseSpec::new(0.0, 3), 4).unwrap(), seq);
    }

    #[test]
    fn beta_shapes_match_mean_and_clamp() {
        let (a, b) = NoiseSpec::new(0.3, 0).beta_shapes().unwrap().unwrap();
        assert!((a / (a + b) - 0.3).abs() < 1e-12);
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        assert!((var.sqrt() - 0.2).abs() < 1e-12);
        // 0.2² exceeds 0.03·0.97, so the spread is clamped.
        let (a, b) = NoiseSpec::new(0.03, 0).beta_shapes().unwrap().unwrap();
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        assert!((var.sqrt() - 0.95 * (0.03_f64 * 0.97).sqrt()).abs() < 1e-12);
        assert!(NoiseSpec::new(1.0, 0).beta_shapes().is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mpe(&[vec![0, 1, 2, 3]], &[vec![0, 1, 2, 0]]).unwrap(), 0.25);
        assert_eq!(mpe(&[vec![0, 1]], &[vec![1, 0]]).unwrap(), 1.0);
        assert_eq!(rmse_at_h(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(rmse_at_h(&[3.0], &[0.0]).unwrap(), 3.0);
        assert!(matches!(mpe(&[vec![0]], &[]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(rmse_at_h(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_horizon_rejected() {
        let mut cfg = ForecastConfig::new(SweepKind::Labelled, vec![100.0]);
        cfg.horizon = 0;
        assert!(matches!(run_forecast_experiment(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn noise_free_run_equals_fully_labelled_run() {
        let small = |sweep, values| {
            let mut c = InferenceConfig::new(sweep, values);
            c.train_sequences = 2;
            c.train_length = 40;
            c.test_sequences = 2;
            c.test_length = 30;
            c.replicates = 2;
            c.em = EmConfig { max_iter: 20, restarts: 2, restart_iters: 3, ..EmConfig::default() };
            c
        };
        let a = run_inference_experiment(&small(SweepKind::Labelled, vec![100.0])).unwrap();
        let b = run_inference_experiment(&small(SweepKind::Noise, vec![0.0])).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.mpe, x.em_iterations, x.train_loglik), (y.mpe, y.em_iterations, y.train_loglik));
        }
        let again = run_inference_experiment(&small(SweepKind::Labelled, vec![100.0])).unwrap();
        assert_eq!(a, again);
    }
}
