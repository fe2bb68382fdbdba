//! Model types, parameter validation, Gaussian LAR emissions and simulation.
//!
//! States are 0-based everywhere in this crate. The JSON formats in
//! [`crate::io`] are 1-based and convert at the boundary.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for every "sums to one" / symmetry check on parameters.
pub const PROB_TOL: f64 = 1e-9;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Number of states and autoregressive order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub k: usize,
    pub p: usize,
}

impl Hyper {
    pub fn new(k: usize, p: usize) -> Result<Self> {
        if k == 0 || p == 0 {
            return Err(Error::InvalidModel { reason: format!("K and p must be >= 1 (got K={k}, p={p})") });
        }
        if k > LabelSet::MAX_STATES {
            return Err(Error::InvalidModel {
                reason: format!("K={k} exceeds the supported maximum of {}", LabelSet::MAX_STATES),
            });
        }
        Ok(Self { k, p })
    }
}

/// Markov chain parameters: initial law and row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhmcParams {
    pub pi: Vec<f64>,
    /// `a[i][j] = P(S_t = j | S_{t-1} = i)`.
    pub a: Vec<Vec<f64>>,
}

impl PhmcParams {
    pub fn k(&self) -> usize {
        self.pi.len()
    }
}

/// Per-state LAR(p) parameters: `phi = (intercept, lag_1, .., lag_p)` and noise scale `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LarParams {
    pub phi: Vec<f64>,
    pub h: f64,
}

impl LarParams {
    pub fn new(phi: Vec<f64>, h: f64) -> Self {
        Self { phi, h }
    }

    pub fn order(&self) -> usize {
        self.phi.len().saturating_sub(1)
    }
}

/// Gaussian law of the `p` initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hyper: Hyper,
    pub phmc: PhmcParams,
    pub lar: Vec<LarParams>,
    pub g0: InitialLaw,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub fn p(&self) -> usize {
        self.hyper.p
    }

    /// Flattened `(pi, A, phi, h)` used for the EM convergence test.
    pub fn theta_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k() * (self.k() + self.p() + 3));
        out.extend_from_slice(&self.phmc.pi);
        for row in &self.phmc.a {
            out.extend_from_slice(row);
        }
        for lar in &self.lar {
            out.extend_from_slice(&lar.phi);
            out.push(lar.h);
        }
        out
    }
}

/// Admissible states at one time-step, as a bitmask over `0..K`.
///
/// A singleton means the state is observed; the full set means it is hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelSet(u64);

impl LabelSet {
    pub const MAX_STATES: usize = 64;

    pub fn full(k: usize) -> Self {
        assert!((1..=Self::MAX_STATES).contains(&k));
        if k == 64 {
            LabelSet(u64::MAX)
        } else {
            LabelSet((1u64 << k) - 1)
        }
    }

    pub fn singleton(state: usize) -> Self {
        assert!(state < Self::MAX_STATES);
        LabelSet(1u64 << state)
    }

    /// Build from a list of 0-based states. `None` if the list is empty or out of range.
    pub fn from_states(states: &[usize]) -> Option<Self> {
        let mut bits = 0u64;
        for &s in states {
            if s >= Self::MAX_STATES {
                return None;
            }
            bits |= 1u64 << s;
        }
        (bits != 0).then_some(LabelSet(bits))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, state: usize) -> bool {
        state < Self::MAX_STATES && self.0 & (1u64 << state) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// The observed state, when the set is a singleton.
    pub fn single(self) -> Option<usize> {
        (self.len() == 1).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn is_full(self, k: usize) -> bool {
        self == Self::full(k)
    }

    /// Largest state index in the set.
    pub fn max_state(self) -> Option<usize> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros() as usize)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let s = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(s)
            }
        })
    }
}

/// An observed series with its `p` initial values and per-step label sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    /// `x_{1-p}, .., x_0` in time order.
    pub initial: Vec<f64>,
    /// `x_1, .., x_T`.
    pub series: Vec<f64>,
    pub labels: Vec<LabelSet>,
}

impl LabeledSequence {
    pub fn new(initial: Vec<f64>, series: Vec<f64>, labels: Vec<LabelSet>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidSequence { reason: "series must have T >= 1".into() });
        }
        if labels.len() != series.len() {
            return Err(Error::InvalidSequence {
                reason: format!("{} labels for {} observations", labels.len(), series.len()),
            });
        }
        if labels.iter().any(|l| l.is_empty()) {
            return Err(Error::InvalidSequence { reason: "empty label set".into() });
        }
        Ok(Self { initial, series, labels })
    }

    /// A sequence whose states are all hidden.
    pub fn hidden(initial: Vec<f64>, series: Vec<f64>, k: usize) -> Result<Self> {
        let labels = vec![LabelSet::full(k); series.len()];
        Self::new(initial, series, labels)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// `x_{1-p}, .., x_T` as one contiguous vector.
    pub fn full_series(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.initial.len() + self.series.len());
        out.extend_from_slice(&self.initial);
        out.extend_from_slice(&self.series);
        out
    }

    /// Lag vector for 0-based step `t`, most recent first: `(x_{t-1}, .., x_{t-p})`.
    pub fn lags(&self, t: usize) -> Vec<f64> {
        let p = self.initial.len();
        (1..=p)
            .map(|i| {
                let idx = p + t - i;
                if idx < p {
                    self.initial[idx]
                } else {
                    self.series[idx - p]
                }
            })
            .collect()
    }

    /// The state path if every label is a singleton.
    pub fn observed_path(&self) -> Option<Vec<usize>> {
        self.labels.iter().map(|l| l.single()).collect()
    }

    /// Check dimensions and label range against a model.
    pub fn check_against(&self, m: &ModelParams) -> Result<()> {
        if self.initial.len() != m.p() {
            return Err(Error::DimensionMismatch { expected: m.p(), found: self.initial.len() });
        }
        if self.series.is_empty() || self.labels.len() != self.series.len() {
            return Err(Error::InvalidSequence {
                reason: format!("{} labels for {} observations", self.labels.len(), self.series.len()),
            });
        }
        for (t, l) in self.labels.iter().enumerate() {
            match l.max_state() {
                None => return Err(Error::InvalidSequence { reason: format!("empty label set at step {}", t + 1) }),
                Some(s) if s >= m.k() => {
                    return Err(Error::InvalidSequence {
                        reason: format!("label state {} at step {} exceeds K={}", s + 1, t + 1, m.k()),
                    })
                }
                _ => {}
            }
        }
        if self.initial.iter().chain(&self.series).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSequence { reason: "non-finite observation".into() });
        }
        Ok(())
    }
}

fn invalid(reason: impl Into<String>) -> Error {
    Error::InvalidModel { reason: reason.into() }
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() || !(-PROB_TOL..=1.0 + PROB_TOL).contains(&x) {
            return Err(invalid(format!("{what} entry {} = {x} outside [0, 1]", i + 1)));
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Check every parameter invariant; reports the first violation.
pub fn validate_model(m: &ModelParams) -> Result<()> {
    let Hyper { k, p } = m.hyper;
    Hyper::new(k, p)?;
    if m.phmc.pi.len() != k {
        return Err(invalid(format!("pi has {} entries, K={k}", m.phmc.pi.len())));
    }
    check_distribution(&m.phmc.pi, "pi")?;
    if m.phmc.a.len() != k {
        return Err(invalid(format!("A has {} rows, K={k}", m.phmc.a.len())));
    }
    for (i, row) in m.phmc.a.iter().enumerate() {
        if row.len() != k {
            return Err(invalid(format!("A row {} has {} entries, K={k}", i + 1, row.len())));
        }
        check_distribution(row, &format!("A row {}", i + 1))?;
    }
    if m.lar.len() != k {
        return Err(invalid(format!("{} LAR parameter sets for K={k}", m.lar.len())));
    }
    for (i, lar) in m.lar.iter().enumerate() {
        if lar.phi.len() != p + 1 {
            return Err(invalid(format!("state {} phi has {} entries, expected p+1={}", i + 1, lar.phi.len(), p + 1)));
        }
        if lar.phi.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("state {} phi is not finite", i + 1)));
        }
        if !(lar.h > 0.0 && lar.h.is_finite()) {
            return Err(invalid(format!("state {} has h = {} (must be > 0)", i + 1, lar.h)));
        }
    }
    validate_initial_law(&m.g0, p)
}

/// [`validate_model`] plus the stationarity constraint `|phi_i| < 1` on lag coefficients.
pub fn validate_model_strict(m: &ModelParams) -> Result<()> {
    validate_model(m)?;
    for (i, lar) in m.lar.iter().enumerate() {
        if let Some(c) = lar.phi[1..].iter().find(|c| c.abs() >= 1.0) {
            return Err(invalid(format!("state {} lag coefficient {c} violates |phi| < 1", i + 1)));
        }
    }
    Ok(())
}

fn validate_initial_law(g0: &InitialLaw, p: usize) -> Result<()> {
    if g0.mean.len() != p || g0.cov.len() != p || g0.cov.iter().any(|r| r.len() != p) {
        return Err(invalid(format!("g0 dimension must equal p={p}")));
    }
    if g0.mean.iter().chain(g0.cov.iter().flatten()).any(|x| !x.is_finite()) {
        return Err(invalid("g0 has non-finite entries"));
    }
    for i in 0..p {
        for j in 0..i {
            if (g0.cov[i][j] - g0.cov[j][i]).abs() > PROB_TOL {
                return Err(invalid("g0 covariance is not symmetric"));
            }
        }
    }
    let eig = cov_matrix(g0).symmetric_eigenvalues();
    if let Some(min) = eig.iter().copied().reduce(f64::min) {
        if min < -PROB_TOL {
            return Err(invalid(format!("g0 covariance has negative eigenvalue {min}")));
        }
    }
    Ok(())
}

fn cov_matrix(g0: &InitialLaw) -> DMatrix<f64> {
    let p = g0.dim();
    DMatrix::from_fn(p, p, |i, j| g0.cov[i][j])
}

/// `phi_0 + sum_i phi_i * lags[i-1]`, lags ordered most-recent-first.
pub fn emission_mean(lar: &LarParams, lags: &[f64]) -> Result<f64> {
    if lags.len() + 1 != lar.phi.len() {
        return Err(Error::DimensionMismatch { expected: lar.order(), found: lags.len() });
    }
    Ok(mean_unchecked(lar, lags))
}

#[inline]
pub(crate) fn mean_unchecked(lar: &LarParams, lags: &[f64]) -> f64 {
    lar.phi[0] + lar.phi[1..].iter().zip(lags).map(|(c, x)| c * x).sum::<f64>()
}

#[inline]
pub(crate) fn gaussian_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -sd.ln() - HALF_LN_2PI - 0.5 * z * z
}

/// Log of the Gaussian emission density of `x` given its lags.
pub fn emission_logdensity(lar: &LarParams, x: f64, lags: &[f64]) -> Result<f64> {
    let mean = emission_mean(lar, lags)?;
    Ok(gaussian_logpdf(x, mean, lar.h))
}

/// `T x K` table of `ln P(x_t | lags, S_t = k)`.
pub fn log_emission_table(m: &ModelParams, seq: &LabeledSequence) -> Vec<Vec<f64>> {
    let p = m.p();
    let full = seq.full_series();
    (0..seq.len())
        .map(|t| {
            // full[t..t+p] holds x_{t-p}..x_{t-1}; reverse to most-recent-first.
            let lags: Vec<f64> = full[t..t + p].iter().rev().copied().collect();
            let x = full[t + p];
            m.lar.iter().map(|lar| gaussian_logpdf(x, mean_unchecked(lar, &lags), lar.h)).collect()
        })
        .collect()
}

/// Cholesky factor of the initial-law covariance. A semi-definite covariance
/// gets 1e-12 added to its diagonal first.
fn g0_factor(g0: &InitialLaw) -> Result<DMatrix<f64>> {
    let p = g0.dim();
    let cov = cov_matrix(g0);
    if let Some(c) = nalgebra::Cholesky::new(cov.clone()) {
        return Ok(c.l());
    }
    nalgebra::Cholesky::new(cov + DMatrix::identity(p, p) * 1e-12)
        .map(|c| c.l())
        .ok_or_else(|| invalid("g0 covariance is not positive semi-definite"))
}

pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative total: take the last state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draw one `(states, sequence)` pair using a caller-supplied RNG.
pub fn simulate_with_rng<R: Rng + ?Sized>(
    m: &ModelParams,
    len: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, LabeledSequence)> {
    validate_model(m)?;
    if len == 0 {
        return Err(Error::InvalidSequence { reason: "series must have T >= 1".into() });
    }
    let p = m.p();
    let l = g0_factor(&m.g0)?;
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let init = DVector::from_vec(m.g0.mean.clone()) + l * z;
    let initial: Vec<f64> = init.iter().copied().collect();

    let mut full = initial.clone();
    full.reserve(len);
    let mut states: Vec<usize> = Vec::with_capacity(len);
    let mut lags = vec![0.0; p];
    for t in 0..len {
        let s = match states.last() {
            None => sample_index(rng, &m.phmc.pi),
            Some(&prev) => sample_index(rng, &m.phmc.a[prev]),
        };
        for (i, lag) in lags.iter_mut().enumerate() {
            *lag = full[p + t - 1 - i];
        }
        let lar = &m.lar[s];
        let eps: f64 = rng.sample(StandardNormal);
        full.push(mean_unchecked(lar, &lags) + lar.h * eps);
        states.push(s);
    }
    let series = full.split_off(p);
    let labels = states.iter().map(|&s| LabelSet::singleton(s)).collect();
    Ok((states, LabeledSequence { initial, series, labels }))
}

/// Simulate `len` steps; deterministic in `seed`. Labels are the true states.
pub fn simulate(m: &ModelParams, len: usize, seed: u64) -> Result<(Vec<usize>, LabeledSequence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(m, len, &mut rng)
}

/// The 4-state LAR(2) generator used by the synthetic experiments.
pub fn reference_model() -> ModelParams {
    ModelParams {
        hyper: Hyper { k: 4, p: 2 },
        phmc: PhmcParams {
            pi: vec![0.25; 4],
            a: vec![
                vec![0.5, 0.2, 0.1, 0.2],
                vec![0.2, 0.5, 0.2, 0.1],
                vec![0.1, 0.2, 0.5, 0.2],
                vec![0.2, 0.1, 0.2, 0.5],
            ],
        },
        lar: vec![
            LarParams::new(vec![2.0, 0.5, 0.75], 0.2),
            LarParams::new(vec![-2.0, -0.5, 0.75], 0.5),
            LarParams::new(vec![4.0, 0.5, -0.75], 0.7),
            LarParams::new(vec![-4.0, -0.5, -0.75], 0.9),
        ],
        g0: InitialLaw { mean: vec![3.0, 5.0], cov: vec![vec![1.0, 0.1], vec![0.1, 1.0]] },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_state(phi: Vec<f64>, h: f64) -> ModelParams {
        let p = phi.len() - 1;
        ModelParams {
            hyper: Hyper { k: 1, p },
            phmc: PhmcParams { pi: vec![1.0], a: vec![vec![1.0]] },
            lar: vec![LarParams::new(phi, h)],
            g0: InitialLaw { mean: vec![0.0; p], cov: vec![vec![0.0; p]; p] },
        }
    }

    #[test]
    fn reference_model_is_valid() {
        validate_model(&reference_model()).unwrap();
        validate_model_strict(&reference_model()).unwrap();
    }

    #[test]
    fn single_state_chain_is_valid() {
        validate_model(&single_state(vec![0.0, 0.0], 1.0)).unwrap();
    }

    #[test]
    fn rejects_substochastic_row() {
        let mut m = reference_model();
        m.hyper.k = 2;
        m.phmc.pi = vec![0.5, 0.5];
        m.phmc.a = vec![vec![0.5, 0.4], vec![0.5, 0.5]];
        m.lar.truncate(2);
        let err = validate_model(&m).unwrap_err();
        assert!(matches!(err, Error::InvalidModel { .. }), "{err}");
    }

    #[test]
    fn rejects_nonpositive_h_and_bad_dims() {
        let mut m = reference_model();
        m.lar[2].h = 0.0;
        assert!(validate_model(&m).is_err());
        let mut m = reference_model();
        m.lar[0].phi.pop();
        assert!(validate_model(&m).is_err());
        let mut m = reference_model();
        m.g0.mean.push(1.0);
        assert!(validate_model(&m).is_err());
        let mut m = reference_model();
        m.g0.cov = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(validate_model(&m).is_err());
    }

    #[test]
    fn strict_validation_checks_stationarity() {
        let mut m = reference_model();
        m.lar[1].phi[2] = 1.2;
        validate_model(&m).unwrap();
        assert!(validate_model_strict(&m).is_err());
    }

    #[test]
    fn emission_mean_examples() {
        let lar = LarParams::new(vec![2.0, 0.5, 0.75], 0.2);
        assert_abs_diff_eq!(emission_mean(&lar, &[1.0, 2.0]).unwrap(), 4.0, epsilon = 1e-15);
        let zero = LarParams::new(vec![0.0; 3], 1.0);
        assert_eq!(emission_mean(&zero, &[3.5, -7.0]).unwrap(), 0.0);
        let intercept = LarParams::new(vec![-1.25, 0.0, 0.0], 1.0);
        assert_eq!(emission_mean(&intercept, &[9.0, 4.0]).unwrap(), -1.25);
        assert!(matches!(emission_mean(&lar, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn emission_logdensity_examples() {
        let lar = LarParams::new(vec![2.0, 0.5, 0.75], 0.2);
        let v = emission_logdensity(&lar, 4.0, &[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(v, -(0.2f64).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.6905, epsilon = 1e-4);
        let unit = LarParams::new(vec![1.0, 0.0], 1.0);
        assert_abs_diff_eq!(emission_logdensity(&unit, 1.0, &[0.0]).unwrap(), -0.918_938_533_2, epsilon = 1e-9);
        assert_abs_diff_eq!(
            emission_logdensity(&unit, 2.0, &[0.0]).unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_simulation_stays_at_zero() {
        let m = single_state(vec![0.0, 0.0, 0.0], 1e-12);
        let (states, seq) = simulate(&m, 200, 3).unwrap();
        assert!(states.iter().all(|&s| s == 0));
        assert!(seq.series.iter().all(|x| x.abs() < 1e-9));
        // Point-mass g0 is regularized to sd 1e-6.
        assert!(seq.initial.iter().all(|x| x.abs() < 1e-4));
    }

    #[test]
    fn simulation_is_deterministic_in_seed() {
        let m = reference_model();
        let a = simulate(&m, 300, 42).unwrap();
        let b = simulate(&m, 300, 42).unwrap();
        let c = simulate(&m, 300, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1.series, c.1.series);
        assert_eq!(a.1.observed_path().unwrap(), a.0);
    }

    #[test]
    fn label_set_operations() {
        let full = LabelSet::full(4);
        assert_eq!(full.len(), 4);
        assert!(full.is_full(4));
        assert_eq!(full.iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let s = LabelSet::singleton(2);
        assert_eq!(s.single(), Some(2));
        assert!(s.contains(2) && !s.contains(1));
        assert_eq!(LabelSet::from_states(&[3, 0]).unwrap().iter().collect::<Vec<_>>(), vec![0, 3]);
        assert!(LabelSet::from_states(&[]).is_none());
        assert_eq!(LabelSet::full(64).len(), 64);
    }

    #[test]
    fn lags_are_most_recent_first() {
        let seq = LabeledSequence::hidden(vec![1.0, 2.0], vec![3.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(seq.lags(0), vec![2.0, 1.0]);
        assert_eq!(seq.lags(1), vec![3.0, 2.0]);
        assert_eq!(seq.lags(2), vec![4.0, 3.0]);
    }

    #[test]
    fn emission_table_matches_pointwise_density() {
        let m = reference_model();
        let (_, seq) = simulate(&m, 20, 9).unwrap();
        let table = log_emission_table(&m, &seq);
        for t in 0..seq.len() {
            for k in 0..4 {
                let direct = emission_logdensity(&m.lar[k], seq.series[t], &seq.lags(t)).unwrap();
                assert_abs_diff_eq!(table[t][k], direct, epsilon = 1e-12);
            }
        }
    }
}
