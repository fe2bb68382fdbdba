//! EM estimation: chain and emission M-steps, initial-law MLE, the main loop
//! and multi-restart initialization.

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::condition::ArmijoCondition;
use argmin::solver::linesearch::BacktrackingLineSearch;
use argmin::solver::quasinewton::BFGS;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    gaussian_logpdf, mean_unchecked, validate_model, Hyper, InitialLaw, LabeledSequence, LarParams, ModelParams,
    PhmcParams,
};
use crate::smoothing::{smooth, Posteriors};

const QN_ROUNDS: usize = 50;
const QN_ROUND_ITERS: u64 = 50;
const QN_GRAD_TOL: f64 = 1e-10;
const QN_EVAL_BUDGET: usize = 5_000;

/// Ridge added to a singular weighted normal matrix.
pub const RIDGE: f64 = 1e-8;
/// Noise scale floor, relative to the pooled series standard deviation.
pub const H_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub kappa: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub restart_iters: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { kappa: 1e-6, max_iter: 500, restarts: 5, restart_iters: 10, seed: 0 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidConfig(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if self.max_iter == 0 || self.restarts == 0 || self.restart_iters == 0 {
            return Err(Error::InvalidConfig("max_iter, restarts and restart_iters must be >= 1".into()));
        }
        if self.max_iter < self.restart_iters {
            return Err(Error::InvalidConfig(format!(
                "max_iter ({}) must be >= restart_iters ({})",
                self.max_iter, self.restart_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: ModelParams,
    /// Total log-likelihood after each E-step, including one final evaluation
    /// of the returned model.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// States whose transition row was reset to uniform at some iteration.
    pub starved_states: Vec<usize>,
    /// States whose regression needed the ridge fallback at some iteration.
    pub ridge_states: Vec<usize>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainUpdate {
    pub params: PhmcParams,
    pub starved: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LarUpdate {
    pub params: Vec<LarParams>,
    /// States with zero total weight; they kept their previous parameters.
    pub starved: Vec<usize>,
    /// States whose normal equations were singular and got the ridge.
    pub ridge: Vec<usize>,
}

/// Maximum-likelihood Gaussian for the initial values (1/N covariance).
pub fn fit_g0(initials: &[Vec<f64>]) -> Result<InitialLaw> {
    let first = initials.first().ok_or(Error::EmptyInput("initial values"))?;
    let p = first.len();
    if let Some(bad) = initials.iter().find(|v| v.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, found: bad.len() });
    }
    let n = initials.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| initials.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; p]; p];
    for v in initials {
        for i in 0..p {
            for j in 0..p {
                cov[i][j] += (v[i] - mean[i]) * (v[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);
    Ok(InitialLaw { mean, cov })
}

/// Transition matrix and initial distribution from posteriors.
///
/// Row `k` of the raw estimate divides transition mass by the total weight of
/// `k` over all steps, then is renormalized. Rows with no outgoing mass become
/// uniform and are reported as starved.
pub fn m_step_s(posteriors: &[Posteriors]) -> Result<ChainUpdate> {
    let first = posteriors.first().ok_or(Error::EmptyInput("posteriors"))?;
    let k = first.gamma.first().map(Vec::len).ok_or(Error::EmptyInput("posterior rows"))?;
    let mut num = vec![vec![0.0; k]; k];
    let mut den = vec![0.0; k];
    let mut pi = vec![0.0; k];
    for post in posteriors {
        if post.gamma.is_empty() || post.gamma.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("posterior rows differ in width".into()));
        }
        if post.xi.len() + 1 != post.gamma.len() {
            return Err(Error::ShapeMismatch(format!("{} xi slices for {} steps", post.xi.len(), post.gamma.len())));
        }
        for (s, g) in post.gamma[0].iter().enumerate() {
            pi[s] += g;
        }
        for row in &post.gamma {
            for (s, g) in row.iter().enumerate() {
                den[s] += g;
            }
        }
        for slice in &post.xi {
            for (i, row) in slice.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    num[i][j] += v;
                }
            }
        }
    }
    let n = posteriors.len() as f64;
    pi.iter_mut().for_each(|v| *v /= n);
    let pi_total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= pi_total);

    let mut starved = Vec::new();
    let a = num
        .into_iter()
        .enumerate()
        .map(|(s, row)| {
            let raw: Vec<f64> = if den[s] > 0.0 { row.iter().map(|v| v / den[s]).collect() } else { row };
            let total: f64 = raw.iter().sum();
            if den[s] > 0.0 && total > 0.0 {
                raw.iter().map(|v| v / total).collect()
            } else {
                starved.push(s);
                vec![1.0 / k as f64; k]
            }
        })
        .collect();
    Ok(ChainUpdate { params: PhmcParams { pi, a }, starved })
}

fn check_gammas(data: &[LabeledSequence], gammas: &[Vec<Vec<f64>>], k: usize) -> Result<()> {
    if data.len() != gammas.len() {
        return Err(Error::ShapeMismatch(format!("{} sequences but {} posterior tables", data.len(), gammas.len())));
    }
    for (seq, g) in data.iter().zip(gammas) {
        if g.len() != seq.len() || g.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("posterior table does not match its sequence".into()));
        }
    }
    Ok(())
}

/// Posterior-weighted emission log-likelihood.
pub fn q_x(lar: &[LarParams], data: &[LabeledSequence], gammas: &[Vec<Vec<f64>>]) -> Result<f64> {
    check_gammas(data, gammas, lar.len())?;
    let mut total = 0.0;
    for (seq, g) in data.iter().zip(gammas) {
        for (t, row) in g.iter().enumerate() {
            let lags = seq.lags(t);
            if lags.len() + 1 != lar[0].phi.len() {
                return Err(Error::DimensionMismatch { expected: lar[0].phi.len() - 1, found: lags.len() });
            }
            for (w, l) in row.iter().zip(lar) {
                if *w != 0.0 {
                    total += w * gaussian_logpdf(seq.series[t], mean_unchecked(l, &lags), l.h);
                }
            }
        }
    }
    Ok(total)
}

fn pooled_sd(data: &[LabeledSequence]) -> f64 {
    let n: usize = data.iter().map(|s| s.series.len()).sum();
    if n == 0 {
        return 0.0;
    }
    let mean = data.iter().flat_map(|s| &s.series).sum::<f64>() / n as f64;
    let var = data.iter().flat_map(|s| &s.series).map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt()
}

fn design_row(seq: &LabeledSequence, t: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(seq.initial.len() + 1);
    y.push(1.0);
    y.extend(seq.lags(t));
    y
}

/// Solve the weighted normal equations, adding the ridge when they are
/// numerically singular. Returns the coefficients and whether the ridge was used.
fn solve_normal(mut xtx: DMatrix<f64>, xty: DVector<f64>) -> (DVector<f64>, bool) {
    let eig = xtx.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let singular = !(min > max * 1e-13);
    if !singular {
        if let Some(ch) = xtx.clone().cholesky() {
            return (ch.solve(&xty), false);
        }
    }
    let n = xtx.nrows();
    xtx += DMatrix::identity(n, n) * RIDGE;
    let sol = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx.pseudo_inverse(1e-15).map(|inv| inv * &xty).unwrap_or_else(|_| DVector::zeros(n)),
    };
    (sol, true)
}

/// Closed-form emission M-step: weighted least squares per state, then the
/// weighted mean squared residual for `h²`.
///
/// States with zero total weight keep `previous` parameters; without
/// `previous` they are an error. `h` is floored at a small fraction of the
/// pooled series standard deviation.
pub fn m_step_x(
    data: &[LabeledSequence],
    gammas: &[Vec<Vec<f64>>],
    k: usize,
    previous: Option<&[LarParams]>,
) -> Result<LarUpdate> {
    check_gammas(data, gammas, k)?;
    let p = data.first().ok_or(Error::EmptyInput("sequences"))?.initial.len();
    if let Some(bad) = data.iter().find(|s| s.initial.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, found: bad.initial.len() });
    }
    let d = p + 1;
    let h_floor = (H_FLOOR_REL * pooled_sd(data)).max(f64::MIN_POSITIVE);
    let mut params = Vec::with_capacity(k);
    let mut starved = Vec::new();
    let mut ridge = Vec::new();
    for s in 0..k {
        let mut xtx = DMatrix::<f64>::zeros(d, d);
        let mut xty = DVector::<f64>::zeros(d);
        let mut weight = 0.0;
        for (seq, g) in data.iter().zip(gammas) {
            for (t, row) in g.iter().enumerate() {
                let w = row[s];
                if w == 0.0 {
                    continue;
                }
                let y = DVector::from_vec(design_row(seq, t));
                xtx.ger(w, &y, &y, 1.0);
                xty.axpy(w * seq.series[t], &y, 1.0);
                weight += w;
            }
        }
        if !(weight > 0.0) {
            match previous {
                Some(prev) => {
                    starved.push(s);
                    params.push(prev[s].clone());
                    continue;
                }
                None => return Err(Error::StarvedState { state: s }),
            }
        }
        let (phi, used_ridge) = solve_normal(xtx, xty);
        if used_ridge {
            ridge.push(s);
        }
        let phi: Vec<f64> = phi.iter().copied().collect();
        let lar = LarParams::new(phi, 1.0);
        let mut sq = 0.0;
        for (seq, g) in data.iter().zip(gammas) {
            for (t, row) in g.iter().enumerate() {
                let w = row[s];
                if w != 0.0 {
                    let r = seq.series[t] - mean_unchecked(&lar, &seq.lags(t));
                    sq += w * r * r;
                }
            }
        }
        let h = (sq / weight).sqrt().max(h_floor);
        params.push(LarParams::new(lar.phi, h));
    }
    Ok(LarUpdate { params, starved, ridge })
}

/// Negative weighted log-likelihood of one state over `(phi, ln h)`, scaled
/// by the total weight.
struct StateObjective {
    rows: Vec<(Vec<f64>, f64, f64)>,
    weight: f64,
    evals: std::cell::Cell<usize>,
    best: std::cell::RefCell<Option<(f64, Vec<f64>)>>,
}

impl StateObjective {
    /// Abort the running optimizer on non-finite input or an exhausted budget;
    /// its line search would otherwise never return.
    fn guard(&self, theta: &[f64]) -> std::result::Result<(), argmin::core::Error> {
        self.evals.set(self.evals.get() + 1);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(argmin::core::Error::msg("non-finite parameter"));
        }
        if self.evals.get() > QN_EVAL_BUDGET {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        Ok(())
    }
}

impl StateObjective {
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = theta.len() - 1;
        let u = theta[d];
        let inv_var = (-2.0 * u).exp();
        let mut cost = 0.0;
        let mut grad = vec![0.0; d + 1];
        for (y, x, w) in &self.rows {
            let r = x - y.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            cost += w * (u + 0.5 * r * r * inv_var);
            for j in 0..d {
                grad[j] -= w * r * y[j] * inv_var;
            }
            grad[d] += w * (1.0 - r * r * inv_var);
        }
        grad.iter_mut().for_each(|g| *g /= self.weight);
        (cost / self.weight, grad)
    }
}

impl StateObjective {
    /// Inverse of the exact Hessian, falling back to its block-diagonal part
    /// where the full matrix is not positive definite.
    fn inverse_hessian(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let d = theta.len() - 1;
        let inv_var = (-2.0 * theta[d]).exp();
        let mut hess = DMatrix::<f64>::zeros(d + 1, d + 1);
        for (y, x, w) in &self.rows {
            let r = x - y.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..d {
                for j in 0..d {
                    hess[(i, j)] += w * y[i] * y[j] * inv_var;
                }
                hess[(i, d)] += 2.0 * w * r * y[i] * inv_var;
            }
            hess[(d, d)] += 2.0 * w * r * r * inv_var;
        }
        for i in 0..d {
            hess[(d, i)] = hess[(i, d)];
        }
        hess /= self.weight;
        let inv = hess.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
            // Drop the cross terms; the block-diagonal part is positive definite.
            let mut diag_blocks = hess;
            for i in 0..d {
                diag_blocks[(i, d)] = 0.0;
                diag_blocks[(d, i)] = 0.0;
            }
            diag_blocks.cholesky().map(|c| c.inverse()).unwrap_or_else(|| DMatrix::identity(d + 1, d + 1) * 1e-2)
        });
        (0..=d).map(|i| (0..=d).map(|j| inv[(i, j)]).collect()).collect()
    }
}

impl CostFunction for &StateObjective {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.guard(theta)?;
        let cost = self.eval(theta).0;
        let mut best = self.best.borrow_mut();
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            *best = Some((cost, theta.clone()));
        }
        Ok(cost)
    }
}

impl Gradient for &StateObjective {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, theta: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.guard(theta)?;
        Ok(self.eval(theta).1)
    }
}

/// Emission M-step by BFGS over `(phi, ln h)` per state, started from `start`.
/// Cross-check for [`m_step_x`].
pub fn m_step_x_quasi_newton(
    data: &[LabeledSequence],
    gammas: &[Vec<Vec<f64>>],
    start: &[LarParams],
) -> Result<Vec<LarParams>> {
    let k = start.len();
    check_gammas(data, gammas, k)?;
    let mut out = Vec::with_capacity(k);
    for (s, init) in start.iter().enumerate() {
        let mut rows = Vec::new();
        let mut weight = 0.0;
        for (seq, g) in data.iter().zip(gammas) {
            for (t, row) in g.iter().enumerate() {
                if row[s] != 0.0 {
                    rows.push((design_row(seq, t), seq.series[t], row[s]));
                    weight += row[s];
                }
            }
        }
        if !(weight > 0.0) {
            return Err(Error::StarvedState { state: s });
        }
        let d = init.phi.len() + 1;
        let mut x = init.phi.clone();
        x.push(init.h.ln());
        let objective = StateObjective { rows, weight, evals: Default::default(), best: Default::default() };
        // Short BFGS rounds, each seeded with the exact inverse Hessian at the
        // current point. A failed round keeps the best point so far.
        for _ in 0..QN_ROUNDS {
            let grad_norm = objective.eval(&x).1.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < QN_GRAD_TOL {
                break;
            }
            let linesearch = ArmijoCondition::new(1e-4)
                .map(BacktrackingLineSearch::new)
                .map_err(|e| Error::Optimizer(e.to_string()))?;
            let solver = BFGS::new(linesearch)
                .with_tolerance_grad(QN_GRAD_TOL)
                .and_then(|s| s.with_tolerance_cost(0.0))
                .map_err(|e| Error::Optimizer(e.to_string()))?;
            objective.evals.set(0);
            let start = x.clone();
            let inv_hessian = objective.inverse_hessian(&start);
            let run = Executor::new(&objective, solver)
                .configure(|st| st.param(start).inv_hessian(inv_hessian).max_iters(QN_ROUND_ITERS))
                .run();
            if let Err(e) = run {
                log::debug!("quasi-Newton round for state {s} stopped: {e}");
            }
            // Continue from the best point evaluated in this round.
            let current = objective.eval(&x).0;
            match objective.best.take() {
                Some((cost, theta)) if cost < current => x = theta,
                _ => break,
            }
        }
        let best = x;
        let h = best[d - 1].exp();
        out.push(LarParams::new(best[..d - 1].to_vec(), h));
    }
    Ok(out)
}

fn max_abs_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn e_step(model: &ModelParams, data: &[LabeledSequence]) -> Result<Vec<Posteriors>> {
    let results: Vec<Result<Posteriors>> = data.par_iter().map(|seq| smooth(model, seq)).collect();
    if results.iter().all(|r| matches!(r, Err(Error::ZeroLikelihood { .. }))) {
        return Err(Error::AllSequencesZeroLikelihood);
    }
    results.into_iter().collect()
}

fn check_corpus(data: &[LabeledSequence], hyper: Hyper, init: &ModelParams) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training sequences"));
    }
    if init.hyper != hyper {
        return Err(Error::InvalidConfig(format!(
            "hyperparameters (K={}, p={}) differ from the initial model (K={}, p={})",
            hyper.k, hyper.p, init.hyper.k, init.hyper.p
        )));
    }
    validate_model(init)?;
    data.iter().try_for_each(|s| s.check_against(init))
}

/// Run EM from `init` for at most `cfg.max_iter` iterations.
///
/// The initial law is fit once from the initial values; the loop updates the
/// chain and the emission parameters until no component moves by `kappa` or more.
pub fn em_fit(data: &[LabeledSequence], hyper: Hyper, init: &ModelParams, cfg: &EmConfig) -> Result<FitReport> {
    cfg.validate()?;
    check_corpus(data, hyper, init)?;
    let initials: Vec<Vec<f64>> = data.iter().map(|s| s.initial.clone()).collect();
    let mut model = init.clone();
    model.g0 = fit_g0(&initials)?;

    let mut trace = Vec::new();
    let mut starved_states = Vec::new();
    let mut ridge_states = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let posts = e_step(&model, data)?;
        trace.push(posts.iter().map(|p| p.loglik).sum());
        let chain = m_step_s(&posts)?;
        let gammas: Vec<Vec<Vec<f64>>> = posts.into_iter().map(|p| p.gamma).collect();
        let lar = m_step_x(data, &gammas, hyper.k, Some(&model.lar))?;
        starved_states.extend(chain.starved.iter().chain(&lar.starved));
        ridge_states.extend(&lar.ridge);
        let next = ModelParams { phmc: chain.params, lar: lar.params, ..model.clone() };
        let delta = max_abs_change(&next.theta_vector(), &model.theta_vector());
        log::debug!("em iteration {iterations}: loglik {:.6}, max change {delta:.3e}", trace[trace.len() - 1]);
        model = next;
        if delta < cfg.kappa {
            converged = true;
            break;
        }
    }
    let posts = e_step(&model, data)?;
    trace.push(posts.iter().map(|p| p.loglik).sum());
    starved_states.sort_unstable();
    starved_states.dedup();
    ridge_states.sort_unstable();
    ridge_states.dedup();
    if !starved_states.is_empty() {
        log::warn!("states {starved_states:?} received no posterior weight");
    }
    if !ridge_states.is_empty() {
        log::warn!("singular regression for states {ridge_states:?}; ridge applied");
    }
    Ok(FitReport { model, loglik_trace: trace, iterations, converged, starved_states, ridge_states })
}

fn dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|v| v / total).collect()
}

/// One random starting point: Dirichlet(1) chain rows, uniform `phi` in
/// `[-1, 1]`, `h` uniform around the pooled series standard deviation.
pub fn random_start<R: Rng + ?Sized>(data: &[LabeledSequence], hyper: Hyper, rng: &mut R) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training sequences"));
    }
    let (k, p) = (hyper.k, hyper.p);
    let sd = pooled_sd(data);
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let pi = dirichlet_uniform(rng, k);
    let a = (0..k).map(|_| dirichlet_uniform(rng, k)).collect();
    let lar = (0..k)
        .map(|_| {
            let phi = (0..=p).map(|_| rng.random_range(-1.0..=1.0)).collect();
            LarParams::new(phi, rng.random_range(0.5 * sd..=1.5 * sd))
        })
        .collect();
    let initials: Vec<Vec<f64>> = data.iter().map(|s| s.initial.clone()).collect();
    let g0 = fit_g0(&initials)?;
    Ok(ModelParams { hyper, phmc: PhmcParams { pi, a }, lar, g0 })
}

#[derive(Debug, Clone)]
pub struct InitReport {
    pub model: ModelParams,
    /// Final log-likelihood of each restart; `None` if it aborted.
    pub restart_logliks: Vec<Option<f64>>,
    pub best: usize,
}

/// Multi-restart initialization: `cfg.restarts` random starts, each run for
/// `cfg.restart_iters` iterations; the most likely one wins.
pub fn em_init(data: &[LabeledSequence], hyper: Hyper, cfg: &EmConfig) -> Result<InitReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = (0..cfg.restarts).map(|_| random_start(data, hyper, &mut rng)).collect::<Result<Vec<_>>>()?;
    let short = EmConfig { max_iter: cfg.restart_iters, ..cfg.clone() };
    let fits: Vec<Result<FitReport>> = starts.par_iter().map(|s| em_fit(data, hyper, s, &short)).collect();
    let mut best: Option<(usize, FitReport)> = None;
    let mut restart_logliks = Vec::with_capacity(fits.len());
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(rep) => {
                let ll = rep.final_loglik();
                restart_logliks.push(Some(ll));
                if best.as_ref().is_none_or(|(_, b)| ll > b.final_loglik()) {
                    best = Some((i, rep));
                }
            }
            Err(e) => {
                log::warn!("restart {i} aborted: {e}");
                restart_logliks.push(None);
            }
        }
    }
    let (best, rep) = best.ok_or(Error::InitFailed { restarts: cfg.restarts })?;
    Ok(InitReport { model: rep.model, restart_logliks, best })
}

/// Initialization followed by the main EM run.
pub fn train(data: &[LabeledSequence], hyper: Hyper, cfg: &EmConfig) -> Result<FitReport> {
    let init = em_init(data, hyper, cfg)?;
    em_fit(data, hyper, &init.model, cfg)
}
