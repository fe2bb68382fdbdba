//! Scaled backward-forward-backward smoothing under partial state labels.
//!
//! The three passes run in the linear domain with per-step scaling:
//!
//! * `tau`: label feasibility, `tau_t(s) ∝ P(S_{t+1} ∈ σ_{t+1}, .., S_T ∈ σ_T | S_t = s)`;
//! * `alpha`: filtered state law given the observations so far and *all* labels;
//! * `beta`: future evidence, scaled so that `beta_T(s) = 1 / C_T`.
//!
//! `C_t` are the one-step predictive densities of the label-restricted filter, so
//! `sum_t ln C_t = ln P(x_1..x_T, S_1 ∈ σ_1, .., S_T ∈ σ_T | x_{1-p}..x_0)`.
//!
//! Emission densities are evaluated once per `(t, state)` and shifted by the
//! per-step maximum log-density before exponentiation; the shift is added back
//! into `ln C_t`.

use crate::error::{Error, Result};
use crate::model::{log_emission_table, LabelSet, LabeledSequence, ModelParams, PhmcParams};

/// Hard cap on brute-force enumeration size.
pub const ENUMERATION_CAP: usize = 1_000_000;

/// Emission densities `exp(ln e_t(s) - shift_t)` with the per-step shift.
#[derive(Debug, Clone)]
pub struct Emissions {
    pub scaled: Vec<Vec<f64>>,
    pub shift: Vec<f64>,
}

impl Emissions {
    pub fn from_log(log_e: &[Vec<f64>]) -> Self {
        let mut scaled = Vec::with_capacity(log_e.len());
        let mut shift = Vec::with_capacity(log_e.len());
        for row in log_e {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m = if m.is_finite() { m } else { 0.0 };
            scaled.push(row.iter().map(|&v| (v - m).exp()).collect());
            shift.push(m);
        }
        Self { scaled, shift }
    }

    pub fn for_sequence(m: &ModelParams, seq: &LabeledSequence) -> Self {
        Self::from_log(&log_emission_table(m, seq))
    }
}

/// Output of the label-feasibility pass.
#[derive(Debug, Clone)]
pub struct TauPass {
    /// Row-normalized `tau` (`T x K`); the last row is exactly 1.
    pub tau: Vec<Vec<f64>>,
    /// `ln` of the factor restoring unscaled values: `tau_t = tau[t] * exp(log_scale[t])`.
    pub log_scale: Vec<f64>,
    /// `P(σ_1)` then the unweighted double sums `sum_{i∈σ_{t-1}} sum_{j∈σ_t} a_ij`.
    pub sigma_norms: Vec<f64>,
}

/// Output of the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `P(S_t = s | x_1..x_t, all labels)`; each row sums to 1.
    pub alpha: Vec<Vec<f64>>,
    /// `P(S_t = s | x_1..x_t, labels up to t)`; each row sums to 1.
    pub filter: Vec<Vec<f64>>,
    /// Scaling constants relative to the emission shift: `ln C_t = ln c[t] + shift[t]`.
    pub c: Vec<f64>,
    pub shift: Vec<f64>,
    pub loglik: f64,
}

impl ForwardPass {
    pub fn log_c(&self) -> Vec<f64> {
        self.c.iter().zip(&self.shift).map(|(c, s)| c.ln() + s).collect()
    }
}

/// All three passes together.
#[derive(Debug, Clone)]
pub struct ScaledPass {
    pub tau: Vec<Vec<f64>>,
    pub tau_log_scale: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// Per-step scaling constants (emission-shifted; see [`ForwardPass::c`]).
    pub c: Vec<f64>,
    pub emission_shift: Vec<f64>,
    pub sigma_norms: Vec<f64>,
}

/// Smoothed pairwise and marginal state probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `xi[t-1][k][l] = P(S_{t-1} = k, S_t = l | x, Σ)` for 1-based `t = 2..T`.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// `gamma[t][l] = P(S_t = l | x, Σ)`.
    pub gamma: Vec<Vec<f64>>,
    /// `ln P(x_1..x_T, S ∈ Σ | initial values)`.
    pub loglik: f64,
}

fn check_labels(k: usize, labels: &[LabelSet], n_emissions: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidSequence { reason: "series must have T >= 1".into() });
    }
    if labels.len() != n_emissions {
        return Err(Error::ShapeMismatch(format!("{} labels for {} emission rows", labels.len(), n_emissions)));
    }
    for (t, l) in labels.iter().enumerate() {
        match l.max_state() {
            Some(s) if s < k => {}
            _ => return Err(Error::InvalidSequence { reason: format!("label set at step {} outside 1..={k}", t + 1) }),
        }
    }
    Ok(())
}

/// Label-feasibility pass over explicit label sets.
pub fn tau_pass(phmc: &PhmcParams, labels: &[LabelSet]) -> Result<TauPass> {
    let k = phmc.k();
    let n = labels.len();
    check_labels(k, labels, n)?;

    let mut sigma_norms = Vec::with_capacity(n);
    sigma_norms.push(labels[0].iter().map(|i| phmc.pi[i]).sum::<f64>());
    for t in 1..n {
        let norm: f64 = labels[t - 1].iter().map(|i| labels[t].iter().map(|j| phmc.a[i][j]).sum::<f64>()).sum();
        sigma_norms.push(norm);
    }
    if let Some(t) = sigma_norms.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroLabelMass { step: t + 1 });
    }

    let mut tau = vec![vec![0.0; k]; n];
    let mut log_scale = vec![0.0; n];
    tau[n - 1].fill(1.0);
    for t in (0..n - 1).rev() {
        let (head, tail) = tau.split_at_mut(t + 1);
        let next = &tail[0];
        let row = &mut head[t];
        for (s, out) in row.iter_mut().enumerate() {
            *out = labels[t + 1].iter().map(|i| phmc.a[s][i] * next[i]).sum();
        }
        let total: f64 = row.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::ZeroLabelMass { step: t + 2 });
        }
        row.iter_mut().for_each(|v| *v /= total);
        log_scale[t] = log_scale[t + 1] + total.ln();
    }
    let p_sigma: f64 = labels[0].iter().map(|i| phmc.pi[i] * tau[0][i]).sum();
    if p_sigma <= 0.0 {
        return Err(Error::ZeroLabelMass { step: 1 });
    }
    Ok(TauPass { tau, log_scale, sigma_norms })
}

/// Forward pass given cached emissions and the tau pass.
pub fn forward_pass(phmc: &PhmcParams, labels: &[LabelSet], em: &Emissions, tau: &TauPass) -> Result<ForwardPass> {
    let k = phmc.k();
    let n = labels.len();
    check_labels(k, labels, em.scaled.len())?;

    let mut filter = vec![vec![0.0; k]; n];
    let mut alpha = vec![vec![0.0; k]; n];
    let mut c = vec![0.0; n];
    let mut pred = vec![0.0; k];
    for t in 0..n {
        if t == 0 {
            pred.copy_from_slice(&phmc.pi);
        } else {
            pred.fill(0.0);
            for i in labels[t - 1].iter() {
                let f = filter[t - 1][i];
                if f == 0.0 {
                    continue;
                }
                for (s, p) in pred.iter_mut().enumerate() {
                    *p += f * phmc.a[i][s];
                }
            }
        }
        let row = &mut filter[t];
        for s in labels[t].iter() {
            row[s] = em.scaled[t][s] * pred[s];
        }
        let ct: f64 = row.iter().sum();
        if ct <= 0.0 || !ct.is_finite() {
            return Err(Error::ZeroLikelihood { step: t + 1 });
        }
        row.iter_mut().for_each(|v| *v /= ct);
        c[t] = ct;

        let weighted: f64 = row.iter().zip(&tau.tau[t]).map(|(f, w)| f * w).sum();
        if weighted <= 0.0 {
            return Err(Error::ZeroLikelihood { step: t + 1 });
        }
        for s in 0..k {
            alpha[t][s] = row[s] * tau.tau[t][s] / weighted;
        }
    }
    let loglik = c.iter().zip(&em.shift).map(|(c, s)| c.ln() + s).sum();
    Ok(ForwardPass { alpha, filter, c, shift: em.shift.clone(), loglik })
}

/// Second backward pass; `beta_T(s) = 1 / C_T`.
pub fn backward_pass(
    phmc: &PhmcParams,
    labels: &[LabelSet],
    em: &Emissions,
    tau: &TauPass,
    c: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let k = phmc.k();
    let n = labels.len();
    if c.len() != n {
        return Err(Error::ShapeMismatch(format!("{} scaling constants for T={n}", c.len())));
    }
    if let Some(t) = c.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::ZeroLikelihood { step: t + 1 });
    }
    let mut beta = vec![vec![0.0; k]; n];
    beta[n - 1].fill(1.0 / c[n - 1]);
    for t in (0..n - 1).rev() {
        // w_i = beta_{t+1}(i) tau_{t+1}(i) e_{t+1}(i), restricted to σ_{t+1}.
        let mut w = vec![0.0; k];
        for i in labels[t + 1].iter() {
            w[i] = beta[t + 1][i] * tau.tau[t + 1][i] * em.scaled[t + 1][i];
        }
        for s in labels[t].iter() {
            let ts = tau.tau[t][s];
            if ts <= 0.0 {
                continue;
            }
            let acc: f64 = labels[t + 1].iter().map(|i| phmc.a[s][i] * w[i]).sum();
            beta[t][s] = acc / (ts * c[t]);
        }
    }
    Ok(beta)
}

fn assemble(
    phmc: &PhmcParams,
    labels: &[LabelSet],
    em: &Emissions,
    tau: &TauPass,
    fwd: &ForwardPass,
    beta: &[Vec<f64>],
) -> Result<Posteriors> {
    let k = phmc.k();
    let n = labels.len();
    let mut xi = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let mut slice = vec![vec![0.0; k]; k];
        let norm = tau.sigma_norms[t - 1];
        let mut total = 0.0;
        for kk in labels[t - 1].iter() {
            let tk = tau.tau[t - 1][kk];
            if tk <= 0.0 {
                continue;
            }
            let left = fwd.alpha[t - 1][kk] / (norm * tk);
            if left == 0.0 {
                continue;
            }
            for l in labels[t].iter() {
                let v = beta[t][l] * phmc.a[kk][l] * em.scaled[t][l] * tau.tau[t][l] * left;
                slice[kk][l] = v;
                total += v;
            }
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::ZeroLikelihood { step: t + 1 });
        }
        slice.iter_mut().flatten().for_each(|v| *v /= total);
        xi.push(slice);
    }

    let gamma = if n == 1 {
        vec![fwd.alpha[0].clone()]
    } else {
        let mut gamma = Vec::with_capacity(n);
        gamma.push(xi[0].iter().map(|row| row.iter().sum()).collect());
        for slice in &xi {
            gamma.push((0..k).map(|l| slice.iter().map(|row| row[l]).sum()).collect());
        }
        gamma
    };
    Ok(Posteriors { xi, gamma, loglik: fwd.loglik })
}

/// Run all three passes on an explicit log-emission table.
pub fn scaled_pass_emissions(
    phmc: &PhmcParams,
    labels: &[LabelSet],
    log_emissions: &[Vec<f64>],
) -> Result<(ScaledPass, Posteriors)> {
    let em = Emissions::from_log(log_emissions);
    check_labels(phmc.k(), labels, em.scaled.len())?;
    let tau = tau_pass(phmc, labels)?;
    let fwd = forward_pass(phmc, labels, &em, &tau)?;
    let beta = backward_pass(phmc, labels, &em, &tau, &fwd.c)?;
    let post = assemble(phmc, labels, &em, &tau, &fwd, &beta)?;
    let pass = ScaledPass {
        tau: tau.tau,
        tau_log_scale: tau.log_scale,
        alpha: fwd.alpha,
        beta,
        c: fwd.c,
        emission_shift: fwd.shift,
        sigma_norms: tau.sigma_norms,
    };
    Ok((pass, post))
}

/// Smoothed posteriors from an explicit log-emission table.
pub fn smooth_emissions(phmc: &PhmcParams, labels: &[LabelSet], log_emissions: &[Vec<f64>]) -> Result<Posteriors> {
    scaled_pass_emissions(phmc, labels, log_emissions).map(|(_, post)| post)
}

pub fn backward_tau(m: &ModelParams, seq: &LabeledSequence) -> Result<TauPass> {
    seq.check_against(m)?;
    tau_pass(&m.phmc, &seq.labels)
}

pub fn forward_alpha(m: &ModelParams, seq: &LabeledSequence, tau: &TauPass) -> Result<ForwardPass> {
    seq.check_against(m)?;
    forward_pass(&m.phmc, &seq.labels, &Emissions::for_sequence(m, seq), tau)
}

pub fn backward_beta(m: &ModelParams, seq: &LabeledSequence, tau: &TauPass, c: &[f64]) -> Result<Vec<Vec<f64>>> {
    seq.check_against(m)?;
    backward_pass(&m.phmc, &seq.labels, &Emissions::for_sequence(m, seq), tau, c)
}

/// Full scaled pass for one sequence.
pub fn scaled_pass(m: &ModelParams, seq: &LabeledSequence) -> Result<(ScaledPass, Posteriors)> {
    seq.check_against(m)?;
    scaled_pass_emissions(&m.phmc, &seq.labels, &log_emission_table(m, seq))
}

/// Smoothed posteriors `xi`, `gamma` and the log-likelihood of one sequence.
pub fn smooth(m: &ModelParams, seq: &LabeledSequence) -> Result<Posteriors> {
    scaled_pass(m, seq).map(|(_, post)| post)
}

/// Every path in `σ_1 x .. x σ_T`, in lexicographic order.
pub(crate) fn admissible_paths(k: usize, labels: &[LabelSet]) -> Result<Vec<Vec<usize>>> {
    let total = (k as f64).powi(labels.len() as i32);
    if total > ENUMERATION_CAP as f64 {
        return Err(Error::TooLarge { paths: total, cap: ENUMERATION_CAP });
    }
    let sets: Vec<Vec<usize>> = labels.iter().map(|l| l.iter().collect()).collect();
    let mut idx = vec![0usize; sets.len()];
    let mut out = Vec::new();
    loop {
        out.push(idx.iter().zip(&sets).map(|(&i, s)| s[i]).collect());
        let mut pos = sets.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sets[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// `ln π_{z_1} + ln e_1(z_1) + sum_t (ln a_{z_{t-1} z_t} + ln e_t(z_t))`, accumulated left to right.
pub(crate) fn path_log_joint(phmc: &PhmcParams, log_e: &[Vec<f64>], path: &[usize]) -> f64 {
    let mut s = phmc.pi[path[0]].ln() + log_e[0][path[0]];
    for t in 1..path.len() {
        s += phmc.a[path[t - 1]][path[t]].ln();
        s += log_e[t][path[t]];
    }
    s
}

/// Exact posteriors by enumerating every admissible path. Test oracle.
pub fn brute_force_posterior_emissions(
    phmc: &PhmcParams,
    labels: &[LabelSet],
    log_emissions: &[Vec<f64>],
) -> Result<Posteriors> {
    let k = phmc.k();
    check_labels(k, labels, log_emissions.len())?;
    let paths = admissible_paths(k, labels)?;
    let joints: Vec<f64> = paths.iter().map(|p| path_log_joint(phmc, log_emissions, p)).collect();
    let max = joints.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        let prior_zero = paths.iter().all(|p| phmc.pi[p[0]] == 0.0 || p.windows(2).any(|w| phmc.a[w[0]][w[1]] == 0.0));
        return Err(if prior_zero { Error::ZeroLabelMass { step: 1 } } else { Error::ZeroLikelihood { step: 1 } });
    }
    let weights: Vec<f64> = joints.iter().map(|j| (j - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let n = labels.len();
    let mut gamma = vec![vec![0.0; k]; n];
    let mut xi = vec![vec![vec![0.0; k]; k]; n.saturating_sub(1)];
    for (path, w) in paths.iter().zip(&weights) {
        let w = w / total;
        for (t, &s) in path.iter().enumerate() {
            gamma[t][s] += w;
            if t > 0 {
                xi[t - 1][path[t - 1]][s] += w;
            }
        }
    }
    Ok(Posteriors { xi, gamma, loglik: max + total.ln() })
}

pub fn brute_force_posterior(m: &ModelParams, seq: &LabeledSequence) -> Result<Posteriors> {
    seq.check_against(m)?;
    brute_force_posterior_emissions(&m.phmc, &seq.labels, &log_emission_table(m, seq))
}
