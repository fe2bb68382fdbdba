//! Most probable state path under partial-label constraints.

use crate::error::{Error, Result};
use crate::model::{log_emission_table, LabelSet, LabeledSequence, ModelParams, PhmcParams};
use crate::smoothing::{admissible_paths, path_log_joint};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPath {
    /// 0-based states, one per time-step.
    pub states: Vec<usize>,
    /// `ln P(S = states, x_1..x_T | initial values)`.
    pub log_joint: f64,
}

fn check(phmc: &PhmcParams, labels: &[LabelSet], log_e: &[Vec<f64>]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidSequence { reason: "series must have T >= 1".into() });
    }
    if labels.len() != log_e.len() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} emission rows", labels.len(), log_e.len())));
    }
    if labels.iter().any(|l| l.max_state().is_none_or(|s| s >= phmc.k())) {
        return Err(Error::InvalidSequence { reason: "label set outside the state space".into() });
    }
    Ok(())
}

/// Constrained Viterbi on an explicit log-emission table.
///
/// Runs in the log domain; disallowed states and zero transitions score `-inf`.
/// Ties go to the smallest state index at every backtracking step.
pub fn viterbi_emissions(phmc: &PhmcParams, labels: &[LabelSet], log_e: &[Vec<f64>]) -> Result<DecodedPath> {
    check(phmc, labels, log_e)?;
    let k = phmc.k();
    let n = labels.len();
    let log_a: Vec<Vec<f64>> = phmc.a.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect();

    let mut delta = vec![vec![f64::NEG_INFINITY; k]; n];
    for l in labels[0].iter() {
        delta[0][l] = phmc.pi[l].ln() + log_e[0][l];
    }
    for t in 1..n {
        for l in labels[t].iter() {
            let mut best = f64::NEG_INFINITY;
            for kk in labels[t - 1].iter() {
                let v = delta[t - 1][kk] + log_a[kk][l];
                if v > best {
                    best = v;
                }
            }
            delta[t][l] = best + log_e[t][l];
        }
    }

    let argmax = |scores: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (s, v) in scores {
            if v > best.1 {
                best = (s, v);
            }
        }
        best
    };
    let (last, log_joint) = argmax(&mut labels[n - 1].iter().map(|l| (l, delta[n - 1][l])));
    if log_joint == f64::NEG_INFINITY || log_joint.is_nan() {
        return Err(Error::NoAdmissiblePath);
    }
    let mut states = vec![0; n];
    states[n - 1] = last;
    for t in (0..n - 1).rev() {
        let next = states[t + 1];
        let (s, _) = argmax(&mut labels[t].iter().map(|l| (l, delta[t][l] + log_a[l][next])));
        states[t] = s;
    }
    Ok(DecodedPath { states, log_joint })
}

pub fn viterbi(m: &ModelParams, seq: &LabeledSequence) -> Result<DecodedPath> {
    seq.check_against(m)?;
    viterbi_emissions(&m.phmc, &seq.labels, &log_emission_table(m, seq))
}

/// Exact argmax by enumeration. Test oracle.
///
/// Uses the backtracking tie rule of [`viterbi_emissions`]: among equally
/// probable paths, the smallest final state wins, then the smallest state
/// before it, and so on.
pub fn brute_force_decode_emissions(phmc: &PhmcParams, labels: &[LabelSet], log_e: &[Vec<f64>]) -> Result<DecodedPath> {
    check(phmc, labels, log_e)?;
    let mut best: Option<DecodedPath> = None;
    for path in admissible_paths(phmc.k(), labels)? {
        let score = path_log_joint(phmc, log_e, &path);
        let better = match &best {
            None => score > f64::NEG_INFINITY,
            Some(b) => score > b.log_joint || (score == b.log_joint && path.iter().rev().lt(b.states.iter().rev())),
        };
        if better {
            best = Some(DecodedPath { states: path, log_joint: score });
        }
    }
    best.ok_or(Error::NoAdmissiblePath)
}

pub fn brute_force_decode(m: &ModelParams, seq: &LabeledSequence) -> Result<DecodedPath> {
    seq.check_against(m)?;
    brute_force_decode_emissions(&m.phmc, &seq.labels, &log_emission_table(m, seq))
}
