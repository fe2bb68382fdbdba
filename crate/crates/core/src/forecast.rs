//! Multi-horizon point forecasts with optionally known future states.

use crate::error::{Error, Result};
use crate::model::{mean_unchecked, LabelSet, LabeledSequence, ModelParams};
use crate::smoothing::smooth;

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    /// `X̂_{T+1}, .., X̂_{T+H}`.
    pub predictions: Vec<f64>,
    /// `H x K` predictive state weights.
    pub state_weights: Vec<Vec<f64>>,
}

/// Propagate `gamma_T` through the chain, pinning observed future states.
///
/// Hidden steps multiply by `Aᵀ`; singleton steps are one-hot. Partial sets
/// restrict the propagated row to the set and renormalize (uniform over the
/// set if it carries no mass).
pub fn predictive_state_weights(m: &ModelParams, gamma_t: &[f64], future_labels: &[LabelSet]) -> Result<Vec<Vec<f64>>> {
    let k = m.k();
    if gamma_t.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: gamma_t.len() });
    }
    let mut prev = gamma_t.to_vec();
    let mut out = Vec::with_capacity(future_labels.len());
    for (h, &sigma) in future_labels.iter().enumerate() {
        if sigma.max_state().is_none_or(|s| s >= k) {
            return Err(Error::InvalidSequence {
                reason: format!("future label at horizon {} outside 1..={k}", h + 1),
            });
        }
        let row = if let Some(s) = sigma.single() {
            let mut one_hot = vec![0.0; k];
            one_hot[s] = 1.0;
            one_hot
        } else {
            let mut next: Vec<f64> = (0..k).map(|s| (0..k).map(|l| m.phmc.a[l][s] * prev[l]).sum()).collect();
            if !sigma.is_full(k) {
                for (s, v) in next.iter_mut().enumerate() {
                    if !sigma.contains(s) {
                        *v = 0.0;
                    }
                }
                let total: f64 = next.iter().sum();
                if total > 0.0 {
                    next.iter_mut().for_each(|v| *v /= total);
                } else {
                    let w = 1.0 / sigma.len() as f64;
                    sigma.iter().for_each(|s| next[s] = w);
                }
            }
            next
        };
        prev.clone_from(&row);
        out.push(row);
    }
    Ok(out)
}

/// Point forecasts for horizons `1..=H` given weights and the observed history.
pub fn forecast_from_weights(m: &ModelParams, seq: &LabeledSequence, weights: &[Vec<f64>]) -> Vec<f64> {
    let p = m.p();
    let mut history = seq.full_series();
    let mut preds = Vec::with_capacity(weights.len());
    for w in weights {
        let n = history.len();
        let lags: Vec<f64> = history[n - p..].iter().rev().copied().collect();
        let x: f64 = w.iter().zip(&m.lar).map(|(wk, lar)| wk * mean_unchecked(lar, &lags)).sum();
        history.push(x);
        preds.push(x);
    }
    preds
}

/// Forecast `horizon` steps past the end of `seq`.
pub fn forecast(
    m: &ModelParams,
    seq: &LabeledSequence,
    horizon: usize,
    future_labels: &[LabelSet],
) -> Result<ForecastResult> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("forecast horizon must be >= 1".into()));
    }
    if future_labels.len() != horizon {
        return Err(Error::ShapeMismatch(format!("{} future labels for horizon {horizon}", future_labels.len())));
    }
    let post = smooth(m, seq)?;
    let gamma_t = post.gamma.last().expect("smoothing returns T >= 1 rows");
    let state_weights = predictive_state_weights(m, gamma_t, future_labels)?;
    let predictions = forecast_from_weights(m, seq, &state_weights);
    Ok(ForecastResult { predictions, state_weights })
}
