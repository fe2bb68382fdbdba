//! JSON file formats. States are 1-based on disk and 0-based in memory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::FitReport;
use crate::error::{Error, Result};
use crate::model::{validate_model, Hyper, InitialLaw, LabelSet, LabeledSequence, LarParams, ModelParams, PhmcParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    phi: Vec<f64>,
    h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    p: usize,
    pi: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    states: Vec<StateFile>,
    g0: InitialLaw,
}

/// One label on disk: a state, a set of states, or `null` for hidden.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum LabelEntry {
    State(usize),
    Set(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    p: usize,
    initial: Vec<f64>,
    series: Vec<f64>,
    labels: Vec<Option<LabelEntry>>,
}

#[derive(Debug, Clone, Serialize)]
struct ReportFile<'a> {
    iterations: usize,
    converged: bool,
    loglik_trace: &'a [f64],
    starved_states: Vec<usize>,
    ridge_states: Vec<usize>,
}

pub fn model_to_json(m: &ModelParams) -> Result<String> {
    let file = ModelFile {
        k: m.k(),
        p: m.p(),
        pi: m.phmc.pi.clone(),
        a: m.phmc.a.clone(),
        states: m.lar.iter().map(|l| StateFile { phi: l.phi.clone(), h: l.h }).collect(),
        g0: m.g0.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parse and validate a model.
pub fn model_from_json(text: &str) -> Result<ModelParams> {
    let f: ModelFile = serde_json::from_str(text)?;
    let m = ModelParams {
        hyper: Hyper::new(f.k, f.p)?,
        phmc: PhmcParams { pi: f.pi, a: f.a },
        lar: f.states.into_iter().map(|s| LarParams::new(s.phi, s.h)).collect(),
        g0: f.g0,
    };
    validate_model(&m)?;
    Ok(m)
}

pub fn sequence_to_json(seq: &LabeledSequence, k: usize) -> Result<String> {
    let labels = seq
        .labels
        .iter()
        .map(|l| {
            if l.is_full(k) {
                None
            } else if let Some(s) = l.single() {
                Some(LabelEntry::State(s + 1))
            } else {
                Some(LabelEntry::Set(l.iter().map(|s| s + 1).collect()))
            }
        })
        .collect();
    let file = SequenceFile { p: seq.initial.len(), initial: seq.initial.clone(), series: seq.series.clone(), labels };
    Ok(serde_json::to_string_pretty(&file)?)
}

fn label_from_entry(entry: Option<LabelEntry>, k: usize, step: usize) -> Result<LabelSet> {
    let bad = |what: String| Error::InvalidSequence { reason: format!("label at step {step}: {what}") };
    let states = match entry {
        None => return Ok(LabelSet::full(k)),
        Some(LabelEntry::State(s)) => vec![s],
        Some(LabelEntry::Set(v)) => v,
    };
    if states.is_empty() {
        return Err(bad("empty set".into()));
    }
    if let Some(&s) = states.iter().find(|&&s| s == 0 || s > k) {
        return Err(bad(format!("state {s} outside 1..={k}")));
    }
    let zero_based: Vec<usize> = states.iter().map(|s| s - 1).collect();
    LabelSet::from_states(&zero_based).ok_or_else(|| bad("invalid state set".into()))
}

/// Parse a sequence for a model with `k` states.
pub fn sequence_from_json(text: &str, k: usize) -> Result<LabeledSequence> {
    let f: SequenceFile = serde_json::from_str(text)?;
    if f.initial.len() != f.p {
        return Err(Error::DimensionMismatch { expected: f.p, found: f.initial.len() });
    }
    if f.labels.len() != f.series.len() {
        return Err(Error::InvalidSequence {
            reason: format!("{} labels for {} observations", f.labels.len(), f.series.len()),
        });
    }
    let labels =
        f.labels.into_iter().enumerate().map(|(t, e)| label_from_entry(e, k, t + 1)).collect::<Result<Vec<_>>>()?;
    LabeledSequence::new(f.initial, f.series, labels)
}

pub fn report_to_json(rep: &FitReport) -> Result<String> {
    let file = ReportFile {
        iterations: rep.iterations,
        converged: rep.converged,
        loglik_trace: &rep.loglik_trace,
        starved_states: rep.starved_states.iter().map(|s| s + 1).collect(),
        ridge_states: rep.ridge_states.iter().map(|s| s + 1).collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    model_from_json(&std::fs::read_to_string(path)?)
}

pub fn read_sequence(path: &Path, k: usize) -> Result<LabeledSequence> {
    sequence_from_json(&std::fs::read_to_string(path)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_model, simulate};

    #[test]
    fn model_round_trip_is_exact() {
        let mut m = reference_model();
        m.lar[0].h = 0.1 + 0.2;
        m.phmc.a[1] = vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn labels_use_one_based_states_and_null() {
        let (_, seq) = simulate(&reference_model(), 3, 1).unwrap();
        let mut seq = seq;
        seq.labels = vec![LabelSet::singleton(0), LabelSet::full(4), LabelSet::from_states(&[1, 3]).unwrap()];
        let text = sequence_to_json(&seq, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["labels"], serde_json::json!([1, null, [2, 4]]));
        assert_eq!(sequence_from_json(&text, 4).unwrap(), seq);
    }

    #[test]
    fn rejects_out_of_range_labels_and_unknown_fields() {
        let bad = r#"{"p":1,"initial":[0.0],"series":[1.0],"labels":[5]}"#;
        assert!(matches!(sequence_from_json(bad, 4), Err(Error::InvalidSequence { .. })));
        let zero = r#"{"p":1,"initial":[0.0],"series":[1.0],"labels":[0]}"#;
        assert!(sequence_from_json(zero, 4).is_err());
        let extra = r#"{"p":1,"initial":[0.0],"series":[1.0],"labels":[1],"x":2}"#;
        assert!(matches!(sequence_from_json(extra, 4), Err(Error::Json(_))));
    }

    #[test]
    fn invalid_model_rejected() {
        let mut text = model_to_json(&reference_model()).unwrap();
        text = text.replacen("0.25", "0.5", 1);
        assert!(matches!(model_from_json(&text), Err(Error::InvalidModel { .. })));
    }
}
