use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{craft, AdversarialResult, AttackKind, AttackParams};
use crate::classifiers::Classifier;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};
use crate::seed;
use crate::trace::LabeledTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome<S = f64> {
    /// Position of the trace within its split.
    pub index: usize,
    pub result: AdversarialResult<S>,
}

/// Aggregates over one attack run. Perturbation sizes and adversarial confidence are
/// averaged over successful samples only; they are NaN when nothing succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub n_requested: usize,
    pub n_evaluated: usize,
    /// Fewer correctly classified samples than requested were available.
    pub short: bool,
    pub success_rate: f64,
    pub mean_mad: f64,
    pub median_mad: f64,
    pub mean_msd: f64,
    pub mean_orig_confidence: f64,
    pub mean_adv_confidence: f64,
    pub mean_queries: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

impl AttackSummary {
    pub fn from_outcomes<S: Scalar>(kind: AttackKind, n_requested: usize, outcomes: &[SampleOutcome<S>]) -> Self {
        let ok: Vec<&AdversarialResult<S>> = outcomes.iter().map(|o| &o.result).filter(|r| r.success).collect();
        let mads: Vec<f64> = ok.iter().map(|r| r.distances.mad.as_f64()).collect();
        let n = outcomes.len();
        AttackSummary {
            kind,
            n_requested,
            n_evaluated: n,
            short: n < n_requested,
            success_rate: if n == 0 { f64::NAN } else { ok.len() as f64 / n as f64 },
            mean_mad: mean(&mads),
            median_mad: median(&mads),
            mean_msd: mean(&ok.iter().map(|r| r.distances.msd.as_f64()).collect::<Vec<_>>()),
            mean_orig_confidence: mean(&outcomes.iter().map(|o| o.result.orig_confidence).collect::<Vec<_>>()),
            mean_adv_confidence: mean(&ok.iter().map(|r| r.adv_confidence).collect::<Vec<_>>()),
            mean_queries: mean(&outcomes.iter().map(|o| o.result.queries as f64).collect::<Vec<_>>()),
        }
    }
}

/// Split positions of the traces `model` classifies correctly, in split order.
pub fn correct_indices<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    dataset: &Dataset<S>,
    split: Split,
) -> Result<Vec<usize>> {
    let traces: Vec<&LabeledTrace<S>> = dataset.split(split).collect();
    if traces.is_empty() {
        return Ok(Vec::new());
    }
    let xs: Vec<&[S]> = traces.iter().map(|t| t.trace.values()).collect();
    let probs = model.predict_proba_many(&xs)?;
    Ok((0..traces.len()).filter(|&i| argmax(&probs[i]) == traces[i].label).collect())
}

/// Up to `per_class` correctly classified split positions of every class, in split order.
pub fn correct_per_class<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    dataset: &Dataset<S>,
    split: Split,
    per_class: usize,
) -> Result<Vec<usize>> {
    let labels: Vec<usize> = dataset.split(split).map(|t| t.label).collect();
    let mut taken = vec![0usize; dataset.n_classes];
    let mut out = Vec::new();
    for i in correct_indices(model, dataset, split)? {
        if taken[labels[i]] < per_class {
            taken[labels[i]] += 1;
            out.push(i);
        }
    }
    Ok(out)
}

/// Crafts against the traces at split positions `indices`. Sample `i` of the split
/// uses seed `mix(params.seed, i)`.
pub fn attack_indices<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    dataset: &Dataset<S>,
    split: Split,
    kind: AttackKind,
    params: &AttackParams,
    indices: &[usize],
) -> Result<Vec<SampleOutcome<S>>> {
    params.validate()?;
    let traces: Vec<&LabeledTrace<S>> = dataset.split(split).collect();
    if let Some(&i) = indices.iter().find(|&&i| i >= traces.len()) {
        return Err(Error::InvalidArgument(format!("index {i} outside a split of {}", traces.len())));
    }
    indices
        .par_iter()
        .map(|&i| {
            let p = params.with_seed(seed::mix(params.seed, i as u64));
            let t = traces[i];
            craft(model, &t.trace, t.label, kind, &p).map(|result| SampleOutcome { index: i, result })
        })
        .collect()
}

/// Attacks the first `n_samples` traces of `split` that `model` classifies correctly.
pub fn evaluate_attack<S: Scalar, M: Classifier<S> + ?Sized>(
    model: &M,
    dataset: &Dataset<S>,
    split: Split,
    kind: AttackKind,
    params: &AttackParams,
    n_samples: usize,
) -> Result<(AttackSummary, Vec<SampleOutcome<S>>)> {
    params.validate()?;
    let chosen: Vec<usize> = if n_samples == 0 {
        Vec::new()
    } else {
        correct_indices(model, dataset, split)?.into_iter().take(n_samples).collect()
    };
    let outcomes = attack_indices(model, dataset, split, kind, params, &chosen)?;
    Ok((AttackSummary::from_outcomes(kind, n_samples, &outcomes), outcomes))
}

/// Successful adversarial traces, labeled with their true class.
pub fn adversarial_set<S: Scalar>(outcomes: &[SampleOutcome<S>]) -> Vec<LabeledTrace<S>> {
    outcomes
        .iter()
        .filter(|o| o.result.success)
        .map(|o| LabeledTrace { trace: o.result.x_adv.clone(), label: o.result.orig_label })
        .collect()
}

pub const RESULTS_HEADER: &str =
    "sample,kind,success,orig_label,adv_label,target,orig_confidence,adv_confidence,mad,msd,scale,queries";

/// One row per sample with every scalar field of the result.
pub fn write_results_csv<S: Scalar>(mut w: impl Write, outcomes: &[SampleOutcome<S>]) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for o in outcomes {
        let r = &o.result;
        let target = r.target.map_or_else(|| "NA".to_string(), |t| t.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            o.index,
            r.kind,
            u8::from(r.success),
            r.orig_label,
            r.adv_label,
            target,
            r.orig_confidence,
            r.adv_confidence,
            r.distances.mad.as_f64(),
            r.distances.msd.as_f64(),
            r.scale,
            r.queries
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mean_edges() {
        assert!(median(&[]).is_nan());
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn empty_summary_is_flagged() {
        let s = AttackSummary::from_outcomes::<f64>(AttackKind::Gsa, 5, &[]);
        assert!(s.short && s.n_evaluated == 0 && s.success_rate.is_nan());
    }
}
