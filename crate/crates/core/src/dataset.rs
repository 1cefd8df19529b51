//! Labeled trace collections, per-counter min/max scaling and stratified splitting.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::trace::{LabeledTrace, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split '{s}'")))
    }
}

/// Per-counter `(min, max)` of raw counts over the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub ranges: Vec<(f64, f64)>,
}

impl NormStats {
    pub fn n_counters(&self) -> usize {
        self.ranges.len()
    }

    fn check<S: Scalar>(&self, trace: &Trace<S>) -> Result<()> {
        if trace.n_counters() != self.ranges.len() {
            return Err(Error::Shape(format!(
                "stats for {} counters, trace has {}",
                self.ranges.len(),
                trace.n_counters()
            )));
        }
        Ok(())
    }

    /// Maps raw counts to `[0, 1]`; degenerate counters (`min == max`) map to 0.5.
    pub fn normalize<S: Scalar>(&self, trace: &Trace<S>) -> Result<Trace<S>> {
        self.check(trace)?;
        if trace.is_normalized() {
            return Err(Error::InvalidArgument("trace is already normalized".into()));
        }
        let mut values = Vec::with_capacity(trace.len());
        for (row, &(lo, hi)) in trace.rows().zip(&self.ranges) {
            if hi > lo {
                values.extend(row.iter().map(|&v| {
                    S::lit(((v.as_f64() - lo) / (hi - lo)).clamp(0.0, 1.0))
                }));
            } else {
                values.extend(std::iter::repeat(S::lit(0.5)).take(row.len()));
            }
        }
        Trace::new(trace.counters().to_vec(), trace.n_samples(), values, true, trace.interval_us())
    }

    pub fn denormalize<S: Scalar>(&self, trace: &Trace<S>) -> Result<Trace<S>> {
        self.check(trace)?;
        if !trace.is_normalized() {
            return Err(Error::InvalidArgument("trace is not normalized".into()));
        }
        let mut values = Vec::with_capacity(trace.len());
        for (row, &(lo, hi)) in trace.rows().zip(&self.ranges) {
            values.extend(row.iter().map(|&v| S::lit(lo + v.as_f64() * (hi - lo))));
        }
        Trace::new(trace.counters().to_vec(), trace.n_samples(), values, false, trace.interval_us())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S = f64> {
    pub traces: Vec<LabeledTrace<S>>,
    /// One tag per trace, parallel to `traces`.
    pub splits: Vec<Split>,
    pub n_classes: usize,
    pub norm_stats: Option<NormStats>,
}

impl<S: Scalar> Dataset<S> {
    /// A dataset whose traces are all tagged `split`.
    pub fn new(traces: Vec<LabeledTrace<S>>, n_classes: usize, split: Split) -> Result<Self> {
        if let Some(t) = traces.iter().find(|t| t.label >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                t.label, n_classes
            )));
        }
        if let Some(first) = traces.first() {
            if traces.iter().any(|t| !t.trace.same_shape(&first.trace)) {
                return Err(Error::Shape("traces of differing geometry in one dataset".into()));
            }
        }
        let splits = vec![split; traces.len()];
        Ok(Self { traces, splits, n_classes, norm_stats: None })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.traces.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledTrace<S>> {
        self.traces.iter().zip(&self.splits).filter(move |(_, s)| **s == split).map(|(t, _)| t)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    /// A dataset holding only the traces of one split, in order.
    pub fn subset(&self, split: Split) -> Dataset<S> {
        let traces: Vec<_> = self.split(split).cloned().collect();
        Dataset {
            splits: vec![split; traces.len()],
            traces,
            n_classes: self.n_classes,
            norm_stats: self.norm_stats.clone(),
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.traces.first().map_or(false, |t| t.trace.is_normalized())
    }

    /// Trace geometry `(n_counters, n_samples)` of the first trace.
    pub fn geometry(&self) -> Option<(usize, usize)> {
        self.traces.first().map(|t| (t.trace.n_counters(), t.trace.n_samples()))
    }
}

/// Scales every trace by per-counter min/max computed on the training split only.
pub fn normalize_dataset<S: Scalar>(dataset: &Dataset<S>) -> Result<(Dataset<S>, NormStats)> {
    let train: Vec<&Trace<S>> = dataset.split(Split::Train).map(|t| &t.trace).collect();
    let Some(first) = train.first() else {
        return Err(Error::NoTrainingData);
    };
    if dataset.traces.iter().any(|t| t.trace.is_normalized()) {
        return Err(Error::InvalidArgument("dataset is already normalized".into()));
    }
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); first.n_counters()];
    for trace in &train {
        for (row, range) in trace.rows().zip(ranges.iter_mut()) {
            for v in row {
                let v = v.as_f64();
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
        }
    }
    let stats = NormStats { ranges };
    let traces = dataset
        .traces
        .iter()
        .map(|t| Ok(LabeledTrace { trace: stats.normalize(&t.trace)?, label: t.label }))
        .collect::<Result<Vec<_>>>()?;
    let out = Dataset {
        traces,
        splits: dataset.splits.clone(),
        n_classes: dataset.n_classes,
        norm_stats: Some(stats.clone()),
    };
    Ok((out, stats))
}

/// Split ratios `(train, val, test)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

/// Per-class stratified shuffle split. Trace order is preserved; only tags change.
pub fn split_dataset<S: Scalar>(
    dataset: &Dataset<S>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Dataset<S>> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, t) in dataset.traces.iter().enumerate() {
        by_class[t.label].push(i);
    }
    let mut splits = vec![Split::Train; dataset.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let n = members.len();
        if n < 3 {
            return Err(Error::ClassTooSmall { class, count: n });
        }
        members.shuffle(&mut seed::rng(seed::mix(seed, class as u64)));
        let n_val = ((n as f64 * val).round() as usize).min(n - 1);
        let n_test = ((n as f64 * test).round() as usize).min(n - 1 - n_val);
        for (k, &idx) in members.iter().enumerate() {
            splits[idx] = if k < n_val {
                Split::Val
            } else if k < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(Dataset { splits, ..dataset.clone() })
}
