//! Experiment front end: configuration, the staged pipeline and report tables.

pub mod config;
pub mod pipeline;
pub mod report;

use std::path::Path;

use anyhow::{bail, Context, Result};
use cloak_core::dataset::{normalize_dataset, split_dataset, Dataset, NormStats, Split, SplitRatios};
use cloak_core::trace::LabeledTrace;
use cloak_core::tracefile::{ingest_csv, ingest_dataset_dir};

/// Reads a dataset directory or a single trace CSV. A file whose traces all carry the
/// train tag is split 0.8/0.1/0.1 with `split_seed`. Values stay as stored.
pub fn load_dataset(path: &Path, split_seed: u64) -> Result<Dataset<f64>> {
    let ds = if path.is_dir() {
        ingest_dataset_dir::<f64>(path)
    } else {
        ingest_csv::<f64>(path)
    }
    .with_context(|| format!("reading {}", path.display()))?;
    if path.is_file() && ds.splits.iter().all(|&s| s == Split::Train) {
        return Ok(split_dataset(&ds, SplitRatios::default(), split_seed)?);
    }
    Ok(ds)
}

/// Normalizes raw data on its own train split; normalized data passes through.
pub fn normalized(ds: Dataset<f64>) -> Result<Dataset<f64>> {
    if ds.is_normalized() {
        return Ok(ds);
    }
    if ds.traces.iter().any(|t| t.trace.is_normalized()) {
        bail!("dataset mixes raw and normalized traces");
    }
    Ok(normalize_dataset(&ds)?.0)
}

/// Puts `ds` on the scale of a model trained with `stats`.
pub fn normalized_for(ds: Dataset<f64>, stats: Option<&NormStats>) -> Result<Dataset<f64>> {
    match stats {
        Some(stats) if !ds.is_normalized() => {
            let traces = ds
                .traces
                .iter()
                .map(|t| Ok(LabeledTrace { trace: stats.normalize(&t.trace)?, label: t.label }))
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset { traces, norm_stats: Some(stats.clone()), ..ds })
        }
        Some(stats) => {
            // Already normalized data is assumed to be on the model's scale.
            Ok(Dataset { norm_stats: Some(stats.clone()), ..ds })
        }
        None if ds.is_normalized() => Ok(ds),
        None => bail!("the model carries no normalization statistics; supply normalized traces"),
    }
}
