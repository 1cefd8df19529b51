//! The trace CSV format shared by the generator, the sampler and the CLI.
//!
//! ```text
//! # counters=5 samples=1000 interval_us=10 [normalized=1] [classes=20] [split=test]
//! 3,0.41,0.44,...
//! ```
//!
//! One trace per row: the label (−1 for unlabeled traces) followed by the counter rows
//! concatenated in counter-major order. Only `counters`, `samples` and `interval_us`
//! are required header keys.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::{CounterKind, LabeledTrace, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub n_counters: usize,
    pub n_samples: usize,
    pub interval_us: u32,
    pub normalized: bool,
    pub n_classes: Option<usize>,
    pub split: Option<Split>,
}

impl Header {
    pub fn for_trace<S: Scalar>(trace: &Trace<S>) -> Self {
        Self {
            n_counters: trace.n_counters(),
            n_samples: trace.n_samples(),
            interval_us: trace.interval_us(),
            normalized: trace.is_normalized(),
            n_classes: None,
            split: None,
        }
    }

    fn render(&self) -> String {
        let mut line = format!(
            "# counters={} samples={} interval_us={}",
            self.n_counters, self.n_samples, self.interval_us
        );
        if self.normalized {
            line.push_str(" normalized=1");
        }
        if let Some(n) = self.n_classes {
            line.push_str(&format!(" classes={n}"));
        }
        if let Some(s) = self.split {
            line.push_str(&format!(" split={s}"));
        }
        line
    }

    fn parse(line: &str) -> Result<Self> {
        let err = |message: String| Error::Parse { line: 1, message };
        let body = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| err("missing '# counters=.. samples=.. interval_us=..' header".into()))?;
        let (mut counters, mut samples, mut interval) = (None, None, None);
        let mut header = Header {
            n_counters: 0,
            n_samples: 0,
            interval_us: 0,
            normalized: false,
            n_classes: None,
            split: None,
        };
        for token in body.split_whitespace() {
            let (key, value) =
                token.split_once('=').ok_or_else(|| err(format!("malformed header token '{token}'")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad value for {key}: '{v}'")));
            match key {
                "counters" => counters = Some(num(value)?),
                "samples" => samples = Some(num(value)?),
                "interval_us" => interval = Some(num(value)? as u32),
                "normalized" => {
                    header.normalized = match value {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        _ => return Err(err(format!("bad value for normalized: '{value}'"))),
                    }
                }
                "classes" => header.n_classes = Some(num(value)?),
                "split" => header.split = Some(value.parse().map_err(|e: Error| err(e.to_string()))?),
                _ => return Err(err(format!("unknown header key '{key}'"))),
            }
        }
        header.n_counters = counters.ok_or_else(|| err("header lacks counters=".into()))?;
        header.n_samples = samples.ok_or_else(|| err("header lacks samples=".into()))?;
        header.interval_us = interval.ok_or_else(|| err("header lacks interval_us=".into()))?;
        if header.n_samples == 0 {
            return Err(err("samples must be positive".into()));
        }
        CounterKind::first(header.n_counters).map_err(|e| err(e.to_string()))?;
        Ok(header)
    }
}

pub fn write_traces<'a, W, S, I>(mut out: W, header: &Header, rows: I) -> Result<()>
where
    W: Write,
    S: Scalar,
    I: IntoIterator<Item = (i64, &'a Trace<S>)>,
{
    writeln!(out, "{}", header.render())?;
    let mut line = String::new();
    for (label, trace) in rows {
        if trace.n_counters() != header.n_counters || trace.n_samples() != header.n_samples {
            return Err(Error::Shape("trace geometry differs from header".into()));
        }
        line.clear();
        line.push_str(&label.to_string());
        for v in trace.values() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trace CSV stream. Errors carry 1-based line numbers.
pub fn read_traces<R: BufRead, S: Scalar>(input: R) -> Result<(Header, Vec<(i64, Trace<S>)>)> {
    let mut lines = input.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::NoTraces),
    };
    if first.trim().is_empty() {
        return Err(Error::NoTraces);
    }
    let header = Header::parse(&first)?;
    let counters = CounterKind::first(header.n_counters)?;
    let width = header.n_counters * header.n_samples + 1;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let label = fields[0].parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad label '{}'", fields[0]),
        })?;
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<S>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad value '{f}'"),
                })
            })
            .collect::<Result<Vec<S>>>()?;
        let trace = Trace::new(
            counters.clone(),
            header.n_samples,
            values,
            header.normalized,
            header.interval_us,
        )
        .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        rows.push((label, trace));
    }
    if rows.is_empty() {
        return Err(Error::NoTraces);
    }
    Ok((header, rows))
}

/// Writes the traces of one split, tagging the header with the split name.
pub fn write_split<S: Scalar>(path: &Path, dataset: &Dataset<S>, split: Split) -> Result<()> {
    let traces: Vec<&LabeledTrace<S>> = dataset.split(split).collect();
    let Some(first) = traces.first() else {
        return Err(Error::NoTraces);
    };
    let header = Header {
        n_classes: Some(dataset.n_classes),
        split: Some(split),
        ..Header::for_trace(&first.trace)
    };
    let out = BufWriter::new(File::create(path)?);
    write_traces(out, &header, traces.iter().map(|t| (t.label as i64, &t.trace)))
}

/// Loads a labeled trace CSV as a dataset. All traces take the header's split tag
/// (train when absent); the class count comes from the header or the largest label.
pub fn ingest_csv<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let reader = BufReader::new(File::open(path)?);
    let (header, rows) = read_traces::<_, S>(reader)?;
    let mut traces = Vec::with_capacity(rows.len());
    for (i, (label, trace)) in rows.into_iter().enumerate() {
        if label < 0 {
            return Err(Error::Parse { line: i + 2, message: "unlabeled trace in a dataset".into() });
        }
        traces.push(LabeledTrace { trace, label: label as usize });
    }
    let max_label = traces.iter().map(|t| t.label).max().unwrap_or(0);
    let n_classes = header.n_classes.unwrap_or(max_label + 1);
    if max_label >= n_classes {
        return Err(Error::Parse {
            line: 1,
            message: format!("label {max_label} exceeds classes={n_classes}"),
        });
    }
    Dataset::new(traces, n_classes, header.split.unwrap_or(Split::Train))
}

/// Writes `train.csv`, `val.csv` and `test.csv` (skipping empty splits) into `dir`.
pub fn export_dataset_dir<S: Scalar>(dir: &Path, dataset: &Dataset<S>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for split in Split::ALL {
        if dataset.split_len(split) > 0 {
            write_split(&dir.join(format!("{split}.csv")), dataset, split)?;
        }
    }
    Ok(())
}

/// Inverse of [`export_dataset_dir`]: traces come back grouped train, val, test.
pub fn ingest_dataset_dir<S: Scalar>(dir: &Path) -> Result<Dataset<S>> {
    let mut out: Option<Dataset<S>> = None;
    for split in Split::ALL {
        let path = dir.join(format!("{split}.csv"));
        if !path.exists() {
            continue;
        }
        let part = ingest_csv::<S>(&path)?;
        match out.as_mut() {
            None => out = Some(part),
            Some(ds) => {
                if part.n_classes != ds.n_classes {
                    return Err(Error::InvalidArgument("split files disagree on class count".into()));
                }
                ds.traces.extend(part.traces);
                ds.splits.extend(part.splits);
            }
        }
    }
    out.ok_or(Error::NoTraces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Header, Vec<(i64, Trace)>)> {
        read_traces(text.as_bytes())
    }

    #[test]
    fn parses_minimal_file() {
        let (h, rows) = parse("# counters=2 samples=3 interval_us=10\n-1,1,2,3,4,5,6\n").unwrap();
        assert_eq!((h.n_counters, h.n_samples, h.interval_us), (2, 3, 10));
        assert!(!h.normalized);
        assert_eq!(rows[0].0, -1);
        assert_eq!(rows[0].1.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn wrong_field_count_names_line() {
        let err = parse("# counters=1 samples=2 interval_us=10\n0,1,2\n0,1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_bad_headers() {
        assert!(matches!(parse(""), Err(Error::NoTraces)));
        assert!(matches!(parse("# counters=1 samples=2 interval_us=10\n"), Err(Error::NoTraces)));
        assert!(matches!(parse("counters=1\n0,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse("# counters=1 samples=1 interval_us=10 colour=red\n0,1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("# counters=6 samples=1 interval_us=10\n0,1,1,1,1,1,1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn normalized_flag_is_enforced() {
        let err = parse("# counters=1 samples=2 interval_us=10 normalized=1\n0,0.5,1.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let values = vec![0.1, 1.0 / 3.0, 0.0, 1.0, 2f64.sqrt() / 2.0, 1e-17];
        let t = Trace::new(CounterKind::first(3).unwrap(), 2, values, true, 10).unwrap();
        let header = Header { n_classes: Some(4), split: Some(Split::Val), ..Header::for_trace(&t) };
        let mut buf = Vec::new();
        write_traces(&mut buf, &header, [(3, &t)]).unwrap();
        let (h, rows) = read_traces::<_, f64>(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(rows, vec![(3, t)]);
    }
}
