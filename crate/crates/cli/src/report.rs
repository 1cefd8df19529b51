//! Report tables and their CSV/JSON emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// One row: a label and one value per column. `None` is a not-applicable cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// File stem of the emitted table.
    pub name: String,
    /// Header of the label column.
    pub key: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: &str, key: &str, columns: Vec<String>) -> Self {
        Self { name: name.into(), key: key.into(), columns, rows: Vec::new() }
    }

    /// Appends a row; NaN becomes `None`.
    pub fn push(&mut self, label: impl Into<String>, values: impl IntoIterator<Item = f64>) {
        let values: Vec<Option<f64>> = values.into_iter().map(|v| (!v.is_nan()).then_some(v)).collect();
        assert_eq!(values.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(Row { label: label.into(), values });
    }

    pub fn push_na(&mut self, label: impl Into<String>) {
        let n = self.columns.len();
        self.push(label, vec![f64::NAN; n]);
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.label == row)?.values[c]
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.key, self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.label);
            for v in &r.values {
                match v {
                    Some(v) => s.push_str(&format!(",{v}")),
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![json!(r.label)];
                v.extend(r.values.iter().map(|x| x.map_or(Value::Null, |x| json!(x))));
                Value::Array(v)
            })
            .collect();
        let mut columns = vec![self.key.clone()];
        columns.extend(self.columns.iter().cloned());
        json!({ "name": self.name, "columns": columns, "rows": rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub wall_time_s: f64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => bail!("unknown report format '{s}' (csv or json)"),
        }
    }
}

/// Tables of all reports with same-named tables merged in stage order.
pub fn merged_tables(reports: &[StageReport]) -> Result<Vec<Table>> {
    let mut out: Vec<Table> = Vec::new();
    for t in reports.iter().flat_map(|r| &r.tables) {
        match out.iter_mut().find(|o| o.name == t.name) {
            Some(o) => {
                if o.columns != t.columns {
                    bail!("table {} has inconsistent columns across stages", t.name);
                }
                o.rows.extend(t.rows.iter().cloned());
            }
            None => out.push(t.clone()),
        }
    }
    Ok(out)
}

/// Writes one file per table into `dir` and returns their paths.
pub fn emit_report(reports: &[StageReport], format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        bail!("no stage reports to emit");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = Vec::new();
    for t in merged_tables(reports)? {
        let (ext, body) = match format {
            Format::Csv => ("csv", t.to_csv()),
            Format::Json => ("json", serde_json::to_string_pretty(&t.to_json())? + "\n"),
        };
        let path = dir.join(format!("{}.{ext}", t.name));
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    Ok(paths)
}

pub const STAGES_FILE: &str = "stages.json";

pub fn save_stages(run_dir: &Path, reports: &[StageReport]) -> Result<()> {
    let path = run_dir.join(STAGES_FILE);
    fs::write(&path, serde_json::to_string_pretty(reports)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn load_stages(run_dir: &Path) -> Result<Vec<StageReport>> {
    let path = run_dir.join(STAGES_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let mut t = Table::new("attacks", "attack", vec!["success_rate".into(), "mean_mad".into()]);
        t.push("GA", [1.0, 0.0125]);
        t.push("SMA", [0.0, f64::NAN]);
        t
    }

    #[test]
    fn csv_writes_na() {
        assert_eq!(table().to_csv(), "attack,success_rate,mean_mad\nGA,1,0.0125\nSMA,0,NA\n");
    }

    #[test]
    fn json_uses_null_for_na() {
        let v = table().to_json();
        assert_eq!(v["rows"][1], json!(["SMA", 0.0, null]));
        assert_eq!(v["columns"][0], "attack");
    }

    #[test]
    fn merge_appends_rows_and_rejects_column_drift() {
        let r = |stage, t: Table| StageReport { stage, wall_time_s: 0.0, artifacts: vec![], tables: vec![t] };
        let merged = merged_tables(&[r(1, table()), r(3, table())]).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].rows.len(), 4);
        let mut other = table();
        other.columns.pop();
        assert!(merged_tables(&[r(1, table()), r(3, other)]).is_err());
        assert!(emit_report(&[], Format::Csv, Path::new("/nonexistent")).is_err());
    }
}
