//! Check rows, data tables, and their CSV and JSON renderings.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

/// Version of the JSON sidecar layout.
pub const SCHEMA_VERSION: u32 = 1;

/// One check; `pass` holds exactly when `|lhs − rhs| ≤ tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Row {
    pub fn compare(check: impl Into<String>, lhs: f64, rhs: f64, se: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            lhs,
            rhs,
            se,
            tolerance,
            pass: (lhs - rhs).abs() <= tolerance,
        }
    }

    /// `value ≤ limit`, recorded as the excess `max(value − limit, 0)` against zero.
    pub fn at_most(check: impl Into<String>, value: f64, limit: f64) -> Self {
        let excess = if value.is_nan() {
            f64::INFINITY
        } else {
            (value - limit).max(0.0)
        };
        Self::compare(check, excess, 0.0, 0.0, 0.0)
    }

    pub fn at_least(check: impl Into<String>, value: f64, limit: f64) -> Self {
        let shortfall = if value.is_nan() {
            f64::INFINITY
        } else {
            (limit - value).max(0.0)
        };
        Self::compare(check, shortfall, 0.0, 0.0, 0.0)
    }
}

/// A named numeric table, written next to the checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub rows: Vec<Row>,
    pub table: Option<Table>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn pass(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn checks_csv(&self) -> std::io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| e.into_error())
    }

    pub fn table_csv(&self) -> std::io::Result<Option<Vec<u8>>> {
        let Some(t) = &self.table else {
            return Ok(None);
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&t.columns)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.into_inner().map(Some).map_err(|e| e.into_error())
    }
}

/// How the run ended.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    SolverError(String),
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    version: String,
    experiment: &'a str,
    status: &'a Status,
    config: &'a ExperimentConfig,
    wall_time_seconds: f64,
    checks: usize,
    failed: Vec<&'a str>,
    notes: &'a [String],
}

/// `<crate version>` or `<crate version>-<describe>` when built with `PATHFLOW_DESCRIBE` set.
pub fn version() -> String {
    match option_env!("PATHFLOW_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("{}-{d}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Paths of the files written for `out`: checks CSV, table CSV, JSON sidecar.
pub fn output_paths(out: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dir = out.parent().unwrap_or(Path::new(""));
    (
        out.to_path_buf(),
        dir.join(format!("{stem}.table.csv")),
        dir.join(format!("{stem}.json")),
    )
}

pub fn write(
    report: &Report,
    out: &Path,
    experiment: &str,
    status: &Status,
    config: &ExperimentConfig,
    wall_time_seconds: f64,
) -> std::io::Result<()> {
    let (checks, table, sidecar) = output_paths(out);
    std::fs::write(&checks, report.checks_csv()?)?;
    if let Some(bytes) = report.table_csv()? {
        std::fs::write(&table, bytes)?;
    }
    let meta = Sidecar {
        schema_version: SCHEMA_VERSION,
        version: version(),
        experiment,
        status,
        config,
        wall_time_seconds,
        checks: report.rows.len(),
        failed: report
            .rows
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.check.as_str())
            .collect(),
        notes: &report.notes,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(std::io::Error::other)?;
    std::fs::write(sidecar, json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_matches_tolerance() {
        assert!(Row::compare("a", 1.0, 1.05, 0.0, 0.1).pass);
        assert!(!Row::compare("a", 1.0, 1.2, 0.0, 0.1).pass);
        assert!(Row::at_most("b", 0.5, 1.0).pass);
        assert!(!Row::at_most("b", 1.5, 1.0).pass);
        assert!(!Row::at_most("b", f64::NAN, 1.0).pass);
        assert!(Row::at_least("c", 2.0, 1.0).pass);
        assert!(!Row::at_least("c", 0.5, 1.0).pass);
    }

    #[test]
    fn empty_report_does_not_pass() {
        assert!(!Report::default().pass());
    }

    #[test]
    fn sibling_paths() {
        let (a, b, c) = output_paths(Path::new("/tmp/x/run.csv"));
        assert_eq!(a, Path::new("/tmp/x/run.csv"));
        assert_eq!(b, Path::new("/tmp/x/run.table.csv"));
        assert_eq!(c, Path::new("/tmp/x/run.json"));
    }
}
