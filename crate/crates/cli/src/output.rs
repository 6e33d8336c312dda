//! Value-function sidecars, CSV files and console tables.

use std::fs;
use std::path::{Path, PathBuf};

use hydrovalley_core::policy::GlobalValue;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};
use crate::valley_file::write_json;

/// What `solve` leaves behind for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFile {
    pub method: String,
    /// Optimal payoff of the optimization stage when the method computes it.
    pub optimal_payoff: Option<f64>,
    /// Upper bound on the optimal payoff (the dual value for dadp).
    pub upper_bound_on_payoff: Option<f64>,
    pub value: GlobalValue,
}

/// File name of the value function inside a dadp output directory.
pub const VALUE_FILE_NAME: &str = "value.json";

pub fn write_value_file(vf: &ValueFile, path: &Path) -> Result<()> {
    write_json(vf, path)
}

/// Reads a value file, or `value.json` inside a directory.
pub fn read_value_file(path: &Path) -> Result<ValueFile> {
    let file = if path.is_dir() { path.join(VALUE_FILE_NAME) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Parse { path: file.clone(), message: format!("at `{}`: {}", e.path(), e.inner()) })
}

/// `dir/<kind>.csv` for a directory, `<stem>.<kind>.csv` next to a file.
pub fn sidecar(base: &Path, kind: &str) -> PathBuf {
    if base.is_dir() {
        return base.join(format!("{kind}.csv"));
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}.{kind}.csv"))
}

/// A rectangular table of already formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 cells"))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out.push_str(&line(&self.header));
        out.push_str(&line(&self.header.iter().map(|_| String::from("---")).collect::<Vec<_>>()));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Md => Ok(self.to_markdown()),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(io_err(path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Md,
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Percent with one decimal, `N.A.` when undefined.
pub fn percent(v: Option<f64>) -> String {
    match v {
        Some(p) => format!("{:.1}%", if p == 0.0 { 0.0 } else { p }),
        None => String::from("N.A."),
    }
}

/// `phase,seconds` rows.
pub fn write_timing(path: &Path, rows: &[(&str, f64)]) -> Result<()> {
    let mut t = Table::new(["phase", "seconds"]);
    for (phase, s) in rows {
        t.push(vec![String::from(*phase), num(*s)]);
    }
    t.write_csv(path)
}

pub fn read_timing(path: &Path, phase: &str) -> Option<f64> {
    let mut r = csv::Reader::from_path(path).ok()?;
    r.records().filter_map(|r| r.ok()).find(|r| r.get(0) == Some(phase)).and_then(|r| r.get(1)?.parse().ok())
}
