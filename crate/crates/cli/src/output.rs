//! Artifact writing. Every artifact carries a [`RunHeader`]: JSON files
//! under a `run` key, CSV files as a trailing `# run: {...}` comment line
//! (so each CSV's first line is its column header).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Format;
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct RunHeader {
    pub command: &'static str,
    pub seed: u64,
    /// Fully resolved configuration.
    pub config: Value,
    pub inputs: Value,
}

impl RunHeader {
    pub fn csv_trailer(&self) -> String {
        format!(
            "# run: {}\n",
            serde_json::to_string(self).expect("header serializes")
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, header: &RunHeader) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(cell).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out.push_str(&header.csv_trailer());
        out
    }

    pub fn to_json(&self, header: &RunHeader) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                Value::Object(
                    self.columns
                        .iter()
                        .cloned()
                        .zip(r.iter().cloned())
                        .collect(),
                )
            })
            .collect();
        json!({ "run": header, "rows": rows })
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => fable_core::metrics::csv_field(s),
        other => other.to_string(),
    }
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `<dir>/<stem>.csv` or `<dir>/<stem>.json`.
pub fn write_table(
    dir: &Path,
    stem: &str,
    format: Format,
    header: &RunHeader,
    table: &Table,
) -> Result<PathBuf, CliError> {
    let path = match format {
        Format::Csv => dir.join(format!("{stem}.csv")),
        Format::Json => dir.join(format!("{stem}.json")),
    };
    match format {
        Format::Csv => write_text(&path, &table.to_csv(header))?,
        Format::Json => write_json(&path, &table.to_json(header))?,
    }
    Ok(path)
}
