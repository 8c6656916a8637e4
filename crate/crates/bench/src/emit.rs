//! Result tables and their CSV/JSON serialization.
//!
//! Reals are written in scientific notation with 17 significant digits, which
//! round-trips every `f64`. Missing values are an empty CSV field or JSON `null`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
    Missing,
}

impl Cell {
    pub fn real_opt(v: Option<f64>) -> Cell {
        v.map_or(Cell::Missing, Cell::Real)
    }

    pub fn count(n: usize) -> Cell {
        Cell::Int(n as i64)
    }

    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Text(s.into())
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format_real(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn to_json(&self) -> String {
        match self {
            Cell::Real(v) if !v.is_finite() => "null".into(),
            Cell::Text(s) => Value::String(s.clone()).to_string(),
            Cell::Missing => "null".into(),
            other => other.render(),
        }
    }

    fn parse(field: &str) -> Cell {
        if field.is_empty() {
            return Cell::Missing;
        }
        if let Ok(b) = field.parse::<bool>() {
            return Cell::Bool(b);
        }
        if let Ok(i) = field.parse::<i64>() {
            return Cell::Int(i);
        }
        if let Ok(v) = field.parse::<f64>() {
            return Cell::Real(v);
        }
        Cell::Text(field.to_string())
    }

    fn from_json(v: &Value) -> Cell {
        match v {
            Value::Null => Cell::Missing,
            Value::Bool(b) => Cell::Bool(*b),
            Value::Number(n) => n
                .as_i64()
                .map(Cell::Int)
                .unwrap_or_else(|| Cell::Real(n.as_f64().unwrap_or(f64::NAN))),
            Value::String(s) => Cell::Text(s.clone()),
            other => Cell::Text(other.to_string()),
        }
    }
}

/// `{:.16e}`: 17 significant digits.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width for table {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Cell at `(row, column name)`.
    pub fn get(&self, row: usize, column: &str) -> Option<&Cell> {
        self.column(column)
            .and_then(|c| self.rows.get(row).map(|r| &r[c]))
    }

    /// First row whose `key` column holds the text `value`.
    pub fn find(&self, key: &str, value: &str) -> Option<usize> {
        let c = self.column(key)?;
        self.rows.iter().position(|r| r[c].as_text() == Some(value))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| BenchError::Config(format!("csv encoding: {e}"));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| BenchError::Config(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let parse_err = |e: csv::Error| BenchError::Parse {
            path: PathBuf::from(name),
            message: e.to_string(),
        };
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let columns = r
            .headers()
            .map_err(parse_err)?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(Cell::parse).collect()))
            .collect::<std::result::Result<Vec<Vec<Cell>>, _>>()
            .map_err(parse_err)?;
        Ok(Table {
            name: name.to_string(),
            columns,
            rows,
        })
    }

    /// `{"table": name, "columns": [...], "rows": [[...], ...]}` with one row per line.
    pub fn to_json(&self) -> String {
        let cols: Vec<String> = self
            .columns
            .iter()
            .map(|c| Value::String(c.clone()).to_string())
            .collect();
        let mut out = format!(
            "{{\"table\":{},\"columns\":[{}],\"rows\":[",
            Value::String(self.name.clone()),
            cols.join(",")
        );
        for (i, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(Cell::to_json).collect();
            out.push_str(if i == 0 { "\n[" } else { ",\n[" });
            out.push_str(&cells.join(","));
            out.push(']');
        }
        out.push_str("\n]}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let err = |m: String| BenchError::Parse {
            path: PathBuf::from("<json>"),
            message: m,
        };
        let v: Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        let name = v["table"]
            .as_str()
            .ok_or_else(|| err("missing table name".into()))?;
        let columns = v["columns"]
            .as_array()
            .ok_or_else(|| err("missing columns".into()))?
            .iter()
            .map(|c| {
                c.as_str()
                    .map(String::from)
                    .ok_or_else(|| err("non-string column".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = v["rows"]
            .as_array()
            .ok_or_else(|| err("missing rows".into()))?
            .iter()
            .map(|r| {
                r.as_array()
                    .map(|cells| cells.iter().map(Cell::from_json).collect())
                    .ok_or_else(|| err("row is not an array".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Table {
            name: name.to_string(),
            columns,
            rows,
        })
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => Ok(self.to_json()),
        }
    }
}

/// Identifies the run that produced a set of tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub format: OutputFormat,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            config_sha256: config.hash(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            format: config.output.format,
            files: Vec::new(),
        }
    }
}

/// Writes each table to `<dir>/<name>.<ext>` and a `manifest.json` listing them.
pub fn emit_results(
    tables: &[Table],
    format: OutputFormat,
    dir: &Path,
    mut manifest: Manifest,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut written = Vec::with_capacity(tables.len() + 1);
    for table in tables {
        let file = format!("{}.{}", table.name, format.extension());
        let path = dir.join(&file);
        fs::write(&path, table.render(format)?).map_err(|e| BenchError::io(&path, e))?;
        manifest.files.push(file);
        written.push(path);
    }
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Reads a table written by [`emit_results`].
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Table::from_json(&text),
        _ => {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
            Table::from_csv(name, &text)
        }
    }
}
