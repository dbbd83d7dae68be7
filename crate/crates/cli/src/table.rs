//! Result tables and their CSV / JSON serializations.
//!
//! Every cell is rendered once, to a fixed-precision decimal string that
//! does not depend on the process locale; both output formats carry the
//! same strings so a table is byte-identical however it is emitted.

use serde::Serialize;

/// Digits after the decimal point for floating-point cells.
pub const FLOAT_PRECISION: usize = 6;

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    /// Canonical text form: integers verbatim, floats with
    /// [`FLOAT_PRECISION`] digits, `nan` / `inf` / `-inf` for non-finite.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if v.is_nan() => "nan".into(),
            Cell::Float(v) if v.is_infinite() => if *v > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(v) => format!("{v:.prec$}", prec = FLOAT_PRECISION),
            Cell::Text(s) => s.clone(),
        }
    }

    /// Numeric value (integers widened), `None` for text.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// A named table with a fixed column schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// JSON shape of a table: column names and rendered rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics if its width does not match the schema.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column, `None` if the column is missing.
    pub fn numeric_column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i].as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn rendered(&self) -> RenderedTable {
        RenderedTable {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect(),
        }
    }

    /// RFC 4180 CSV with a header row and `\n` line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let line = |cells: Vec<String>| cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
        out.push_str(&line(self.columns.clone()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row.iter().map(Cell::render).collect()));
            out.push('\n');
        }
        out
    }

    /// Pretty-printed JSON of [`Table::rendered`].
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rendered()).expect("tables serialize");
        s.push('\n');
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
