//! Sweep tables and their CSV / JSON-lines encodings.
//!
//! CSV output starts with one `# meta: {...}` comment line holding the run
//! metadata as JSON, followed by an RFC 4180 table. JSON-lines output starts
//! with a `{"meta": {...}}` line followed by one object per row. Cells that
//! have no value are written as `NA` in CSV and `null` in JSON; the row's
//! `status` column says why.

use std::io::Write;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::Format;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Cell {
    pub fn opt(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Float)
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            Cell::Float(x) if x.is_finite() => Value::from(*x),
            Cell::Bool(b) => Value::from(*b),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Float(_) | Cell::Missing => Value::Null,
        }
    }

    fn to_csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_finite() => x.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Float(_) | Cell::Missing => "NA".into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

/// Outcome of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The quantity does not exist at this point, e.g. no threshold below
    /// `delta = c`. Not a failure.
    Undefined,
    NotConverged,
    Error,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Undefined => "undefined",
            Status::NotConverged => "not_converged",
            Status::Error => "error",
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, Status::NotConverged | Status::Error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub cells: Vec<Cell>,
    pub status: Status,
    pub detail: String,
}

impl Row {
    pub fn ok(cells: Vec<Cell>) -> Self {
        Self {
            cells,
            status: Status::Ok,
            detail: String::new(),
        }
    }

    pub fn with_status(mut self, status: Status, detail: impl Into<String>) -> Self {
        self.status = status;
        self.detail = detail.into();
        self
    }
}

/// Rows in grid order under a fixed set of columns. `status` and `detail`
/// columns are appended on output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl SweepResult {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Row) {
        assert_eq!(row.cells.len(), self.columns.len(), "row width must match the columns");
        self.rows.push(row);
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.status.is_failure())
    }

    fn header(&self) -> Vec<String> {
        let mut h = self.columns.clone();
        h.push("status".into());
        h.push("detail".into());
        h
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    pub tolerances: Value,
    pub notes: Vec<String>,
}

pub fn write<W: Write>(format: Format, meta: &Metadata, result: &SweepResult, w: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(meta, result, w),
        Format::Jsonl => write_jsonl(meta, result, w),
    }
}

pub fn write_csv<W: Write>(meta: &Metadata, result: &SweepResult, mut w: W) -> Result<()> {
    writeln!(w, "# meta: {}", serde_json::to_string(meta)?)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(result.header())?;
    for row in &result.rows {
        let mut rec: Vec<String> = row.cells.iter().map(Cell::to_csv).collect();
        rec.push(row.status.as_str().into());
        rec.push(row.detail.clone());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(meta: &Metadata, result: &SweepResult, mut w: W) -> Result<()> {
    let mut first = Map::new();
    first.insert("meta".into(), serde_json::to_value(meta)?);
    writeln!(w, "{}", Value::Object(first))?;
    for row in &result.rows {
        let mut obj = Map::new();
        for (col, cell) in result.columns.iter().zip(&row.cells) {
            obj.insert(col.clone(), cell.to_json());
        }
        obj.insert("status".into(), Value::from(row.status.as_str()));
        obj.insert("detail".into(), Value::from(row.detail.as_str()));
        writeln!(w, "{}", Value::Object(obj))?;
    }
    Ok(())
}

/// A decoded table: metadata plus rows keyed by column name, with every
/// cell as JSON and every number as a float so both encodings compare
/// directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub meta: Metadata,
    pub columns: Vec<String>,
    pub rows: Vec<Map<String, Value>>,
}

pub fn read_csv(text: &str) -> Result<Decoded> {
    let (first, body) = text.split_once('\n').context("empty CSV output")?;
    let meta_json = first.strip_prefix("# meta: ").context("missing metadata line")?;
    let meta: Metadata = serde_json::from_str(meta_json)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let columns: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut obj = Map::new();
        for (col, field) in columns.iter().zip(rec.iter()) {
            obj.insert(col.clone(), csv_field_to_json(col, field));
        }
        rows.push(obj);
    }
    Ok(Decoded { meta, columns, rows })
}

fn csv_field_to_json(column: &str, field: &str) -> Value {
    if column == "status" || column == "detail" {
        return Value::from(field);
    }
    if field == "NA" {
        return Value::Null;
    }
    if let Ok(x) = field.parse::<f64>() {
        return Value::from(x);
    }
    match field {
        "true" => Value::from(true),
        "false" => Value::from(false),
        _ => Value::from(field),
    }
}

fn numbers_as_floats(v: Value) -> Value {
    match v.as_f64() {
        Some(x) => Value::from(x),
        None => v,
    }
}

pub fn read_jsonl(text: &str) -> Result<Decoded> {
    let mut lines = text.lines();
    let first: Value = serde_json::from_str(lines.next().context("empty JSON-lines output")?)?;
    let Some(meta) = first.get("meta") else {
        bail!("first line must hold the metadata");
    };
    let meta: Metadata = serde_json::from_value(meta.clone())?;
    let mut rows: Vec<Map<String, Value>> = Vec::new();
    for line in lines {
        match serde_json::from_str(line)? {
            Value::Object(o) => rows.push(o.into_iter().map(|(k, v)| (k, numbers_as_floats(v))).collect()),
            other => bail!("expected a JSON object per row, got {other}"),
        }
    }
    let columns = rows.first().map(|r| r.keys().cloned().collect()).unwrap_or_default();
    Ok(Decoded { meta, columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Metadata, SweepResult) {
        let meta = Metadata {
            tool: "zerotemp".into(),
            version: "0.0.0".into(),
            command: "test".into(),
            config: serde_json::json!({"grid": "1,2"}),
            seeds: vec![3],
            wall_clock_seconds: 0.5,
            tolerances: serde_json::json!({}),
            notes: vec![],
        };
        let mut r = SweepResult::new(&["x", "y", "label", "flag"]);
        r.push(Row::ok(vec![1usize.into(), 0.1f64.into(), "a,\"b\"".to_string().into(), true.into()]));
        r.push(Row::ok(vec![2usize.into(), Cell::Missing, "c".to_string().into(), false.into()]).with_status(Status::Undefined, "none"));
        (meta, r)
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let (meta, r) = sample();
        let mut buf = Vec::new();
        write_csv(&meta, &r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# meta: {"));
        assert_eq!(lines[1], "x,y,label,flag,status,detail");
        assert_eq!(lines[2], "1,0.1,\"a,\"\"b\"\"\",true,ok,");
        assert_eq!(lines[3], "2,NA,c,false,undefined,none");
    }

    #[test]
    fn encodings_agree() {
        let (meta, r) = sample();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&meta, &r, &mut a).unwrap();
        write_jsonl(&meta, &r, &mut b).unwrap();
        let a = read_csv(std::str::from_utf8(&a).unwrap()).unwrap();
        let b = read_jsonl(std::str::from_utf8(&b).unwrap()).unwrap();
        assert_eq!(a.meta, meta);
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn failures_are_detected() {
        let (_, mut r) = sample();
        assert!(!r.any_failed());
        r.push(Row::ok(vec![3usize.into(), 1.0f64.into(), "d".to_string().into(), true.into()]).with_status(Status::Error, "boom"));
        assert!(r.any_failed());
    }
}
