//! Deterministic artifact writers: fixed-format CSV tables, sorted-key
//! JSON summaries, and the config hash that ties outputs to their inputs.
//!
//! The reproducibility contract is that `(config, seed)` determines every
//! data byte written, independent of thread count or wall clock. Three
//! formatting rules make that hold:
//!
//! * reals are written as `{:.16e}` — 17 significant digits, enough for
//!   `f64` to round-trip bit-exactly through text;
//! * CSV columns are fixed per table, rows end in `\n`, and the file ends
//!   with a trailing newline (header-only for empty tables);
//! * JSON summaries keep their keys sorted (`BTreeMap`), so insertion
//!   order can never leak into the bytes.
//!
//! Wall-clock time and thread counts are provenance, not data; they go to
//! a separate `run_info.json` that is explicitly excluded from byte
//! comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::measure::EmpiricalMeasure;

/// One CSV value: integers print plainly, reals in 17-significant-digit
/// scientific notation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) => write!(f, "{v:.16e}"),
        }
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

/// A fixed-schema table bound for CSV.
#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<I, S>(columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let columns: Vec<String> = columns.into_iter().map(Into::into).collect();
        assert!(!columns.is_empty(), "a table needs at least one column");
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width does not match the table schema"
        );
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for cell in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&cell.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_csv())
    }
}

/// Reads a CSV written by [`Table::write`] back into cells. Values without
/// a decimal point, exponent, or special marker parse as integers;
/// everything else parses as `f64` (bit-exact for our own output).
pub fn read_csv(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<Cell>>)> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text).map_err(|msg| io::Error::new(io::ErrorKind::InvalidData, msg))
}

fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<Cell>>), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(columns.len());
        for field in line.split(',') {
            row.push(parse_cell(field).ok_or_else(|| {
                format!("unparseable field {field:?} on data line {}", lineno + 1)
            })?);
        }
        if row.len() != columns.len() {
            return Err(format!(
                "line {} has {} fields, expected {}",
                lineno + 1,
                row.len(),
                columns.len()
            ));
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

fn parse_cell(field: &str) -> Option<Cell> {
    let looks_real = field
        .bytes()
        .any(|b| matches!(b, b'.' | b'e' | b'E' | b'n' | b'N' | b'i' | b'I'));
    if !looks_real {
        if let Ok(v) = field.parse::<i64>() {
            return Some(Cell::Int(v));
        }
    }
    field.parse::<f64>().ok().map(Cell::Real)
}

/// Column labels for a `dim`-dimensional vector quantity: `x` when scalar,
/// `x0, x1, …` otherwise.
pub fn vector_columns(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![prefix.to_string()]
    } else {
        (0..dim).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// Serializes a cloud as a CSV table (`x…` coordinate columns plus a
/// `weight` column).
pub fn cloud_table(mu: &EmpiricalMeasure) -> Table {
    let mut columns = vector_columns("x", mu.dim());
    columns.push("weight".to_string());
    let mut table = Table::new(columns);
    for i in 0..mu.len() {
        let mut row: Vec<Cell> = mu.point(i).iter().map(|&v| Cell::Real(v)).collect();
        row.push(Cell::Real(mu.weight(i)));
        table.push(row);
    }
    table
}

/// Reads a cloud from CSV: every column is a coordinate except an optional
/// trailing `weight` column (equal weights when absent).
pub fn read_cloud(path: &Path) -> io::Result<EmpiricalMeasure> {
    let (columns, rows) = read_csv(path)?;
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let has_weight = columns.last().map(String::as_str) == Some("weight");
    let dim = columns.len() - usize::from(has_weight);
    if dim == 0 {
        return Err(invalid("cloud CSV has no coordinate columns".into()));
    }
    let as_f64 = |c: &Cell| match *c {
        Cell::Int(v) => v as f64,
        Cell::Real(v) => v,
    };
    let mut points = Vec::with_capacity(rows.len() * dim);
    let mut weights = Vec::with_capacity(rows.len());
    for row in &rows {
        for cell in &row[..dim] {
            points.push(as_f64(cell));
        }
        weights.push(if has_weight { as_f64(&row[dim]) } else { 1.0 });
    }
    EmpiricalMeasure::new(dim, points, weights)
        .map_err(|e| invalid(format!("cloud CSV is not a valid measure: {e}")))
}

/// Hex-encoded SHA-256 of a byte string; used to fingerprint the resolved
/// config in every output.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use fmt::Write;
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}

/// A sorted-key JSON summary document.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    map: BTreeMap<String, serde_json::Value>,
}

impl Summary {
    /// Starts a summary pre-populated with the provenance fields every
    /// artifact carries.
    pub fn new(subcommand: &str, seed: u64, config_hash: &str) -> Self {
        let mut s = Self::default();
        s.set("subcommand", subcommand);
        s.set("seed", seed);
        s.set("config_sha256", config_hash);
        s.set("artifact_version", env!("CARGO_PKG_VERSION"));
        s
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("summary values are plain data");
        self.map.insert(key.to_string(), v);
    }

    pub fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.map.get(key)
    }

    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(&self.map).expect("BTreeMap of JSON values serializes");
        text.push('\n');
        text
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(["n", "d"]);
        assert_eq!(t.to_csv(), "n,d\n");
    }

    #[test]
    fn one_row_gives_two_lines() {
        let mut t = Table::new(["n", "d"]);
        t.push(vec![Cell::Int(3), Cell::Real(0.5)]);
        assert_eq!(t.to_csv(), "n,d\n3,5.0000000000000000e-1\n");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let values = [
            0.1,
            -1.0 / 3.0,
            1e-308,
            -2.5e17,
            std::f64::consts::PI,
            f64::MAX,
            5.0e-324,
            0.0,
            -0.0,
        ];
        let mut t = Table::new(["i", "v"]);
        for (i, &v) in values.iter().enumerate() {
            t.push(vec![Cell::Int(i as i64), Cell::Real(v)]);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write(&path).unwrap();
        let (cols, rows) = read_csv(&path).unwrap();
        assert_eq!(cols, vec!["i".to_string(), "v".to_string()]);
        for (row, &want) in rows.iter().zip(&values) {
            match (row[0], row[1]) {
                (Cell::Int(_), Cell::Real(got)) => {
                    assert_eq!(got.to_bits(), want.to_bits(), "{want} mangled into {got}");
                }
                other => panic!("unexpected cell shapes {other:?}"),
            }
        }
    }

    #[test]
    fn cloud_round_trip_preserves_points_and_weights() {
        let mu = EmpiricalMeasure::new(
            2,
            vec![0.0, 1.0, 0.5, -0.25, 3.0, 4.0],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        cloud_table(&mu).write(&path).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.dim(), 2);
        assert_eq!(back.len(), 3);
        for i in 0..3 {
            assert_eq!(back.point(i), mu.point(i));
            assert!((back.weight(i) - mu.weight(i)).abs() <= 1e-15);
        }
    }

    #[test]
    fn summary_keys_are_sorted() {
        let mut s = Summary::new("check", 7, "deadbeef");
        s.set("zeta", 0.5);
        s.set("alpha", 1);
        let text = s.to_json();
        let a = text.find("\"alpha\"").unwrap();
        let c = text.find("\"config_sha256\"").unwrap();
        let z = text.find("\"zeta\"").unwrap();
        assert!(a < c && c < z, "keys not sorted:\n{text}");
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn sha256_matches_the_reference_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn vector_columns_scalar_and_vector() {
        assert_eq!(vector_columns("x", 1), vec!["x".to_string()]);
        assert_eq!(
            vector_columns("h", 3),
            vec!["h0".to_string(), "h1".to_string(), "h2".to_string()]
        );
    }
}
