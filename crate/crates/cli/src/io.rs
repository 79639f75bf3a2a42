use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A numeric CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("column `{name}` not found; header is {:?}", self.header)))
    }

    /// Columns `names` as an `n x names.len()` matrix.
    pub fn columns(&self, names: &[String]) -> CliResult<DMatrix<f64>> {
        let idx = names.iter().map(|n| self.column_index(n)).collect::<CliResult<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.rows.len(), idx.len(), |i, j| self.rows[i][idx[j]]))
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_table(file, &path.display().to_string())
}

pub fn parse_table<R: std::io::Read>(reader: R, source: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(format!("{source}: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::input(format!("{source}: missing header row")));
    }
    if let Some(dup) = header.iter().enumerate().find(|(i, h)| header[..*i].contains(h)) {
        return Err(CliError::input(format!("{source}: duplicate column `{}`", dup.1)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::input(format!("{source}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(header.len());
        for (field, name) in rec.iter().zip(&header) {
            if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                return Err(CliError::input(format!("{source}: line {line}: missing value in column `{name}`")));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::input(format!("{source}: line {line}: column `{name}`: `{field}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!("{source}: line {line}: column `{name}` is not finite")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{source}: no data rows")));
    }
    Ok(Table { header, rows })
}

/// Writes rows of already-formatted fields. Floats should be formatted with
/// `{}` so they round-trip exactly.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::input(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::input(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Single-line JSON for large machine-read state files.
pub fn write_json_compact<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string(value)
        .map_err(|e| CliError::input(format!("cannot serialize {}: {e}", path.display())))?;
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    if !path.exists() {
        return Err(CliError::input(format!("{} not found", path.display())));
    }
    crate::config::load_json(path)
}

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn num(v: f64) -> String {
    format!("{v}")
}
