//! CSV ingestion and the CSV/JSON writers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use panda_core::Dataset;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Header names of a CSV file.
pub fn read_header(path: &Path) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::io(format!("{}: bad header: {e}", path.display())))?;
    Ok(headers.iter().map(|h| h.trim().to_string()).collect())
}

/// Reads a headed CSV; `response` names y and every other column is a predictor.
/// Non-numeric or non-finite cells are reported with their line numbers.
pub fn read_dataset(path: &Path, response: &str) -> Result<Dataset, CliError> {
    let header = read_header(path)?;
    let yi = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| CliError::usage(format!("response column '{response}' not found; columns are {}", header.join(", "))))?;
    if header.len() < 2 {
        return Err(CliError::io(format!("{}: need the response plus at least one predictor", path.display())));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut bad_lines = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::io(format!("{}:{line}: {e}", path.display())))?;
        if rec.len() != header.len() {
            return Err(CliError::io(format!("{}:{line}: expected {} fields, found {}", path.display(), header.len(), rec.len())));
        }
        let mut row = Vec::with_capacity(header.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| CliError::io(format!("{}:{line}: column '{}' has non-numeric value '{cell}'", path.display(), header[j])))?;
            row.push(v);
        }
        if row.iter().any(|v| !v.is_finite()) {
            bad_lines.push(line);
            continue;
        }
        ys.push(row[yi]);
        xs.extend(row.iter().enumerate().filter(|(j, _)| *j != yi).map(|(_, v)| *v));
    }
    if !bad_lines.is_empty() {
        let shown: Vec<String> = bad_lines.iter().take(20).map(|l| l.to_string()).collect();
        return Err(CliError::io(format!("{}: non-finite values on lines {}", path.display(), shown.join(", "))));
    }
    if ys.is_empty() {
        return Err(CliError::io(format!("{}: no data rows", path.display())));
    }
    let p = header.len() - 1;
    let x = DMatrix::from_row_slice(ys.len(), p, &xs);
    let names = header.iter().enumerate().filter(|(j, _)| *j != yi).map(|(_, h)| h.clone()).collect();
    Ok(Dataset::with_names(x, DVector::from_vec(ys), names)?)
}

/// Writes `y` first, then the predictors, with a header.
pub fn write_dataset(path: &Path, data: &Dataset, response: &str) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let mut r = vec![fmt(data.y[i])];
        r.extend((0..data.p()).map(|j| fmt(data.x[(i, j)])));
        rows.push(r);
    }
    let mut header = vec![response.to_string()];
    header.extend(data.column_names.iter().cloned());
    write_rows(path, &header, &rows)
}

/// Shortest round-trip representation.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

/// Collects the files a command writes so the manifest can hash them.
pub struct OutDir {
    pub dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        write_rows(&self.dir.join(name), &header, rows)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(format!("cannot serialize {name}: {e}")))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Registers a file written directly under the directory.
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn hashes(&self) -> Result<BTreeMap<String, String>, CliError> {
        self.written.iter().map(|n| Ok((n.clone(), sha256_file(&self.dir.join(n))?))).collect()
    }
}
