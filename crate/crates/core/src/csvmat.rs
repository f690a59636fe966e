//! Headerless numeric CSV matrices (embedding files, text-provider files).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Parses rows of comma-separated floats. Blank lines and `#` comments are
/// skipped; every row must have the same width.
pub fn parse_matrix_csv<S: Real>(text: &str, path: &Path) -> Result<Array2<S>> {
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: lineno + 1,
                column: cells.len().min(w) + 1,
                msg: format!("expected {w} cells, found {}", cells.len()),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: lineno + 1,
                column: c + 1,
                msg: format!("non-numeric cell `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: lineno + 1,
                    column: c + 1,
                    msg: format!("non-finite value `{cell}`"),
                });
            }
            data.push(S::lit(v));
        }
        rows += 1;
    }
    let w = width.ok_or_else(|| Error::Invalid(format!("{}: no rows", path.display())))?;
    Ok(Array2::from_shape_vec((rows, w), data).expect("rectangular by construction"))
}

pub fn read_matrix_csv<S: Real>(path: impl AsRef<Path>) -> Result<Array2<S>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

pub fn write_matrix_csv<S: Real>(m: &Array2<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.as_f64().to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
