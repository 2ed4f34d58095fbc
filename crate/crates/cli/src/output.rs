//! Plain-text artifacts: CSV tables, whitespace-separated matrices and JSON.
//!
//! Floats are written with 17 significant digits so files round-trip exactly
//! and repeated runs compare byte for byte.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()
}

pub fn read_matrix(path: &Path) -> io::Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("line {}: `{tok}`: {e}", lineno + 1))
                })
            })
            .collect::<io::Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("line {}: expected {} columns, got {}", lineno + 1, first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "matrix file is empty"));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// CSV with a header row; every record must match the header width.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, f64::MAX, 0.0, -2.5e17]);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn ragged_matrix_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        fs::write(&path, "1 2\n3\n").unwrap();
        assert!(read_matrix(&path).is_err());
    }
}
