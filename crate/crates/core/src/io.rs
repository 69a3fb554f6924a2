//! Matrix CSV files and small file helpers.
//!
//! A matrix file starts with a `rows,cols` header followed by `rows` lines of
//! `cols` comma-separated numbers. Blank lines and lines starting with `#` are
//! ignored.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn parse_matrix(text: &str, source_name: &str) -> Result<DMatrix<f64>> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing `rows,cols` header".into()))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    let [rows, cols] = dims.as_slice() else {
        return Err(err(hline, format!("expected `rows,cols` header, found `{header}`")));
    };
    let rows: usize = rows.parse().map_err(|_| err(hline, format!("invalid row count `{rows}`")))?;
    let cols: usize = cols.parse().map_err(|_| err(hline, format!("invalid column count `{cols}`")))?;

    let mut out = DMatrix::zeros(rows, cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(err(lineno, format!("more than {rows} data rows")));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(err(lineno, format!("expected {cols} values, found {}", fields.len())));
        }
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| err(lineno, format!("invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value `{field}`")));
            }
            out[(seen, j)] = v;
        }
        seen += 1;
    }
    if seen != rows {
        return Err(err(hline, format!("header declares {rows} rows, found {seen}")));
    }
    Ok(out)
}

/// Shortest round-trip formatting, one row per line.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{},{}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_text(path)?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &format_matrix(m))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
