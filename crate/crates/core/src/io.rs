//! CSV and JSON persistence.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Shortest round-trip representation, so output is reproducible bit for bit.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_err(path, io),
            other => parse_err(path, format!("{other:?}")),
        })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(path, format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Matrix CSV: first line `rows,cols`, then one line per row.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows(path)?;
    let header = rows.first().ok_or_else(|| parse_err(path, "empty file"))?;
    if header.len() != 2 {
        return Err(parse_err(path, "header must be `rows,cols`"));
    }
    let (nr, nc) = (header[0] as usize, header[1] as usize);
    if rows.len() != nr + 1 {
        return Err(parse_err(path, format!("expected {nr} data rows, found {}", rows.len() - 1)));
    }
    let mut m = DMatrix::zeros(nr, nc);
    for (i, row) in rows[1..].iter().enumerate() {
        if row.len() != nc {
            return Err(parse_err(path, format!("row {i} has {} entries, expected {nc}", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = format!("{},{}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Table CSV with a named header row.
pub fn write_table_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read a table CSV with one header row; returns (header, rows).
pub fn read_table_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(path, format!("line {}: {e}", i + 2))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(parse_err(path, format!("line {} has {} fields, header has {}", i + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Metadata attached to every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar<'a> {
    pub artifact: &'a str,
    pub config_hash: &'a str,
    pub version: &'a str,
}

/// Write `<file>.meta.json` next to an artifact.
pub fn write_sidecar(artifact: &Path, config_hash: &str) -> Result<()> {
    let name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let side = artifact.with_file_name(format!("{name}.meta.json"));
    write_json(
        &side,
        &Sidecar {
            artifact: &name,
            config_hash,
            version: ARTIFACT_VERSION,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0e-17, 0.1, 1.0 / 3.0, 7.0]);
        write_matrix_csv(&p, &m).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("2,3\n"));
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }

    #[test]
    fn table_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let header = vec!["t".to_string(), "x0".to_string()];
        write_table_csv(&p, &header, vec![vec![0.0, 1.5], vec![0.1, -2.0]]).unwrap();
        let (h, rows) = read_table_csv(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(rows, vec![vec![0.0, 1.5], vec![0.1, -2.0]]);
    }

    #[test]
    fn malformed_matrix_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        write_text(&p, "2,2\n1,2\n3\n").unwrap();
        assert!(matches!(read_matrix_csv(&p), Err(Error::Parse { .. })));
    }
}
