//! On-disk formats: "rows,cols"-headered CSV matrices and binary (P6) PPM
//! rasters.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::signal::{SignalMatrix, SignalRole};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Csv { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Ppm { path: String, msg: String },
}

fn io_err(path: &Path, source: io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Csv { path: path.display().to_string(), line, msg: msg.into() }
}

/// Writes a matrix as CSV: a `rows,cols` header line, then one line per row.
pub fn write_csv(path: impl AsRef<Path>, matrix: &SignalMatrix) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!("{},{}\n", matrix.rows, matrix.cols));
    for r in 0..matrix.rows {
        let cells: Vec<String> = matrix.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a `rows,cols`-headered CSV matrix. Errors carry 1-based line
/// numbers.
pub fn read_csv(path: impl AsRef<Path>, role: SignalRole) -> Result<SignalMatrix, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| csv_err(path, 1, "empty file"))?;
    let mut parts = header.split(',');
    let parse_dim = |part: Option<&str>, what: &str| -> Result<usize, DataError> {
        part.ok_or_else(|| csv_err(path, 1, format!("header must be rows,cols; missing {what}")))?
            .trim()
            .parse::<usize>()
            .map_err(|_| csv_err(path, 1, format!("header must be rows,cols; bad {what}")))
    };
    let rows = parse_dim(parts.next(), "rows")?;
    let cols = parse_dim(parts.next(), "cols")?;
    if parts.next().is_some() {
        return Err(csv_err(path, 1, "header must be exactly rows,cols"));
    }

    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| csv_err(path, r + 1, format!("expected {rows} data lines")))?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(csv_err(path, idx + 1, format!("expected {cols} columns, got {}", cells.len())));
        }
        for (c, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                csv_err(path, idx + 1, format!("column {}: not a number: {cell:?}", c + 1))
            })?;
            data.push(value);
        }
    }
    if let Some((idx, line)) = lines.next() {
        if !line.trim().is_empty() {
            return Err(csv_err(path, idx + 1, "trailing data after declared rows"));
        }
    }

    SignalMatrix::new(role, rows, cols, data)
        .map_err(|e| csv_err(path, 1, e.to_string()))
}

/// An image raster, flattened row-major with channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a binary (P6) PPM with 8-bit samples. Header comments are allowed.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Raster, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ppm_err = |msg: &str| DataError::Ppm { path: path.display().to_string(), msg: msg.into() };

    let mut pos = 0usize;
    let token = |bytes: &[u8], pos: &mut usize| -> Option<Vec<u8>> {
        // skip whitespace and # comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (*pos > start).then(|| bytes[start..*pos].to_vec())
    };

    let magic = token(&bytes, &mut pos).ok_or_else(|| ppm_err("missing magic"))?;
    if magic != b"P6" {
        return Err(ppm_err("not a binary PPM (expected P6)"));
    }
    let mut dims = [0usize; 3];
    for (i, what) in ["width", "height", "maxval"].iter().enumerate() {
        let tok = token(&bytes, &mut pos).ok_or_else(|| ppm_err(&format!("missing {what}")))?;
        dims[i] = std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ppm_err(&format!("bad {what}")))?;
    }
    let [width, height, maxval] = dims;
    if maxval == 0 || maxval > 255 {
        return Err(ppm_err("only 8-bit samples are supported"));
    }
    pos += 1; // single whitespace after maxval
    let expected = width * height * 3;
    if bytes.len() < pos + expected {
        return Err(ppm_err("truncated pixel data"));
    }
    let data = bytes[pos..pos + expected].iter().map(|&b| b as f64).collect();
    Ok(Raster { width, height, channels: 3, data })
}

/// Reads a raster from PPM (by `.ppm` extension) or from a CSV matrix
/// treated as a single-channel image.
pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster, DataError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        read_ppm(path)
    } else {
        let m = read_csv(path, SignalRole::Source)?;
        Ok(Raster { width: m.cols, height: m.rows, channels: 1, data: m.data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("igbss-io-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = SignalMatrix::new(
            SignalRole::Source,
            2,
            3,
            vec![1.0, -2.5, 3.25e-7, 4.0, 5.5, -6.125],
        )
        .unwrap();
        let path = tmpfile("roundtrip.csv");
        write_csv(&path, &m).unwrap();
        let back = read_csv(&path, SignalRole::Source).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let path = tmpfile("bad.csv");
        fs::write(&path, "2,2\n1,2\n3,oops\n").unwrap();
        match read_csv(&path, SignalRole::Source) {
            Err(DataError::Csv { line: 3, msg, .. }) => assert!(msg.contains("not a number")),
            other => panic!("unexpected: {other:?}"),
        }
        fs::write(&path, "2,2\n1,2,3\n4,5\n").unwrap();
        match read_csv(&path, SignalRole::Source) {
            Err(DataError::Csv { line: 2, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(read_csv(&path, SignalRole::Source), Err(DataError::Csv { line: 1, .. })));
    }

    #[test]
    fn ppm_parses_with_comments() {
        let path = tmpfile("tiny.ppm");
        let mut bytes = b"P6\n# test image\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        fs::write(&path, bytes).unwrap();
        let raster = read_ppm(&path).unwrap();
        assert_eq!((raster.width, raster.height, raster.channels), (2, 1, 3));
        assert_eq!(raster.data, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
    }

    #[test]
    fn ppm_rejects_other_formats() {
        let path = tmpfile("bad.ppm");
        fs::write(&path, b"P3\n1 1\n255\n1 2 3\n").unwrap();
        assert!(matches!(read_ppm(&path), Err(DataError::Ppm { .. })));
        fs::write(&path, b"P6\n1 1\n65535\n").unwrap();
        assert!(matches!(read_ppm(&path), Err(DataError::Ppm { .. })));
    }
}
