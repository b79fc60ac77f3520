//! Dense row-major signal matrices and small per-signal transforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a signal matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalRole {
    Source,
    Received,
    Recovered,
}

/// Row-major matrix of signals: one row per signal, one column per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMatrix {
    pub role: SignalRole,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("data length {got} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, got: usize },
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("non-finite entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
}

impl SignalMatrix {
    pub fn new(role: SignalRole, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SignalError> {
        if data.len() != rows * cols {
            return Err(SignalError::BadLength { rows, cols, got: data.len() });
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { row: bad / cols, col: bad % cols });
        }
        Ok(SignalMatrix { role, rows, cols, data })
    }

    pub fn zeros(role: SignalRole, rows: usize, cols: usize) -> Self {
        SignalMatrix { role, rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &SignalMatrix) -> Result<(), SignalError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(SignalError::ShapeMismatch(self.rows, self.cols, other.rows, other.cols));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn scale(&self, factor: f64) -> SignalMatrix {
        SignalMatrix {
            role: self.role,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Min-max normalizes each row into [0, 1]. A constant row maps to 0.5.
    pub fn minmax_rows(&self) -> SignalMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            if range == 0.0 {
                row.fill(0.5);
            } else {
                for v in row.iter_mut() {
                    *v = (*v - lo) / range;
                }
            }
        }
        out
    }

    /// Maps each row affinely from [row min, row max] onto [lo, hi].
    pub fn rescale_rows_to(&self, lo: f64, hi: f64) -> SignalMatrix {
        let mut out = self.minmax_rows();
        for v in out.data.iter_mut() {
            *v = lo + *v * (hi - lo);
        }
        out
    }
}

/// Pearson correlation of two equal-length slices; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}
