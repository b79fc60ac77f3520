//! Log-linear model on the layered sample space.
//!
//! A parameter vector `theta` over the mixing and source layers determines a
//! probability for every state: `log p(omega)` is the sum of the parameters
//! below `omega` minus the log-partition value `psi`. The dual coordinates
//! `eta[omega]` hold the probability mass of each state's upset. Fitting
//! minimizes the KL divergence from an empirical distribution supported on
//! the received layer; its gradient is `eta - eta_hat` on the parameter set
//! and the per-layer Fisher information blocks precondition natural-gradient
//! updates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalMatrix;
use crate::space::{Layer, SampleSpace};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("theta has length {got}, parameter set has {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("theta[{0}] is not finite")]
    NonFiniteTheta(usize),
    #[error("signal shape {rows}x{cols} does not match the space ({expected_rows}x{expected_cols})")]
    ShapeMismatch { rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("sum normalization requires positive entries, found {value} at ({row},{col})")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error("min-max normalization requires a non-constant matrix")]
    ConstantMatrix,
}

/// Model state at a fixed `theta`: probabilities and dual coordinates.
///
/// Vectors are indexed by the space's state enumeration; `eta[0]` is the
/// bottom state's total mass (1 up to rounding) and is not a parameter.
#[derive(Debug, Clone)]
pub struct LogLinearState {
    pub theta: Vec<f64>,
    pub psi: f64,
    pub log_p: Vec<f64>,
    pub p: Vec<f64>,
    pub eta: Vec<f64>,
}

impl LogLinearState {
    /// Expectation parameters restricted to the parameter set.
    pub fn eta_on_params(&self) -> &[f64] {
        &self.eta[1..1 + self.theta.len()]
    }
}

/// How a received-signal matrix is turned into probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormalizationScheme {
    /// Divide by the total; requires positive entries.
    Sum,
    /// Shift into (0, 1] with slack `epsilon`, then divide by the total.
    /// `None` uses 1e-3 of the data range.
    MinMax { epsilon: Option<f64> },
    /// Softmax over all entries.
    ExpKernel,
}

/// Parameters of the applied normalization, sufficient to invert it exactly
/// and to recall the original data range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum NormalizationRecord {
    Sum { total: f64, data_min: f64, data_max: f64 },
    MinMax { epsilon: f64, total: f64, data_min: f64, data_max: f64 },
    ExpKernel { shift: f64, total: f64, data_min: f64, data_max: f64 },
}

impl NormalizationRecord {
    /// Maps a probability back to the signal value that produced it.
    pub fn invert(&self, value: f64) -> f64 {
        match *self {
            NormalizationRecord::Sum { total, .. } => value * total,
            NormalizationRecord::MinMax { epsilon, total, data_min, data_max } => {
                value * total * (data_max + epsilon - data_min) - epsilon + data_min
            }
            NormalizationRecord::ExpKernel { shift, total, .. } => (value * total).ln() + shift,
        }
    }

    /// Range of the original data.
    pub fn data_range(&self) -> (f64, f64) {
        match *self {
            NormalizationRecord::Sum { data_min, data_max, .. }
            | NormalizationRecord::MinMax { data_min, data_max, .. }
            | NormalizationRecord::ExpKernel { data_min, data_max, .. } => (data_min, data_max),
        }
    }
}

/// Normalized received signal as a distribution on the sample space.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    /// Full-length vector over the space; zero outside the received layer.
    pub p_hat: Vec<f64>,
    /// Expectation parameters of `p_hat` on the parameter set.
    pub eta_hat: Vec<f64>,
    pub normalization: NormalizationRecord,
}

/// Evaluates the model distribution at `theta` (indexed by the parameter
/// set, mixing block first). The partition value is computed by
/// log-sum-exp with max subtraction.
pub fn compute_p(space: &SampleSpace, theta: &[f64]) -> Result<LogLinearState, ModelError> {
    if theta.len() != space.param_count() {
        return Err(ModelError::ThetaLength { expected: space.param_count(), got: theta.len() });
    }
    if let Some(bad) = theta.iter().position(|t| !t.is_finite()) {
        return Err(ModelError::NonFiniteTheta(bad));
    }

    let total = space.len();
    let mut acc = vec![0.0f64; total];
    for (omega, slot) in acc.iter_mut().enumerate() {
        let mut sum = 0.0;
        for &j in space.param_downset(omega) {
            sum += theta[j as usize];
        }
        *slot = sum;
    }

    let max = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let psi = max + acc.iter().map(|a| (a - max).exp()).sum::<f64>().ln();

    let log_p: Vec<f64> = acc.iter().map(|a| a - psi).collect();
    let p: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
    let eta = compute_eta(space, &p);

    Ok(LogLinearState { theta: theta.to_vec(), psi, log_p, p, eta })
}

/// Expectation parameters of a probability vector: `eta[omega]` is the mass
/// of the upset of `omega`. Received states are maximal, so their `eta`
/// equals their probability.
pub fn compute_eta(space: &SampleSpace, p: &[f64]) -> Vec<f64> {
    let mut eta = vec![0.0f64; space.len()];
    eta[0] = p.iter().sum();
    for (omega, &mass) in p.iter().enumerate() {
        for &j in space.param_downset(omega) {
            eta[1 + j as usize] += mass;
        }
    }
    let received = space.received_offset();
    eta[received..].copy_from_slice(&p[received..]);
    eta
}

/// Normalizes a received signal into an empirical distribution on the space.
pub fn empirical_distribution(
    space: &SampleSpace,
    x: &SignalMatrix,
    scheme: NormalizationScheme,
) -> Result<EmpiricalDistribution, ModelError> {
    if x.rows != space.received_rows() || x.cols != space.samples() {
        return Err(ModelError::ShapeMismatch {
            rows: x.rows,
            cols: x.cols,
            expected_rows: space.received_rows(),
            expected_cols: space.samples(),
        });
    }

    let (data_min, data_max) = x.min_max();
    let mut weights = Vec::with_capacity(x.data.len());
    let record = match scheme {
        NormalizationScheme::Sum => {
            for (i, &v) in x.data.iter().enumerate() {
                if v <= 0.0 {
                    return Err(ModelError::NonPositiveEntry {
                        row: i / x.cols,
                        col: i % x.cols,
                        value: v,
                    });
                }
                weights.push(v);
            }
            let total = weights.iter().sum::<f64>();
            NormalizationRecord::Sum { total, data_min, data_max }
        }
        NormalizationScheme::MinMax { epsilon } => {
            if data_max <= data_min {
                return Err(ModelError::ConstantMatrix);
            }
            let epsilon = epsilon.unwrap_or(1e-3 * (data_max - data_min));
            let denom = data_max + epsilon - data_min;
            weights.extend(x.data.iter().map(|&v| (v + epsilon - data_min) / denom));
            let total = weights.iter().sum::<f64>();
            NormalizationRecord::MinMax { epsilon, total, data_min, data_max }
        }
        NormalizationScheme::ExpKernel => {
            let shift = data_max;
            weights.extend(x.data.iter().map(|&v| (v - shift).exp()));
            let total = weights.iter().sum::<f64>();
            NormalizationRecord::ExpKernel { shift, total, data_min, data_max }
        }
    };

    let total = weights.iter().sum::<f64>();
    let mut p_hat = vec![0.0f64; space.len()];
    let offset = space.received_offset();
    // Received enumeration is row-major, matching the signal layout.
    for (i, w) in weights.iter().enumerate() {
        p_hat[offset + i] = w / total;
    }

    let mut eta_hat = vec![0.0f64; space.param_count()];
    for (omega, &mass) in p_hat.iter().enumerate().skip(offset) {
        for &j in space.param_downset(omega) {
            eta_hat[j as usize] += mass;
        }
    }

    Ok(EmpiricalDistribution { p_hat, eta_hat, normalization: record })
}

/// KL divergence from the empirical distribution to the model state, with
/// the `0 log 0 = 0` convention off the received layer.
pub fn kl_divergence(space: &SampleSpace, emp: &EmpiricalDistribution, state: &LogLinearState) -> f64 {
    let offset = space.received_offset();
    emp.p_hat[offset..]
        .iter()
        .zip(&state.log_p[offset..])
        .filter(|(ph, _)| **ph > 0.0)
        .map(|(ph, lp)| ph * (ph.ln() - lp))
        .sum()
}

/// Gradient of the KL divergence in `theta`: the difference of expectation
/// parameters on the parameter set.
pub fn kl_gradient(state: &LogLinearState, emp: &EmpiricalDistribution) -> Vec<f64> {
    state
        .eta_on_params()
        .iter()
        .zip(&emp.eta_hat)
        .map(|(eta, eta_hat)| eta - eta_hat)
        .collect()
}

/// Fisher information restricted to one parameter layer.
#[derive(Debug, Clone)]
pub struct FisherBlock {
    pub layer: Layer,
    pub matrix: DMatrix<f64>,
}

/// Builds the Fisher information block for the source or mixing layer:
/// `g[s,s'] = sum_omega 1[s<=omega] 1[s'<=omega] p(omega) - eta_s eta_s'`.
/// Symmetric by construction.
pub fn fisher_block(space: &SampleSpace, state: &LogLinearState, layer: Layer) -> FisherBlock {
    let mixing = space.mixing_count();
    let (dim, base) = match layer {
        Layer::Mixing => (mixing, 0),
        Layer::Source => (space.source_count(), mixing),
        _ => panic!("fisher_block is defined for the mixing and source layers"),
    };

    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for omega in 0..space.len() {
        let mass = state.p[omega];
        let (mix_part, src_part) = space.split_param_downset(omega);
        let part = match layer {
            Layer::Mixing => mix_part,
            _ => src_part,
        };
        for (ai, &ja) in part.iter().enumerate() {
            let a = ja as usize - base;
            for &jb in &part[ai..] {
                let b = jb as usize - base;
                g[(a, b)] += mass;
            }
        }
    }

    let eta = &state.eta_on_params()[base..base + dim];
    for a in 0..dim {
        for b in a..dim {
            let v = g[(a, b)] - eta[a] * eta[b];
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }

    FisherBlock { layer, matrix: g }
}
