//! From-scratch dense oracle used to cross-check the model implementation.
//!
//! Rebuilds the order relation directly from the layer rules (not from the
//! space's precomputed reachability), takes a brute-force closure, and
//! evaluates probabilities, expectation parameters, Fisher entries and the
//! KL divergence through dense model-matrix algebra.

use igbss::space::{SampleSpace, State};
use nalgebra::{DMatrix, DVector};

pub struct DenseOracle {
    /// `f[(i, j)] = 1` when state j precedes state i.
    pub f: DMatrix<f64>,
}

impl DenseOracle {
    pub fn new(space: &SampleSpace) -> Self {
        let n = space.len();
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        reach[0] = vec![true; n]; // bottom is the least element
        let states = space.states();
        for (i, si) in states.iter().enumerate() {
            for (j, sj) in states.iter().enumerate() {
                let direct = match (si, sj) {
                    (State::Mixing { sources, .. }, State::Source { row, .. }) => {
                        sources.contains(row)
                    }
                    (State::Source { row, sample }, State::Received { row: l, sample: m }) => {
                        sample == m && row != l
                    }
                    _ => false,
                };
                if direct {
                    reach[i][j] = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    let via: Vec<usize> = (0..n).filter(|&j| reach[k][j]).collect();
                    for j in via {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let f = DMatrix::from_fn(n, n, |i, j| if reach[j][i] { 1.0 } else { 0.0 });
        DenseOracle { f }
    }

    fn theta_full(&self, space: &SampleSpace, theta: &[f64]) -> DVector<f64> {
        let mut full = DVector::zeros(space.len());
        for (j, &t) in theta.iter().enumerate() {
            full[1 + j] = t;
        }
        full
    }

    /// Probabilities via `log p = F theta - psi`, normalized by log-sum-exp.
    pub fn p(&self, space: &SampleSpace, theta: &[f64]) -> (DVector<f64>, f64) {
        let logits = &self.f * self.theta_full(space, theta);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let psi = max + logits.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
        (logits.map(|a| (a - psi).exp()), psi)
    }

    /// Expectation parameters as `F^T p`.
    pub fn eta(&self, p: &DVector<f64>) -> DVector<f64> {
        self.f.transpose() * p
    }

    /// Fisher entry for states `s`, `t` by the covariance definition.
    pub fn fisher_entry(&self, p: &DVector<f64>, eta: &DVector<f64>, s: usize, t: usize) -> f64 {
        let mut joint = 0.0;
        for omega in 0..p.len() {
            joint += self.f[(omega, s)] * self.f[(omega, t)] * p[omega];
        }
        joint - eta[s] * eta[t]
    }

    /// KL divergence with the `0 log 0 = 0` convention.
    pub fn kl(&self, p_hat: &[f64], p: &DVector<f64>) -> f64 {
        p_hat
            .iter()
            .zip(p.iter())
            .filter(|(ph, _)| **ph > 0.0)
            .map(|(ph, pv)| ph * (ph.ln() - pv.ln()))
            .sum()
    }
}

/// Simple least-squares line fit returning (slope, intercept, r_squared).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    (slope, intercept, 1.0 - ss_res / ss_tot)
}
