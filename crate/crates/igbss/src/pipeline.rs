//! End-to-end separation and evaluation.
//!
//! `separate` normalizes a received matrix, fits the model, reads the source
//! layer probabilities row by row and maps them back onto the input data
//! range. Evaluation matches recovered rows to ground truth by exhaustive
//! permutation (optionally with per-signal sign flips), min-max normalizes
//! both sides per signal, and reports RMSE, SNR and Pearson correlation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    empirical_distribution, ModelError, NormalizationRecord, NormalizationScheme,
};
use crate::optim::{fit, FitConfig, FitError, FitReport};
use crate::signal::{pearson, SignalError, SignalMatrix, SignalRole};
use crate::space::{build_sample_space, SpaceError, State};

/// Exhaustive permutation matching is factorial; more signals than this is
/// refused.
pub const MAX_MATCH_SIGNALS: usize = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("permutation matching supports at most {MAX_MATCH_SIGNALS} signals, got {0}")]
    TooManySignals(usize),
}

/// A fitted mixing-layer parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingTheta {
    pub row: usize,
    pub sources: Vec<usize>,
    pub theta: f64,
}

/// Output of `separate`.
#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// Recovered sources, per-signal min-max rescaled onto the input range.
    pub recovered: SignalMatrix,
    /// Raw source-layer probabilities (each in (0, 1)).
    pub source_probabilities: SignalMatrix,
    /// Fitted mixing-layer parameters, all interaction orders.
    pub mixing_params: Vec<MixingTheta>,
    pub report: FitReport,
    pub normalization: NormalizationRecord,
}

/// Recovers `sources` signals from the received matrix `x` with interactions
/// up to `order`. Deterministic for a fixed configuration and seed.
pub fn separate(
    x: &SignalMatrix,
    sources: usize,
    order: usize,
    scheme: NormalizationScheme,
    config: &FitConfig,
) -> Result<SeparationResult, PipelineError> {
    let space = build_sample_space(x.rows, sources, x.cols, order)?;
    let emp = empirical_distribution(&space, x, scheme)?;
    let normalization = emp.normalization.clone();
    let (state, report) = fit(&space, &emp, config)?;

    let samples = space.samples();
    let mut probabilities = SignalMatrix::zeros(SignalRole::Recovered, sources, samples);
    for row in 0..sources {
        for sample in 0..samples {
            probabilities.set(row, sample, state.p[space.source_index(row, sample)]);
        }
    }
    let (lo, hi) = normalization.data_range();
    let recovered = probabilities.rescale_rows_to(lo, hi);

    let mixing_params = (1..=space.mixing_count())
        .map(|idx| match space.state(idx) {
            State::Mixing { row, sources } => MixingTheta {
                row: *row,
                sources: sources.clone(),
                theta: state.theta[idx - 1],
            },
            _ => unreachable!("mixing states precede all others"),
        })
        .collect();

    Ok(SeparationResult { recovered, source_probabilities: probabilities, mixing_params, report, normalization })
}

/// Best assignment of recovered rows to truth rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationMatch {
    /// `permutation[i]` is the recovered row matched to truth row `i`.
    pub permutation: Vec<usize>,
    /// Sign applied to each matched row (+1 or -1; -1 only when allowed).
    pub signs: Vec<f64>,
    /// Total Euclidean distance of the matched assignment.
    pub distance: f64,
}

impl PermutationMatch {
    /// Applies the permutation and signs to the recovered matrix.
    pub fn apply(&self, recovered: &SignalMatrix) -> SignalMatrix {
        let mut out = SignalMatrix::zeros(recovered.role, recovered.rows, recovered.cols);
        for (i, (&j, &sign)) in self.permutation.iter().zip(&self.signs).enumerate() {
            for c in 0..recovered.cols {
                out.set(i, c, sign * recovered.get(j, c));
            }
        }
        out
    }
}

fn permutations_lex(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current.push(j);
                rec(n, current, used, out);
                current.pop();
                used[j] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

/// Exhaustively minimizes total Euclidean distance over row permutations,
/// and over per-signal sign flips when `allow_sign` is set. Ties resolve to
/// the lexicographically smallest permutation.
pub fn match_permutation(
    recovered: &SignalMatrix,
    truth: &SignalMatrix,
    allow_sign: bool,
) -> Result<(PermutationMatch, SignalMatrix), PipelineError> {
    recovered.same_shape(truth)?;
    let n = truth.rows;
    if n > MAX_MATCH_SIGNALS {
        return Err(PipelineError::TooManySignals(n));
    }

    // cost[i][j] = (squared distance, sign) of the best orientation of
    // recovered row j against truth row i
    let mut cost = vec![vec![(0.0f64, 1.0f64); n]; n];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let t = truth.row(i);
            let r = recovered.row(j);
            let plus: f64 = t.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
            let minus: f64 = t.iter().zip(r).map(|(a, b)| (a + b) * (a + b)).sum();
            *cell = if allow_sign && minus < plus { (minus, -1.0) } else { (plus, 1.0) };
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations_lex(n) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j].0).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (total, permutation) = best.expect("at least one permutation");
    let signs: Vec<f64> = permutation.iter().enumerate().map(|(i, &j)| cost[i][j].1).collect();
    let matched = PermutationMatch { permutation, signs, distance: total.sqrt() };
    let applied = matched.apply(recovered);
    Ok((matched, applied))
}

/// Root mean squared error over all entries.
pub fn rmse(recovered: &SignalMatrix, truth: &SignalMatrix) -> Result<f64, PipelineError> {
    recovered.same_shape(truth)?;
    let n = recovered.data.len() as f64;
    let sum: f64 = recovered.data.iter().zip(&truth.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / n).sqrt())
}

/// Signal-to-noise ratio in dB: `20 log10(|truth| / |truth - recovered|)`,
/// `f64::INFINITY` when the error norm is zero.
pub fn snr_db(recovered: &SignalMatrix, truth: &SignalMatrix) -> Result<f64, PipelineError> {
    recovered.same_shape(truth)?;
    let signal: f64 = truth.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let error: f64 =
        recovered.data.iter().zip(&truth.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (signal / error).log10())
}

/// Per-signal evaluation metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalMetrics {
    pub rmse: f64,
    pub snr_db: f64,
    pub pearson: f64,
}

/// Full evaluation of a recovered matrix against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    pub per_signal: Vec<SignalMetrics>,
    /// Aggregate metrics over the min-max normalized matrices.
    pub rmse: f64,
    pub snr_db: f64,
}

/// Matches recovered rows to truth rows on the raw signals, then min-max
/// normalizes each signal of both sides and computes metrics.
pub fn evaluate_separation(
    recovered: &SignalMatrix,
    truth: &SignalMatrix,
    allow_sign: bool,
) -> Result<EvalReport, PipelineError> {
    let (matched, applied) = match_permutation(recovered, truth, allow_sign)?;
    let rec_norm = applied.minmax_rows();
    let truth_norm = truth.minmax_rows();

    let mut per_signal = Vec::with_capacity(truth.rows);
    for i in 0..truth.rows {
        let rec_row = SignalMatrix::new(SignalRole::Recovered, 1, truth.cols, rec_norm.row(i).to_vec())?;
        let truth_row = SignalMatrix::new(SignalRole::Source, 1, truth.cols, truth_norm.row(i).to_vec())?;
        per_signal.push(SignalMetrics {
            rmse: rmse(&rec_row, &truth_row)?,
            snr_db: snr_db(&rec_row, &truth_row)?,
            pearson: pearson(applied.row(i), truth.row(i)),
        });
    }

    Ok(EvalReport {
        permutation: matched.permutation,
        signs: matched.signs,
        per_signal,
        rmse: rmse(&rec_norm, &truth_norm)?,
        snr_db: snr_db(&rec_norm, &truth_norm)?,
    })
}
