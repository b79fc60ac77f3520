//! Fitting by gradient descent or block natural gradient.
//!
//! The objective is convex in `theta`, so both methods converge to the same
//! distribution; convergence is declared on the sup norm of the gradient
//! `eta - eta_hat`. Natural-gradient steps solve one damped Fisher system
//! per layer and fall back to a unit gradient step on a block whose system
//! cannot be solved.
//!
//! Because the empirical distribution puts no mass below the received layer,
//! the minimizer usually lies on the closure of the family: some state
//! probabilities tend to zero and the corresponding `theta` coordinates
//! drift without bound as the tolerance tightens. The fitted distribution
//! (and with it every recovered signal) is still unique; the raw `theta`
//! vector is only meaningful up to the drift directions and can retain an
//! offset from its initialization.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    compute_p, fisher_block, kl_divergence, kl_gradient, EmpiricalDistribution, LogLinearState,
    ModelError,
};
use crate::space::{Layer, SampleSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    GradientDescent,
    NaturalGradient,
}

/// Parameter initialization. Random initialization exists to exercise the
/// uniqueness of the optimum; zeros is the reproducible default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    RandomNormal { sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    /// Learning rate, gradient descent only.
    pub lr: f64,
    /// Convergence tolerance on `max |eta - eta_hat|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Added to the Fisher diagonal before each natural-gradient solve.
    pub damping: f64,
    pub init: Init,
}

impl FitConfig {
    pub fn gradient_descent() -> Self {
        FitConfig {
            method: Method::GradientDescent,
            lr: 1.0,
            tol: 1e-8,
            max_iter: 100_000,
            damping: 0.0,
            init: Init::Zeros,
        }
    }

    pub fn natural_gradient() -> Self {
        FitConfig {
            method: Method::NaturalGradient,
            lr: 1.0,
            tol: 1e-8,
            max_iter: 1_000,
            damping: 1e-9,
            init: Init::Zeros,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        let lr_ok = self.lr.is_finite() && self.lr > 0.0;
        if !lr_ok {
            return Err(FitError::BadConfig("lr must be a positive finite number"));
        }
        let tol_ok = self.tol.is_finite() && self.tol > 0.0;
        if !tol_ok {
            return Err(FitError::BadConfig("tol must be a positive finite number"));
        }
        let damping_ok = self.damping.is_finite() && self.damping >= 0.0;
        if !damping_ok {
            return Err(FitError::BadConfig("damping must be nonnegative and finite"));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig::natural_gradient()
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("theta became non-finite at iteration {iteration}")]
    NonFiniteTheta { iteration: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
}

/// Outcome diagnostics of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub final_kl: f64,
    pub final_grad_inf_norm: f64,
    pub converged: bool,
    /// KL divergence at every visited iterate, the final one included.
    pub kl_trace: Vec<f64>,
}

/// Draws the starting parameter vector.
pub fn initial_theta(space: &SampleSpace, init: &Init) -> Vec<f64> {
    match *init {
        Init::Zeros => vec![0.0; space.param_count()],
        Init::RandomNormal { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).expect("sigma must be finite and nonnegative");
            (0..space.param_count()).map(|_| normal.sample(&mut rng)).collect()
        }
    }
}

fn grad_inf_norm(delta: &[f64]) -> f64 {
    delta.iter().fold(0.0f64, |acc, d| acc.max(d.abs()))
}

fn gd_update(theta: &[f64], delta: &[f64], lr: f64) -> Vec<f64> {
    theta.iter().zip(delta).map(|(t, d)| t - lr * d).collect()
}

/// Solves `(g + damping I) x = rhs`; Cholesky first, LU as backup.
pub(crate) fn solve_damped(g: &DMatrix<f64>, rhs: &[f64], damping: f64) -> Option<DVector<f64>> {
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += damping;
    }
    let b = DVector::from_column_slice(rhs);
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(&b));
    }
    a.lu().solve(&b)
}

struct NgStep {
    theta: Vec<f64>,
    evaluate_time: Duration,
    fisher_time: Duration,
    solve_time: Duration,
}

fn apply_block_step(
    g: &DMatrix<f64>,
    rhs: &[f64],
    damping: f64,
    theta: &mut [f64],
    base: usize,
) {
    match solve_damped(g, rhs, damping) {
        Some(step) => {
            for (offset, value) in step.iter().enumerate() {
                theta[base + offset] -= value;
            }
        }
        None => {
            // Singular even after damping: unit gradient step on this block.
            for (offset, value) in rhs.iter().enumerate() {
                theta[base + offset] -= value;
            }
        }
    }
}

/// Source block first with the Fisher information of the given iterate, then
/// the mixing block with the Fisher information of the refreshed iterate.
/// A simultaneous update of both blocks double-corrects the shared
/// received-layer residual and oscillates; the sequential sweep contracts.
fn ng_update(
    space: &SampleSpace,
    state: &LogLinearState,
    delta: &[f64],
    emp: &EmpiricalDistribution,
    damping: f64,
) -> Result<NgStep, ModelError> {
    let mixing = space.mixing_count();
    let mut theta = state.theta.clone();
    let mut evaluate_time = Duration::ZERO;
    let mut fisher_time = Duration::ZERO;
    let mut solve_time = Duration::ZERO;

    let t0 = Instant::now();
    let g_source = fisher_block(space, state, Layer::Source);
    fisher_time += t0.elapsed();
    let t1 = Instant::now();
    apply_block_step(&g_source.matrix, &delta[mixing..], damping, &mut theta, mixing);
    solve_time += t1.elapsed();

    let t2 = Instant::now();
    let mid = compute_p(space, &theta)?;
    let mid_delta = kl_gradient(&mid, emp);
    evaluate_time += t2.elapsed();

    let t3 = Instant::now();
    let g_mixing = fisher_block(space, &mid, Layer::Mixing);
    fisher_time += t3.elapsed();
    let t4 = Instant::now();
    apply_block_step(&g_mixing.matrix, &mid_delta[..mixing], damping, &mut theta, 0);
    solve_time += t4.elapsed();

    Ok(NgStep { theta, evaluate_time, fisher_time, solve_time })
}

/// One gradient-descent update from `state`.
pub fn fit_step_gd(state: &LogLinearState, emp: &EmpiricalDistribution, lr: f64) -> Vec<f64> {
    gd_update(&state.theta, &kl_gradient(state, emp), lr)
}

/// One block natural-gradient update from `state`.
pub fn fit_step_ng(
    space: &SampleSpace,
    state: &LogLinearState,
    emp: &EmpiricalDistribution,
    damping: f64,
) -> Result<Vec<f64>, ModelError> {
    Ok(ng_update(space, state, &kl_gradient(state, emp), emp, damping)?.theta)
}

/// Minimizes the KL divergence from `emp` over the model family.
///
/// Stops when `max |eta - eta_hat| <= tol` or after `max_iter` updates; the
/// returned state is the last evaluated iterate either way.
pub fn fit(
    space: &SampleSpace,
    emp: &EmpiricalDistribution,
    config: &FitConfig,
) -> Result<(LogLinearState, FitReport), FitError> {
    config.validate()?;

    let mut state = compute_p(space, &initial_theta(space, &config.init))?;
    let mut kl_trace = Vec::new();
    let mut iterations = 0;
    let (converged, final_grad) = loop {
        let delta = kl_gradient(&state, emp);
        let g_inf = grad_inf_norm(&delta);
        kl_trace.push(kl_divergence(space, emp, &state));
        if g_inf <= config.tol {
            break (true, g_inf);
        }
        if iterations >= config.max_iter {
            break (false, g_inf);
        }

        let next = match config.method {
            Method::GradientDescent => gd_update(&state.theta, &delta, config.lr),
            Method::NaturalGradient => {
                ng_update(space, &state, &delta, emp, config.damping)?.theta
            }
        };
        if next.iter().any(|t| !t.is_finite()) {
            return Err(FitError::NonFiniteTheta { iteration: iterations });
        }
        state = compute_p(space, &next)?;
        iterations += 1;
    };

    let report = FitReport {
        iterations,
        final_kl: *kl_trace.last().expect("trace has at least one entry"),
        final_grad_inf_norm: final_grad,
        converged,
        kl_trace,
    };
    Ok((state, report))
}

/// Wall-clock phase split of natural-gradient iterations.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct NgPhaseBreakdown {
    /// Probability, eta and gradient evaluation.
    pub evaluate: Duration,
    /// Fisher block assembly.
    pub fisher: Duration,
    /// Damped linear solves and the update.
    pub solve: Duration,
}

/// Timing of a fixed number of optimizer iterations, convergence ignored.
#[derive(Debug, Clone, Copy)]
pub struct IterationTiming {
    pub iterations: usize,
    pub total: Duration,
    pub per_iteration: Duration,
    pub ng_phases: Option<NgPhaseBreakdown>,
}

/// Runs exactly `iterations` updates from the configured initialization and
/// reports wall-clock cost; used by the scaling benchmark.
pub fn time_iterations(
    space: &SampleSpace,
    emp: &EmpiricalDistribution,
    config: &FitConfig,
    iterations: usize,
) -> Result<IterationTiming, FitError> {
    config.validate()?;

    let started = Instant::now();
    let mut phases = NgPhaseBreakdown::default();
    let t0 = Instant::now();
    let mut state = compute_p(space, &initial_theta(space, &config.init))?;
    let mut delta = kl_gradient(&state, emp);
    phases.evaluate += t0.elapsed();

    for i in 0..iterations {
        let next = match config.method {
            Method::GradientDescent => gd_update(&state.theta, &delta, config.lr),
            Method::NaturalGradient => {
                let step = ng_update(space, &state, &delta, emp, config.damping)?;
                phases.evaluate += step.evaluate_time;
                phases.fisher += step.fisher_time;
                phases.solve += step.solve_time;
                step.theta
            }
        };
        if next.iter().any(|t| !t.is_finite()) {
            return Err(FitError::NonFiniteTheta { iteration: i });
        }
        let t1 = Instant::now();
        state = compute_p(space, &next)?;
        delta = kl_gradient(&state, emp);
        phases.evaluate += t1.elapsed();
    }

    let total = started.elapsed();
    Ok(IterationTiming {
        iterations,
        total,
        per_iteration: total / iterations.max(1) as u32,
        ng_phases: matches!(config.method, Method::NaturalGradient).then_some(phases),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{empirical_distribution, NormalizationScheme};
    use crate::signal::{SignalMatrix, SignalRole};
    use crate::space::build_sample_space;

    fn fixture() -> (SampleSpace, EmpiricalDistribution) {
        let space = build_sample_space(2, 2, 2, 1).unwrap();
        let x = SignalMatrix::new(SignalRole::Received, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let emp = empirical_distribution(&space, &x, NormalizationScheme::Sum).unwrap();
        (space, emp)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (space, mut emp) = fixture();
        let state = compute_p(&space, &vec![0.1; space.param_count()]).unwrap();
        emp.eta_hat = state.eta_on_params().to_vec();
        assert_eq!(fit_step_gd(&state, &emp, 1.0), state.theta);
        assert_eq!(fit_step_ng(&space, &state, &emp, 1e-9).unwrap(), state.theta);
    }

    #[test]
    fn gd_step_decreases_kl() {
        let (space, emp) = fixture();
        let state = compute_p(&space, &vec![0.0; space.param_count()]).unwrap();
        let before = kl_divergence(&space, &emp, &state);
        let next = compute_p(&space, &fit_step_gd(&state, &emp, 0.1)).unwrap();
        let after = kl_divergence(&space, &emp, &next);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn ng_step_is_newton_on_scalar_block() {
        let space = build_sample_space(2, 1, 1, 1).unwrap();
        let x = SignalMatrix::new(SignalRole::Received, 2, 1, vec![1.0, 3.0]).unwrap();
        let emp = empirical_distribution(&space, &x, NormalizationScheme::Sum).unwrap();
        let state = compute_p(&space, &vec![0.0; space.param_count()]).unwrap();

        let damping = 1e-9;
        let theta = fit_step_ng(&space, &state, &emp, damping).unwrap();

        let z_param = space.mixing_count(); // single source parameter
        let delta = kl_gradient(&state, &emp)[z_param];
        let g = fisher_block(&space, &state, Layer::Source).matrix[(0, 0)];
        let expected = 0.0 - delta / (g + damping);
        assert!((theta[z_param] - expected).abs() < 1e-14);
    }

    #[test]
    fn inits_agree_in_distribution() {
        let (space, emp) = fixture();
        let tol = 1e-10;
        let mut config = FitConfig::natural_gradient();
        config.tol = tol;
        let (a, ra) = fit(&space, &emp, &config).unwrap();
        config.init = Init::RandomNormal { sigma: 0.1, seed: 7 };
        let (b, rb) = fit(&space, &emp, &config).unwrap();
        assert!(ra.converged && rb.converged);
        let worst =
            a.p.iter().zip(&b.p).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
        assert!(worst <= 10.0 * tol, "p mismatch {worst}");
    }

    #[test]
    fn uniform_input_gives_symmetric_solution() {
        let space = build_sample_space(2, 2, 2, 1).unwrap();
        let x = SignalMatrix::new(SignalRole::Received, 2, 2, vec![1.0; 4]).unwrap();
        let emp = empirical_distribution(&space, &x, NormalizationScheme::Sum).unwrap();
        let (state, report) = fit(&space, &emp, &FitConfig::natural_gradient()).unwrap();
        assert!(report.converged);
        // conditioned on the received layer, the fit reproduces p_hat
        let offset = space.received_offset();
        let mass: f64 = state.p[offset..].iter().sum();
        for omega in offset..space.len() {
            assert!((state.p[omega] / mass - emp.p_hat[omega]).abs() < 1e-7);
        }
        // orbit symmetry: all source thetas equal, all mixing thetas equal
        let mixing = space.mixing_count();
        for j in 1..mixing {
            assert!((state.theta[j] - state.theta[0]).abs() < 1e-6);
        }
        for j in mixing + 1..space.param_count() {
            assert!((state.theta[j] - state.theta[mixing]).abs() < 1e-6);
        }
    }

    #[test]
    fn ng_needs_fewer_iterations_than_gd() {
        let (space, emp) = fixture();
        let mut ng_config = FitConfig::natural_gradient();
        ng_config.tol = 1e-5;
        let mut gd_config = FitConfig::gradient_descent();
        gd_config.tol = 1e-5;
        let (_, ng) = fit(&space, &emp, &ng_config).unwrap();
        let (_, gd) = fit(&space, &emp, &gd_config).unwrap();
        assert!(ng.converged && gd.converged);
        assert!(ng.iterations <= gd.iterations, "ng {} gd {}", ng.iterations, gd.iterations);
    }

    #[test]
    fn converged_report_is_consistent() {
        let (space, emp) = fixture();
        let (state, report) = fit(&space, &emp, &FitConfig::natural_gradient()).unwrap();
        assert!(report.converged);
        assert!(report.final_grad_inf_norm <= 1e-8);
        assert_eq!(report.kl_trace.len(), report.iterations + 1);
        let residual = kl_gradient(&state, &emp);
        assert!(grad_inf_norm(&residual) <= 1e-8);
    }

    #[test]
    fn runaway_learning_rate_is_reported() {
        let (space, emp) = fixture();
        let mut config = FitConfig::gradient_descent();
        config.lr = 1e308;
        config.max_iter = 50;
        match fit(&space, &emp, &config) {
            Err(FitError::NonFiniteTheta { .. }) => {}
            other => panic!("expected NonFiniteTheta, got {other:?}"),
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let (space, emp) = fixture();
        let mut config = FitConfig::gradient_descent();
        config.lr = 0.0;
        assert!(matches!(fit(&space, &emp, &config), Err(FitError::BadConfig(_))));
        let mut config = FitConfig::natural_gradient();
        config.tol = -1.0;
        assert!(matches!(fit(&space, &emp, &config), Err(FitError::BadConfig(_))));
    }

    #[test]
    fn singular_block_falls_back_to_gradient_step() {
        let zeros = DMatrix::<f64>::zeros(2, 2);
        assert!(solve_damped(&zeros, &[1.0, 2.0], 0.0).is_none());

        // Drive one source state's probability to underflow so its Fisher
        // row is exactly zero, then step with zero damping.
        let space = build_sample_space(2, 1, 1, 1).unwrap();
        let x = SignalMatrix::new(SignalRole::Received, 2, 1, vec![1.0, 3.0]).unwrap();
        let emp = empirical_distribution(&space, &x, NormalizationScheme::Sum).unwrap();
        let mut theta = vec![0.0; space.param_count()];
        let z_param = space.mixing_count();
        theta[z_param] = -800.0;
        let state = compute_p(&space, &theta).unwrap();
        assert_eq!(state.p[space.source_index(0, 0)], 0.0);
        assert_eq!(fisher_block(&space, &state, Layer::Source).matrix[(0, 0)], 0.0);

        let delta = kl_gradient(&state, &emp);
        let next = fit_step_ng(&space, &state, &emp, 0.0).unwrap();
        assert!(next.iter().all(|t| t.is_finite()));
        assert!((next[z_param] - (theta[z_param] - delta[z_param])).abs() < 1e-14);
    }

    #[test]
    fn random_init_is_seed_deterministic() {
        let space = build_sample_space(2, 2, 3, 1).unwrap();
        let a = initial_theta(&space, &Init::RandomNormal { sigma: 0.1, seed: 9 });
        let b = initial_theta(&space, &Init::RandomNormal { sigma: 0.1, seed: 9 });
        let c = initial_theta(&space, &Init::RandomNormal { sigma: 0.1, seed: 10 });
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn timing_covers_all_phases() {
        let (space, emp) = fixture();
        let timing = time_iterations(&space, &emp, &FitConfig::natural_gradient(), 5).unwrap();
        assert_eq!(timing.iterations, 5);
        let phases = timing.ng_phases.unwrap();
        let sum = phases.evaluate + phases.fisher + phases.solve;
        assert!(sum <= timing.total);
        let gd = time_iterations(&space, &emp, &FitConfig::gradient_descent(), 5).unwrap();
        assert!(gd.ng_phases.is_none());
    }
}
