//! Command-line surface: generate / mix / separate / evaluate / benchmark.
//!
//! Every command writes a run manifest next to its outputs with the resolved
//! flags, seeds, paths, per-phase wall-clock and iteration counts, so a run
//! can be reproduced exactly (runtime fields aside). Exit codes: 0 success,
//! 2 non-convergence, 64 usage error, 65 data-format error, 1 other errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::datagen::{gen_mixing, gen_pointcloud, gen_timeseries, mix, DatagenError, MixingSpec};
use crate::io::{read_csv, write_csv, DataError};
use crate::model::{ModelError, NormalizationScheme};
use crate::optim::{time_iterations, FitConfig, FitError, Init};
use crate::pipeline::{evaluate_separation, separate, PipelineError};
use crate::signal::SignalRole;
use crate::space::{build_sample_space, SpaceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    SpecJson { path: String, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Maps an error to its exit code. Bad flag values are usage errors;
    /// unreadable or unsuitable input data is a data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(DataError::Io { .. }) => EXIT_FAILURE,
            CliError::Data(_) => EXIT_DATA,
            CliError::SpecJson { .. } => EXIT_DATA,
            CliError::Datagen(DatagenError::SourceRows { .. }) => EXIT_DATA,
            CliError::Datagen(_) => EXIT_USAGE,
            CliError::Pipeline(err) => match err {
                PipelineError::Space(SpaceError::TooFewReceived(_)) => EXIT_DATA,
                PipelineError::Space(_) => EXIT_USAGE,
                PipelineError::Model(ModelError::NonPositiveEntry { .. })
                | PipelineError::Model(ModelError::ConstantMatrix)
                | PipelineError::Model(ModelError::ShapeMismatch { .. }) => EXIT_DATA,
                PipelineError::Fit(FitError::BadConfig(_)) => EXIT_USAGE,
                PipelineError::Signal(_) => EXIT_DATA,
                PipelineError::TooManySignals(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            },
            CliError::Write { .. } => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "igbss", version, about = "Blind source separation on a layered log-linear model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source fixture as CSV.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Mix a source CSV into a received CSV with seeded coefficients.
    Mix(MixArgs),
    /// Recover source signals from a received CSV.
    Separate(SeparateArgs),
    /// Compare a recovered CSV against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a preset experiment sweep and tabulate the results.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenerateKind {
    /// Three waveforms: sine, square, sawtooth (3 cycles each).
    Timeseries {
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Recorded in the manifest; the waveform constants are fixed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Two Student-t(1.3) rows scaled by 1/5 and 1/10.
    Pointcloud {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Source matrix CSV (rows = signals).
    #[arg(long)]
    pub sources: PathBuf,
    /// Number of received signals; defaults to the number of sources.
    #[arg(long)]
    pub receivers: Option<usize>,
    /// Highest interaction order of the generated coefficients.
    #[arg(long, default_value_t = 1, conflicts_with = "spec")]
    pub order: usize,
    /// Reuse a previously written mixing spec instead of generating one.
    #[arg(long, conflicts_with_all = ["lo", "hi", "seed", "receivers"])]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub lo: f64,
    #[arg(long, default_value_t = 2.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; the spec lands at <output>.spec.json.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Sum,
    Minmax,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Gd,
    Ng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Zeros,
    Random,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Received matrix CSV (rows = signals).
    #[arg(long)]
    pub input: PathBuf,
    /// Number of source signals to recover.
    #[arg(long)]
    pub sources: usize,
    /// Highest interaction order modeled in the mixing layer.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Minmax)]
    pub norm: NormArg,
    /// Min-max slack; defaults to 1e-3 of the data range.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Ng)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Defaults to 100000 for gd and 1000 for ng.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    pub damping: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Zeros)]
    pub init: InitArg,
    /// Standard deviation of the random initialization.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Seed of the random initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory: recovered.csv, mixing_theta.json, report.json.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub recovered: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also search per-signal sign flips (for sign-agnostic baselines).
    #[arg(long)]
    pub allow_sign: bool,
    #[arg(short, long, default_value = "metrics.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// RMSE/SNR/runtime per interaction order, scheme and optimizer.
    Timeseries,
    /// Per-iteration runtime and phase split against the sample count.
    Scaling,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub orders: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Sample count for the timeseries preset.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Sample counts swept by the scaling preset.
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800")]
    pub sizes: Vec<usize>,
    /// Timed gradient-descent iterations per scaling point.
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Timed natural-gradient iterations per scaling point.
    #[arg(long, default_value_t = 3)]
    pub ng_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output directory: benchmark.csv, benchmark.json.
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Everything needed to reproduce a run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub flags: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            tool: "igbss",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            flags: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            iterations: None,
        }
    }

    fn flag(&mut self, key: &str, value: impl ToString) {
        self.flags.insert(key.to_string(), value.to_string());
    }

    fn phase(&mut self, key: &str, elapsed: std::time::Duration) {
        self.timings_ms.insert(key.to_string(), elapsed.as_secs_f64() * 1e3);
    }
}

/// Manifest path for a file output: extension replaced by `manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| CliError::SpecJson { path: path.display().to_string(), source })?;
    std::fs::write(path, text + "\n")
        .map_err(|source| CliError::Write { path: path.display().to_string(), source })
}

fn read_spec_json(path: &Path) -> Result<MixingSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
    serde_json::from_str(&text)
        .map_err(|source| CliError::SpecJson { path: path.display().to_string(), source })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Generate { kind } => cmd_generate(kind),
        Command::Mix(args) => cmd_mix(args),
        Command::Separate(args) => cmd_separate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn cmd_generate(kind: GenerateKind) -> Result<i32, CliError> {
    let mut manifest = RunManifest::new("generate");
    let (matrix, output) = match kind {
        GenerateKind::Timeseries { samples, .. } if samples < 2 => {
            return Err(CliError::Usage("--samples must be at least 2".into()));
        }
        GenerateKind::Pointcloud { count, .. } if count < 2 => {
            return Err(CliError::Usage("--count must be at least 2".into()));
        }
        GenerateKind::Timeseries { samples, seed, output } => {
            manifest.flag("kind", "timeseries");
            manifest.flag("samples", samples);
            manifest.flag("seed", seed);
            let t = Instant::now();
            let z = gen_timeseries(samples);
            manifest.phase("generate", t.elapsed());
            (z, output)
        }
        GenerateKind::Pointcloud { count, seed, output } => {
            manifest.flag("kind", "pointcloud");
            manifest.flag("count", count);
            manifest.flag("seed", seed);
            let t = Instant::now();
            let z = gen_pointcloud(count, seed);
            manifest.phase("generate", t.elapsed());
            (z, output)
        }
    };
    let t = Instant::now();
    write_csv(&output, &matrix)?;
    manifest.phase("write", t.elapsed());
    manifest.outputs.push(output.display().to_string());
    write_json(&manifest_path_for(&output), &manifest)?;
    Ok(EXIT_OK)
}

fn cmd_mix(args: MixArgs) -> Result<i32, CliError> {
    let mut manifest = RunManifest::new("mix");
    manifest.flag("sources", args.sources.display());
    manifest.inputs.push(args.sources.display().to_string());

    let t = Instant::now();
    let z = read_csv(&args.sources, SignalRole::Source)?;
    manifest.phase("load", t.elapsed());

    let spec = match &args.spec {
        Some(path) => {
            manifest.flag("spec", path.display());
            manifest.inputs.push(path.display().to_string());
            read_spec_json(path)?
        }
        None => {
            let receivers = args.receivers.unwrap_or(z.rows);
            manifest.flag("receivers", receivers);
            manifest.flag("order", args.order);
            manifest.flag("lo", args.lo);
            manifest.flag("hi", args.hi);
            manifest.flag("seed", args.seed);
            gen_mixing(receivers, z.rows, args.order, args.lo, args.hi, args.seed)?
        }
    };

    let t = Instant::now();
    let x = mix(&z, &spec)?;
    manifest.phase("mix", t.elapsed());

    let t = Instant::now();
    write_csv(&args.output, &x)?;
    let spec_path = args.output.with_extension("spec.json");
    write_json(&spec_path, &spec)?;
    manifest.phase("write", t.elapsed());
    manifest.outputs.push(args.output.display().to_string());
    manifest.outputs.push(spec_path.display().to_string());
    write_json(&manifest_path_for(&args.output), &manifest)?;
    Ok(EXIT_OK)
}

fn scheme_from(norm: NormArg, epsilon: Option<f64>) -> NormalizationScheme {
    match norm {
        NormArg::Sum => NormalizationScheme::Sum,
        NormArg::Minmax => NormalizationScheme::MinMax { epsilon },
        NormArg::Exp => NormalizationScheme::ExpKernel,
    }
}

fn fit_config_from(args: &SeparateArgs) -> FitConfig {
    let mut config = match args.optimizer {
        OptimizerArg::Gd => FitConfig::gradient_descent(),
        OptimizerArg::Ng => FitConfig::natural_gradient(),
    };
    config.lr = args.lr;
    config.tol = args.tol;
    config.damping = args.damping;
    if let Some(max_iter) = args.max_iter {
        config.max_iter = max_iter;
    }
    config.init = match args.init {
        InitArg::Zeros => Init::Zeros,
        InitArg::Random => Init::RandomNormal { sigma: args.sigma, seed: args.seed },
    };
    config
}

fn cmd_separate(args: SeparateArgs) -> Result<i32, CliError> {
    let mut manifest = RunManifest::new("separate");
    manifest.flag("input", args.input.display());
    manifest.flag("sources", args.sources);
    manifest.flag("order", args.order);
    manifest.flag("norm", format!("{:?}", args.norm).to_lowercase());
    if let Some(eps) = args.epsilon {
        manifest.flag("epsilon", eps);
    }
    manifest.flag("optimizer", format!("{:?}", args.optimizer).to_lowercase());
    manifest.flag("lr", args.lr);
    manifest.flag("tol", args.tol);
    manifest.flag("damping", args.damping);
    manifest.flag("init", format!("{:?}", args.init).to_lowercase());
    if matches!(args.init, InitArg::Random) {
        manifest.flag("sigma", args.sigma);
        manifest.flag("seed", args.seed);
    }
    manifest.inputs.push(args.input.display().to_string());

    let t = Instant::now();
    let x = read_csv(&args.input, SignalRole::Received)?;
    manifest.phase("load", t.elapsed());

    let config = fit_config_from(&args);
    manifest.flag("max_iter", config.max_iter);
    let scheme = scheme_from(args.norm, args.epsilon);

    let t = Instant::now();
    let result = separate(&x, args.sources, args.order, scheme, &config)?;
    manifest.phase("fit", t.elapsed());
    manifest.iterations = Some(result.report.iterations);

    std::fs::create_dir_all(&args.output)
        .map_err(|source| CliError::Write { path: args.output.display().to_string(), source })?;
    let t = Instant::now();
    let recovered_path = args.output.join("recovered.csv");
    let theta_path = args.output.join("mixing_theta.json");
    let report_path = args.output.join("report.json");
    write_csv(&recovered_path, &result.recovered)?;
    write_json(&theta_path, &result.mixing_params)?;
    write_json(&report_path, &result.report)?;
    manifest.phase("write", t.elapsed());
    for p in [&recovered_path, &theta_path, &report_path] {
        manifest.outputs.push(p.display().to_string());
    }
    write_json(&args.output.join("manifest.json"), &manifest)?;

    if result.report.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: did not converge in {} iterations (residual {:.3e}); partial outputs written",
            result.report.iterations, result.report.final_grad_inf_norm
        );
        Ok(EXIT_NONCONVERGENCE)
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32, CliError> {
    let mut manifest = RunManifest::new("evaluate");
    manifest.flag("recovered", args.recovered.display());
    manifest.flag("truth", args.truth.display());
    manifest.flag("allow_sign", args.allow_sign);
    manifest.inputs.push(args.recovered.display().to_string());
    manifest.inputs.push(args.truth.display().to_string());

    let t = Instant::now();
    let recovered = read_csv(&args.recovered, SignalRole::Recovered)?;
    let truth = read_csv(&args.truth, SignalRole::Source)?;
    manifest.phase("load", t.elapsed());

    let t = Instant::now();
    let report = evaluate_separation(&recovered, &truth, args.allow_sign)?;
    manifest.phase("evaluate", t.elapsed());

    write_json(&args.output, &report)?;
    manifest.outputs.push(args.output.display().to_string());
    write_json(&manifest_path_for(&args.output), &manifest)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
struct BenchmarkRow {
    preset: String,
    order: usize,
    scheme: String,
    optimizer: String,
    seed: u64,
    samples: usize,
    rmse: Option<f64>,
    snr_db: Option<f64>,
    iterations: usize,
    converged: Option<bool>,
    runtime_ms: f64,
    per_iteration_ms: Option<f64>,
    evaluate_ms: Option<f64>,
    fisher_ms: Option<f64>,
    solve_ms: Option<f64>,
}

fn benchmark_threads(jobs: usize) -> usize {
    let available =
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("IGBSS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(available);
    cap.min(jobs).max(1)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(
        "preset,order,scheme,optimizer,seed,samples,rmse,snr_db,iterations,converged,runtime_ms,per_iteration_ms,evaluate_ms,fisher_ms,solve_ms\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.preset,
            r.order,
            r.scheme,
            r.optimizer,
            r.seed,
            r.samples,
            fmt_opt(r.rmse),
            fmt_opt(r.snr_db),
            r.iterations,
            r.converged.map(|b| b.to_string()).unwrap_or_default(),
            r.runtime_ms,
            fmt_opt(r.per_iteration_ms),
            fmt_opt(r.evaluate_ms),
            fmt_opt(r.fisher_ms),
            fmt_opt(r.solve_ms),
        ));
    }
    out
}

fn timeseries_cells(args: &BenchmarkArgs) -> Vec<(usize, NormArg, OptimizerArg, u64)> {
    let mut cells = Vec::new();
    for &order in &args.orders {
        for norm in [NormArg::Minmax, NormArg::Exp] {
            for optimizer in [OptimizerArg::Gd, OptimizerArg::Ng] {
                for &seed in &args.seeds {
                    cells.push((order, norm, optimizer, seed));
                }
            }
        }
    }
    cells
}

fn run_timeseries_cell(
    args: &BenchmarkArgs,
    (order, norm, optimizer, seed): (usize, NormArg, OptimizerArg, u64),
) -> Result<BenchmarkRow, CliError> {
    let z = gen_timeseries(args.samples);
    let spec = gen_mixing(3, 3, order, 0.5, 2.0, seed)?;
    let x = mix(&z, &spec)?;

    let mut config = match optimizer {
        OptimizerArg::Gd => FitConfig::gradient_descent(),
        OptimizerArg::Ng => FitConfig::natural_gradient(),
    };
    config.tol = args.tol;
    if let Some(max_iter) = args.max_iter {
        config.max_iter = max_iter;
    }

    let started = Instant::now();
    let result = separate(&x, 3, order, scheme_from(norm, None), &config)?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let eval = evaluate_separation(&result.recovered, &z, false)?;

    Ok(BenchmarkRow {
        preset: "timeseries".into(),
        order,
        scheme: format!("{norm:?}").to_lowercase(),
        optimizer: format!("{optimizer:?}").to_lowercase(),
        seed,
        samples: args.samples,
        rmse: Some(eval.rmse),
        snr_db: Some(eval.snr_db),
        iterations: result.report.iterations,
        converged: Some(result.report.converged),
        runtime_ms,
        per_iteration_ms: None,
        evaluate_ms: None,
        fisher_ms: None,
        solve_ms: None,
    })
}

fn run_scaling_preset(args: &BenchmarkArgs) -> Result<Vec<BenchmarkRow>, CliError> {
    let mut rows = Vec::new();
    for &samples in &args.sizes {
        let z = gen_timeseries(samples);
        let spec = gen_mixing(3, 3, 1, 0.5, 2.0, args.seeds.first().copied().unwrap_or(1))?;
        let x = mix(&z, &spec)?;
        let space = build_sample_space(3, 3, samples, 1).map_err(PipelineError::from)?;
        let emp = crate::model::empirical_distribution(
            &space,
            &x,
            NormalizationScheme::MinMax { epsilon: None },
        )
        .map_err(PipelineError::from)?;

        for (optimizer, iters) in [(OptimizerArg::Gd, args.iters), (OptimizerArg::Ng, args.ng_iters)] {
            let config = match optimizer {
                OptimizerArg::Gd => FitConfig::gradient_descent(),
                OptimizerArg::Ng => FitConfig::natural_gradient(),
            };
            let timing =
                time_iterations(&space, &emp, &config, iters).map_err(PipelineError::from)?;
            let phases = timing.ng_phases;
            rows.push(BenchmarkRow {
                preset: "scaling".into(),
                order: 1,
                scheme: "minmax".into(),
                optimizer: format!("{optimizer:?}").to_lowercase(),
                seed: args.seeds.first().copied().unwrap_or(1),
                samples,
                rmse: None,
                snr_db: None,
                iterations: timing.iterations,
                converged: None,
                runtime_ms: timing.total.as_secs_f64() * 1e3,
                per_iteration_ms: Some(timing.per_iteration.as_secs_f64() * 1e3),
                evaluate_ms: phases.map(|p| p.evaluate.as_secs_f64() * 1e3),
                fisher_ms: phases.map(|p| p.fisher.as_secs_f64() * 1e3),
                solve_ms: phases.map(|p| p.solve.as_secs_f64() * 1e3),
            });
        }
    }
    Ok(rows)
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<i32, CliError> {
    let mut manifest = RunManifest::new("benchmark");
    manifest.flag("preset", format!("{:?}", args.preset).to_lowercase());
    manifest.flag("orders", args.orders.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    manifest.flag("seeds", args.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    manifest.flag("samples", args.samples);
    manifest.flag("sizes", args.sizes.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    manifest.flag("iters", args.iters);
    manifest.flag("ng_iters", args.ng_iters);
    manifest.flag("tol", args.tol);
    if let Some(max_iter) = args.max_iter {
        manifest.flag("max_iter", max_iter);
    }

    let started = Instant::now();
    let rows = match args.preset {
        PresetArg::Timeseries => {
            // independent cells fan out across workers; IGBSS_THREADS caps it
            let cells = timeseries_cells(&args);
            let threads = benchmark_threads(cells.len());
            manifest.flag("threads", threads);
            let next = AtomicUsize::new(0);
            let results: Mutex<Vec<(usize, Result<BenchmarkRow, CliError>)>> =
                Mutex::new(Vec::new());
            std::thread::scope(|scope| {
                for _ in 0..threads {
                    scope.spawn(|| loop {
                        let idx = next.fetch_add(1, Ordering::SeqCst);
                        if idx >= cells.len() {
                            break;
                        }
                        let row = run_timeseries_cell(&args, cells[idx]);
                        results.lock().unwrap().push((idx, row));
                    });
                }
            });
            let mut results = results.into_inner().unwrap();
            results.sort_by_key(|(idx, _)| *idx);
            results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>, _>>()?
        }
        PresetArg::Scaling => {
            manifest.flag("threads", 1); // timing runs stay sequential
            run_scaling_preset(&args)?
        }
    };
    manifest.phase("benchmark", started.elapsed());

    std::fs::create_dir_all(&args.output)
        .map_err(|source| CliError::Write { path: args.output.display().to_string(), source })?;
    let csv_path = args.output.join("benchmark.csv");
    let json_path = args.output.join("benchmark.json");
    std::fs::write(&csv_path, benchmark_csv(&rows))
        .map_err(|source| CliError::Write { path: csv_path.display().to_string(), source })?;
    write_json(&json_path, &rows)?;
    manifest.outputs.push(csv_path.display().to_string());
    manifest.outputs.push(json_path.display().to_string());
    write_json(&args.output.join("manifest.json"), &manifest)?;
    Ok(EXIT_OK)
}
