//! The `coxreg` command-line tool: `simulate`, `fit` and `evaluate`.
//!
//! Exit codes: 0 success, 1 I/O and other failures, 2 configuration errors,
//! 3 ingestion errors, 4 numerical failures.

pub mod ingest;
pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::Error;
use crate::evaluation::{run_experiment, ExperimentConfig, Mode};
use crate::regression::{FitConfig, FrechetRegression};
use crate::simulation::{
    simulate, IntensityModel, LqdSimConfig, ScoreVariance, TruncNormSimConfig,
};
use crate::smoothing::Kernel;
use crate::space::{DensityRecovery, TimeWindow};
use output::{DataSummary, EvaluationMetadata, FitOutput, FitSettings, PointRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Ingest { path: String, line: u64, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Ingest { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::InfeasibleConstraints(_) => CliError::Config(e.to_string()),
            Error::ArrivalOutOfWindow { .. } | Error::DomainMismatch { .. } => {
                CliError::Ingest { path: "<input>".into(), line: 0, message: e.to_string() }
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "coxreg", version, about = "Fréchet regression for replicated point processes")]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "COXREG_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate replicated Cox processes and write event tables.
    Simulate(SimulateArgs),
    /// Fit conditional intensities to event tables.
    Fit(FitArgs),
    /// Run a replicated simulation experiment.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SimPreset {
    LqdPaper,
    TruncnormPaper,
    A8Comparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VarianceArg {
    Squared,
    Root,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "lqd-paper")]
    pub preset: SimPreset,
    /// Number of replicates.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Intensity multiplier; defaults to 40·n^0.8.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    /// Interior grid size of the latent quantiles written to latent.csv.
    #[arg(long, default_value_t = 100)]
    pub nu: usize,
    /// Whether the tabulated score variances are used squared or as square roots.
    #[arg(long, value_enum, default_value = "squared")]
    pub variance: VarianceArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub replicates: PathBuf,
    /// Observation window length T.
    #[arg(long)]
    pub window: f64,
    #[arg(long, default_value = "local")]
    pub mode: Mode,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: Kernel,
    #[arg(long, default_value_t = 100)]
    pub nu: usize,
    /// Evaluation points: `;` between points, `,` between coordinates.
    #[arg(long, conflicts_with = "x_grid", allow_hyphen_values = true)]
    pub xs: Option<String>,
    /// Scalar grid `lo:hi:count`, endpoints included.
    #[arg(long, allow_hyphen_values = true)]
    pub x_grid: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub density_points: usize,
    #[arg(long)]
    pub density_bandwidth: Option<f64>,
    #[arg(long, default_value_t = crate::projection::DEFAULT_LOWER_SLOPE)]
    pub lower_slope: f64,
    #[arg(long, default_value_t = crate::projection::DEFAULT_UPPER_SLOPE)]
    pub upper_slope: f64,
    /// Echoed into the output for provenance.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// fig2-desk, fig2-paper, fig4-desk, fig4-paper, a7-control or a7-paper.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Experiment configuration as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of replicates per sample size.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Override the sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long)]
    pub eval_grid: Option<usize>,
    #[arg(long)]
    pub oracle_reps: Option<usize>,
    /// Score local fits only on [h, 1 − h].
    #[arg(long)]
    pub trim: bool,
    /// Record wall times; makes the outputs run-dependent.
    #[arg(long)]
    pub timing: bool,
    /// Output directory for results.csv and metadata.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    })
}

fn window(t: f64) -> Result<TimeWindow, CliError> {
    TimeWindow::new(t).map_err(|e| CliError::Config(e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let t = window(a.window)?;
    if a.nu == 0 {
        return Err(CliError::Config("--nu must be >= 1".into()));
    }
    let alpha = a.alpha.unwrap_or_else(|| 40.0 * (a.n as f64).powf(0.8));
    let model: Box<dyn IntensityModel> = match a.preset {
        SimPreset::LqdPaper => {
            let variance = match a.variance {
                VarianceArg::Squared => ScoreVariance::Squared,
                VarianceArg::Root => ScoreVariance::Root,
            };
            let cfg = LqdSimConfig { variance, window: t, ..LqdSimConfig::paper(alpha) };
            cfg.validate()?;
            Box::new(cfg)
        }
        SimPreset::TruncnormPaper | SimPreset::A8Comparison => {
            let base = if a.preset == SimPreset::TruncnormPaper {
                TruncNormSimConfig::paper(alpha)
            } else {
                TruncNormSimConfig::translation_comparison(alpha)
            };
            let cfg = TruncNormSimConfig { window: t, ..base };
            cfg.validate()?;
            Box::new(cfg)
        }
    };
    let data = simulate(model.as_ref(), a.n, a.seed)?;
    ensure_dir(&a.out)?;
    output::write_simulation(&a.out, &data, 1, a.nu)
}

fn parse_points(spec: &str) -> Result<Vec<Vec<f64>>, CliError> {
    spec.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| CliError::Config(format!("bad coordinate {c:?} in --xs")))
                })
                .collect()
        })
        .collect()
}

fn parse_grid(spec: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let bad = || CliError::Config(format!("--x-grid must be lo:hi:count, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || (count == 1 && lo != hi) {
        return Err(bad());
    }
    Ok((0..count)
        .map(|k| vec![if count == 1 { lo } else { lo + (hi - lo) * k as f64 / (count - 1) as f64 }])
        .collect())
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let t = window(a.window)?;
    let points = match (&a.xs, &a.x_grid) {
        (Some(xs), None) => parse_points(xs)?,
        (None, Some(g)) => parse_grid(g)?,
        _ => return Err(CliError::Config("give evaluation points with --xs or --x-grid".into())),
    };
    if points.is_empty() {
        return Err(CliError::Config("no evaluation points".into()));
    }
    let data = ingest::read_dataset(&a.events, &a.replicates, t)?;
    let p = data.dim();
    if data.samples.is_empty() {
        return Err(CliError::Numerical(Error::EmptyData.to_string()));
    }
    if let Some(bad) = points.iter().find(|x| x.len() != p) {
        return Err(CliError::Config(format!("evaluation point {bad:?} has dimension {}, data has {p}", bad.len())));
    }
    match a.mode {
        Mode::Local if p != 1 => {
            return Err(CliError::Config(format!("local mode needs one covariate, data has {p}")));
        }
        Mode::Local if a.bandwidth.is_none() => return Err(CliError::Config("local mode requires --bandwidth".into())),
        Mode::Global if data.samples.len() <= p => {
            return Err(CliError::Config(format!("global mode needs more than {p} replicates")));
        }
        _ => {}
    }
    if let Some(h) = a.bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Config(format!("bandwidth must be positive, got {h}")));
        }
    }
    let density = DensityRecovery { points: a.density_points, bandwidth: a.density_bandwidth };
    let cfg = FitConfig {
        bandwidth: if a.mode == Mode::Local { a.bandwidth } else { None },
        kernel: a.kernel,
        nu: a.nu,
        lower_slope: a.lower_slope,
        upper_slope: a.upper_slope,
        density,
    };
    cfg.constraints(t)?;
    if a.density_points < 3 {
        return Err(CliError::Config("--density-points must be >= 3".into()));
    }
    let reg = FrechetRegression::new(&data.samples, &cfg)?;
    let records: Vec<PointRecord> = points
        .par_iter()
        .map(|x| {
            let fit = match a.mode {
                Mode::Local => reg.intensity_local(x[0]),
                Mode::Global => reg.intensity_global(x),
            };
            match fit {
                Ok(f) => PointRecord::Ok(f.into()),
                Err(e) => PointRecord::Error { x: x.clone(), error: e.to_string() },
            }
        })
        .collect();
    let failed = records.iter().filter(|r| matches!(r, PointRecord::Error { .. })).count();
    let doc = FitOutput {
        version: crate::VERSION.to_string(),
        config: FitSettings {
            mode: a.mode.to_string(),
            window: a.window,
            bandwidth: cfg.bandwidth,
            kernel: a.kernel,
            nu: a.nu,
            lower_slope: a.lower_slope,
            upper_slope: a.upper_slope,
            density,
            events: a.events.display().to_string(),
            replicates: a.replicates.display().to_string(),
            seed: a.seed,
        },
        data: DataSummary {
            replicates: data.samples.len(),
            dim: p,
            total_arrivals: data.total_arrivals(),
            mean_count: reg.mean_count(),
        },
        points: records,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    output::write_json(&a.out, &doc)?;
    for r in &doc.points {
        if let PointRecord::Error { x, error } = r {
            eprintln!("warning: fit at x = {x:?} failed: {error}");
        }
    }
    if failed == doc.points.len() {
        return Err(CliError::Numerical(format!("all {failed} evaluation points failed")));
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(name), None) => ExperimentConfig::preset(name, a.seed.unwrap_or(1))?,
        (None, Some(path)) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        _ => return Err(CliError::Config("give --preset or --config".into())),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(ns) = &a.n_values {
        cfg.n_values = ns.clone();
    }
    if let Some(g) = a.eval_grid {
        cfg.eval_grid = g;
    }
    if let Some(o) = a.oracle_reps {
        cfg.oracle_reps = o;
    }
    cfg.trim |= a.trim;
    cfg.validate()?;

    let start = Instant::now();
    let outcome = run_experiment(&cfg, a.timing)?;
    ensure_dir(&a.out)?;
    let file = std::fs::File::create(a.out.join("results.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    outcome.write_csv(file)?;
    let meta = EvaluationMetadata {
        version: crate::VERSION.to_string(),
        medians: outcome.medians(),
        config: outcome.config,
        ranges: outcome.ranges,
        failures: outcome.failures,
        wall_seconds: a.timing.then(|| start.elapsed().as_secs_f64()),
    };
    output::write_json(&a.out.join("metadata.json"), &meta)?;
    if !meta.failures.is_empty() {
        eprintln!("warning: {} replicates failed; see metadata.json", meta.failures.len());
    }
    Ok(())
}
