//! Integrated squared errors against Monte Carlo oracles, and the replicated
//! experiment runner.
//!
//! An experiment simulates `R` datasets per sample size, fits the conditional
//! intensity on a grid of covariate values and scores each fit with
//!
//! ```text
//! ISE_shape = ∫ d_W²(Q̃(x), E(Q | X = x)) dx
//! ISE_tau   = ∫ (E(τ)·τ̃(x) − E(τ | X = x))² dx
//! ```
//!
//! by the trapezoid rule over the grid. Global fits are scored against the
//! projected `E(s(X,x)·Q)` instead of `E(Q | X = x)`.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{interpolate_solution, project_quantile, QuantileConstraints};
use crate::regression::{FitConfig, FrechetRegression};
use crate::simulation::{
    derive_seed, oracle_shape, replicate_rng, simulate, GlobalOracleDraws, IntensityModel, LqdSimConfig,
    ScoreVariance, TruncNormSimConfig,
};
use crate::space::{trapezoid, wasserstein_distance, CdfCurve, QuantileCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Lqd,
    Truncnorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Local,
    Global,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)*
                    other => Err(Error::invalid(format!("unknown {}: {other}", stringify!($t).to_lowercase()))),
                }
            }
        }
    };
}

text_enum!(Generator { Lqd => "lqd", Truncnorm => "truncnorm" });
text_enum!(Mode { Local => "local", Global => "global" });

/// Intensity multiplier as a function of the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// `α_n = 40·n^{4/5}`.
    PaperN45,
    Fixed(f64),
}

impl AlphaRule {
    pub fn alpha(self, n: usize) -> f64 {
        match self {
            AlphaRule::PaperN45 => 40.0 * (n as f64).powf(0.8),
            AlphaRule::Fixed(a) => a,
        }
    }
}

/// Bandwidth for local fits as a function of the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `h = n^{-1/5}`.
    PaperN15,
    Fixed(f64),
}

impl BandwidthRule {
    pub fn bandwidth(self, n: usize) -> f64 {
        match self {
            BandwidthRule::PaperN15 => (n as f64).powf(-0.2),
            BandwidthRule::Fixed(h) => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: Generator,
    pub mode: Mode,
    pub n_values: Vec<usize>,
    pub replicates: usize,
    pub alpha_rule: AlphaRule,
    pub bandwidth_rule: BandwidthRule,
    /// Fit settings; the bandwidth is overridden by `bandwidth_rule`.
    pub fit: FitConfig,
    /// Number of equispaced covariate values `k/(G+1)` in `(0, 1)`.
    pub eval_grid: usize,
    pub oracle_reps: usize,
    pub seed: u64,
    /// Restrict local fits to `[h, 1 − h]`.
    #[serde(default)]
    pub trim: bool,
    #[serde(default)]
    pub score_variance: ScoreVariance,
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: &[&str] = &["fig2-desk", "fig2-paper", "fig4-desk", "fig4-paper", "a7-control", "a7-paper"];

impl ExperimentConfig {
    /// Local fits of the LQD generator at desk scale.
    pub fn fig2_desk(seed: u64) -> Self {
        ExperimentConfig {
            generator: Generator::Lqd,
            mode: Mode::Local,
            n_values: vec![100, 200, 500],
            replicates: 100,
            alpha_rule: AlphaRule::PaperN45,
            bandwidth_rule: BandwidthRule::PaperN15,
            fit: FitConfig::default(),
            eval_grid: 50,
            oracle_reps: 2000,
            seed,
            trim: false,
            score_variance: ScoreVariance::Squared,
        }
    }

    /// Global fits of the truncated-normal generator at desk scale. The
    /// global errors are small enough that 2000 oracle draws would add
    /// first-order noise, so the oracle sample is larger here.
    pub fn fig4_desk(seed: u64) -> Self {
        ExperimentConfig {
            generator: Generator::Truncnorm,
            mode: Mode::Global,
            oracle_reps: 20_000,
            ..Self::fig2_desk(seed)
        }
    }

    /// Local fits with `α = 1` at large `n`, where the shape error cannot vanish.
    pub fn a7_control(seed: u64) -> Self {
        ExperimentConfig {
            n_values: vec![1000, 2000, 5000],
            replicates: 50,
            alpha_rule: AlphaRule::Fixed(1.0),
            ..Self::fig2_desk(seed)
        }
    }

    fn paper_scale(self) -> Self {
        ExperimentConfig { replicates: 1000, eval_grid: 200, ..self }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "fig2-desk" => Self::fig2_desk(seed),
            "fig2-paper" => Self::fig2_desk(seed).paper_scale(),
            "fig4-desk" => Self::fig4_desk(seed),
            "fig4-paper" => Self::fig4_desk(seed).paper_scale(),
            "a7-control" => Self::a7_control(seed),
            "a7-paper" => Self::a7_control(seed).paper_scale(),
            other => {
                return Err(Error::invalid(format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", "))))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be >= 1"));
        }
        if self.eval_grid < 2 {
            return Err(Error::invalid("evaluation grid needs at least 2 points"));
        }
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n < 2) {
            return Err(Error::invalid("every sample size must be >= 2"));
        }
        let min_reps = if self.mode == Mode::Global { 2 } else { 1 };
        if self.oracle_reps < min_reps {
            return Err(Error::invalid(format!("oracle needs at least {min_reps} replicates")));
        }
        if let AlphaRule::Fixed(a) = self.alpha_rule {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("alpha must be positive, got {a}")));
            }
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth_rule {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        self.model(1.0).validate()
    }

    pub fn model(&self, alpha: f64) -> Model {
        match self.generator {
            Generator::Lqd => Model::Lqd(LqdSimConfig { variance: self.score_variance, ..LqdSimConfig::paper(alpha) }),
            Generator::Truncnorm => Model::Truncnorm(TruncNormSimConfig::paper(alpha)),
        }
    }

    /// `x_k = k/(G+1)`, `k = 1..=G`.
    pub fn grid(&self) -> Vec<f64> {
        eval_grid(self.eval_grid)
    }
}

/// The generator selected by an experiment.
#[derive(Debug, Clone)]
pub enum Model {
    Lqd(LqdSimConfig),
    Truncnorm(TruncNormSimConfig),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn IntensityModel {
        match self {
            Model::Lqd(m) => m,
            Model::Truncnorm(m) => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Lqd(m) => m.validate(),
            Model::Truncnorm(m) => m.validate(),
        }
    }
}

pub fn eval_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|k| k as f64 / (points + 1) as f64).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("integration grid needs at least 2 points"));
    }
    Ok(())
}

/// `∫ d_W²(fit(x), oracle(x)) dx` over `grid`.
pub fn ise_shape(
    fit: impl Fn(f64) -> Result<QuantileCurve>,
    oracle: impl Fn(f64) -> Result<QuantileCurve>,
    grid: &[f64],
) -> Result<f64> {
    check_grid(grid)?;
    let sq = grid
        .iter()
        .map(|&x| Ok(wasserstein_distance(&fit(x)?, &oracle(x)?)?.powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(grid, &sq))
}

/// `∫ (E(τ)·fit(x) − oracle(x))² dx` over `grid`.
pub fn ise_tau(fit: impl Fn(f64) -> Result<f64>, oracle: impl Fn(f64) -> f64, etau: f64, grid: &[f64]) -> Result<f64> {
    check_grid(grid)?;
    if !(etau > 0.0) {
        return Err(Error::invalid(format!("E(tau) must be positive, got {etau}")));
    }
    let sq = grid
        .iter()
        .map(|&x| Ok((etau * fit(x)? - oracle(x)).powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(grid, &sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub n: usize,
    pub replicate: usize,
    pub alpha: f64,
    pub ise_shape: f64,
    pub ise_tau: f64,
    /// Wall time in milliseconds; zero unless timing was requested.
    pub wall_ms: f64,
}

impl ReplicateResult {
    pub fn ise_total(&self) -> f64 {
        self.ise_shape + self.ise_tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub n: usize,
    pub replicate: usize,
    pub reason: String,
}

/// Covariate range scored for one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRange {
    pub n: usize,
    pub alpha: f64,
    pub bandwidth: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub ranges: Vec<ScoredRange>,
}

/// Median ISEs for one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub n: usize,
    pub replicates: usize,
    pub ise_shape: f64,
    pub ise_tau: f64,
}

impl ExperimentOutcome {
    pub fn medians(&self) -> Vec<MedianSummary> {
        self.config
            .n_values
            .iter()
            .map(|&n| {
                let rows: Vec<&ReplicateResult> = self.results.iter().filter(|r| r.n == n).collect();
                let shape: Vec<f64> = rows.iter().map(|r| r.ise_shape).collect();
                let tau: Vec<f64> = rows.iter().map(|r| r.ise_tau).collect();
                MedianSummary { n, replicates: rows.len(), ise_shape: median(&shape), ise_tau: median(&tau) }
            })
            .collect()
    }

    /// Writes `generator,mode,n,alpha,replicate,ise_shape,ise_tau,wall_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            generator: Generator,
            mode: Mode,
            n: usize,
            alpha: f64,
            replicate: usize,
            ise_shape: f64,
            ise_tau: f64,
            wall_ms: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("writing results: {e}"));
        if self.results.is_empty() {
            w.write_record(["generator", "mode", "n", "alpha", "replicate", "ise_shape", "ise_tau", "wall_ms"])
                .map_err(io)?;
        }
        for r in &self.results {
            w.serialize(Row {
                generator: self.config.generator,
                mode: self.config.mode,
                n: r.n,
                alpha: r.alpha,
                replicate: r.replicate,
                ise_shape: r.ise_shape,
                ise_tau: r.ise_tau,
                wall_ms: r.wall_ms,
            })
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("writing results: {e}")))
    }
}

/// Median of a slice; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

const ORACLE_STREAM: u64 = 0x6f72_6163_6c65;

/// Oracle shapes on the full evaluation grid, tabulated on the fit's quantile
/// grid so that both sides share the same pinned end cells.
pub fn oracle_shapes(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<QuantileCurve>> {
    let model = cfg.model(1.0);
    let model = model.as_dyn();
    let seed = derive_seed(&[cfg.seed, ORACLE_STREAM]);
    let latent: Vec<QuantileCurve> = match cfg.mode {
        Mode::Local => grid.iter().map(|&x| oracle_shape(model, x, cfg.oracle_reps, seed)).collect::<Result<_>>(),
        Mode::Global => {
            let draws = GlobalOracleDraws::new(model, cfg.oracle_reps, seed)?;
            grid.par_iter()
                .map(|&x| {
                    let raw = draws.at(x);
                    let c = QuantileConstraints::new(
                        cfg.fit.lower_slope,
                        cfg.fit.upper_slope,
                        model.window(),
                        raw.values.len(),
                    )?;
                    let p = project_quantile(&raw.values, &c)?;
                    interpolate_solution(&p.values, &c)
                })
                .collect()
        }
    }?;
    latent.iter().map(|q| QuantileCurve::from_fn(cfg.fit.nu, model.window(), |r| q.eval(r))).collect()
}

struct Scoring<'a> {
    grid: &'a [f64],
    shapes: &'a [QuantileCurve],
    taus: &'a [f64],
    etau: f64,
}

fn run_replicate(
    cfg: &ExperimentConfig,
    model: &dyn IntensityModel,
    range: &ScoredRange,
    scoring: &Scoring<'_>,
    replicate: usize,
) -> Result<(f64, f64)> {
    let seed = derive_seed(&[cfg.seed, range.n as u64, replicate as u64]);
    let data = simulate(model, range.n, seed)?;
    let fit_cfg = FitConfig { bandwidth: range.bandwidth, ..cfg.fit.clone() };
    let reg = FrechetRegression::new(&data.samples, &fit_cfg)?;
    let idx: Vec<usize> =
        (0..scoring.grid.len()).filter(|&k| (range.x_min..=range.x_max).contains(&scoring.grid[k])).collect();
    let xs: Vec<f64> = idx.iter().map(|&k| scoring.grid[k]).collect();
    let mut shape_sq = Vec::with_capacity(idx.len());
    let mut tau_sq = Vec::with_capacity(idx.len());
    for &k in &idx {
        let x = scoring.grid[k];
        let weights = match cfg.mode {
            Mode::Local => reg.local_weights(x),
            Mode::Global => reg.global_weights(&[x]),
        }
        .map_err(|e| Error::invalid(format!("at x = {x}: {e}")))?;
        let shape = reg.shape_with(&weights)?;
        let tau = reg.tau_with(&weights)?;
        shape_sq.push(wasserstein_distance(&shape.quantile, &scoring.shapes[k])?.powi(2));
        tau_sq.push((scoring.etau * tau.tau_rel - scoring.taus[k]).powi(2));
    }
    Ok((trapezoid(&xs, &shape_sq), trapezoid(&xs, &tau_sq)))
}

/// Runs every `(n, replicate)` job. Results are ordered by `n` then
/// replicate and do not depend on the thread count. With `timing` off the
/// `wall_ms` column is zero so that reruns are byte-identical.
pub fn run_experiment(cfg: &ExperimentConfig, timing: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let grid = cfg.grid();
    let base = cfg.model(1.0);
    let shapes = oracle_shapes(cfg, &grid)?;
    let taus: Vec<f64> = grid.iter().map(|&x| base.as_dyn().mean_tau(x)).collect();
    let scoring = Scoring { grid: &grid, shapes: &shapes, taus: &taus, etau: base.as_dyn().expected_tau() };

    let mut ranges = Vec::new();
    for &n in &cfg.n_values {
        let alpha = cfg.alpha_rule.alpha(n);
        let bandwidth = (cfg.mode == Mode::Local).then(|| cfg.bandwidth_rule.bandwidth(n));
        let (x_min, x_max) = match bandwidth {
            Some(h) if cfg.trim => (h, 1.0 - h),
            _ => (0.0, 1.0),
        };
        let points = grid.iter().filter(|x| (x_min..=x_max).contains(*x)).count();
        if points < 2 {
            return Err(Error::invalid(format!("fewer than 2 evaluation points in [{x_min}, {x_max}] for n = {n}")));
        }
        ranges.push(ScoredRange { n, alpha, bandwidth, x_min, x_max, points });
    }

    let models: Vec<Model> = ranges.iter().map(|r| cfg.model(r.alpha)).collect();
    let jobs: Vec<(usize, usize)> =
        (0..ranges.len()).flat_map(|i| (0..cfg.replicates).map(move |r| (i, r))).collect();
    let outcomes: Vec<std::result::Result<ReplicateResult, ReplicateFailure>> = jobs
        .par_iter()
        .map(|&(i, replicate)| {
            let range = &ranges[i];
            let start = Instant::now();
            match run_replicate(cfg, models[i].as_dyn(), range, &scoring, replicate) {
                Ok((ise_shape, ise_tau)) => Ok(ReplicateResult {
                    n: range.n,
                    replicate,
                    alpha: range.alpha,
                    ise_shape,
                    ise_tau,
                    wall_ms: if timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
                }),
                Err(e) => Err(ReplicateFailure { n: range.n, replicate, reason: e.to_string() }),
            }
        })
        .collect();
    let (mut results, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(ExperimentOutcome { config: cfg.clone(), results, failures, ranges })
}

/// Euclidean and Wasserstein conditional means of truncated-normal shapes at
/// one covariate value, against the noise-free signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanComparison {
    pub x: f64,
    /// Quantile of the pointwise mean density.
    pub euclidean: QuantileCurve,
    /// Pointwise mean of the quantiles.
    pub frechet: QuantileCurve,
    /// Shape with the mean noise removed.
    pub signal: QuantileCurve,
    pub distance_euclidean: f64,
    pub distance_frechet: f64,
}

/// Averages `reps` random shapes at `x` both as densities and as quantiles.
pub fn compare_conditional_means(cfg: &TruncNormSimConfig, x: f64, reps: usize, seed: u64) -> Result<MeanComparison> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::invalid("comparison needs at least one replicate"));
    }
    let params: Vec<(f64, f64)> = (0..reps)
        .map(|k| cfg.draw_params(x, &mut replicate_rng(seed, k as u64)))
        .collect::<Result<_>>()?;

    let m = 4001;
    let t = cfg.window.length();
    let step = t / (m - 1) as f64;
    let density: Vec<f64> = (0..m)
        .map(|i| {
            let s = i as f64 * step;
            params.iter().map(|&(mu, sd)| cfg.shape_density(mu, sd, s)).sum::<f64>() / reps as f64
        })
        .collect();
    let mut cdf = vec![0.0; m];
    for i in 1..m {
        cdf[i] = cdf[i - 1] + 0.5 * step * (density[i - 1] + density[i]);
    }
    let total = cdf[m - 1];
    cdf.iter_mut().for_each(|c| *c /= total);
    cdf[m - 1] = 1.0;
    let euclidean = CdfCurve::new(cdf, cfg.window)?.to_quantile(cfg.latent_nu)?;

    let mut acc = vec![0.0; cfg.latent_nu];
    for &(mu, sd) in &params {
        for (a, v) in acc.iter_mut().zip(cfg.shape_quantile(mu, sd)?.values()) {
            *a += v / reps as f64;
        }
    }
    let frechet = QuantileCurve::new(acc, cfg.window)?;
    let signal = cfg.shape_quantile(cfg.mean_intercept + cfg.mean_slope * x, cfg.sd_intercept + cfg.sd_slope * x)?;
    Ok(MeanComparison {
        x,
        distance_euclidean: wasserstein_distance(&euclidean, &signal)?,
        distance_frechet: wasserstein_distance(&frechet, &signal)?,
        euclidean,
        frechet,
        signal,
    })
}
