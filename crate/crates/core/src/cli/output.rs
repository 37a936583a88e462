//! Machine-readable outputs of the command-line tool.

use serde::{Deserialize, Serialize};

use crate::evaluation::{ExperimentConfig, MedianSummary, ReplicateFailure, ScoredRange};
use crate::regression::{ConditionalIntensityFit, FitDiagnostics};
use crate::simulation::SimulatedDataset;
use crate::smoothing::Kernel;
use crate::space::{DensityRecovery, QuantileCurve};

use super::CliError;

/// Settings echoed into a fit document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub mode: String,
    pub window: f64,
    pub bandwidth: Option<f64>,
    pub kernel: Kernel,
    pub nu: usize,
    pub lower_slope: f64,
    pub upper_slope: f64,
    pub density: DensityRecovery,
    pub events: String,
    pub replicates: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub replicates: usize,
    pub dim: usize,
    pub total_arrivals: usize,
    pub mean_count: f64,
}

/// Fitted intensity at one covariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPoint {
    pub x: Vec<f64>,
    pub tau_rel: f64,
    /// Quantile values at `r_j = j/(ν+1)`.
    pub quantile: Vec<f64>,
    pub density_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl From<ConditionalIntensityFit> for FittedPoint {
    fn from(f: ConditionalIntensityFit) -> Self {
        FittedPoint {
            x: f.x,
            tau_rel: f.tau_rel,
            quantile: f.shape_quantile.into_values(),
            density_grid: f.shape_density.grid().to_vec(),
            density: f.shape_density.values().to_vec(),
            diagnostics: f.diagnostics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PointRecord {
    Ok(FittedPoint),
    Error { x: Vec<f64>, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub version: String,
    pub config: FitSettings,
    pub data: DataSummary,
    pub points: Vec<PointRecord>,
}

/// Metadata written next to an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetadata {
    pub version: String,
    pub config: ExperimentConfig,
    pub ranges: Vec<ScoredRange>,
    pub medians: Vec<MedianSummary>,
    pub failures: Vec<ReplicateFailure>,
    /// Present only when timing was requested.
    pub wall_seconds: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_writer(path: &std::path::Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Writes `events.csv`, `replicates.csv` and `latent.csv` into `dir`.
/// Latent quantiles are tabulated at `nu` interior grid points.
pub fn write_simulation(dir: &std::path::Path, data: &SimulatedDataset, dim: usize, nu: usize) -> Result<(), CliError> {
    let xs: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();

    let mut events = csv_writer(&dir.join("events.csv"))?;
    let mut header = vec!["replicate_id".to_string(), "t".to_string()];
    header.extend(xs.iter().cloned());
    events.write_record(&header).map_err(io)?;
    for (i, s) in data.samples.iter().enumerate() {
        let cov: Vec<String> = s.covariate().iter().map(f64::to_string).collect();
        for t in s.arrivals() {
            let mut row = vec![i.to_string(), t.to_string()];
            row.extend(cov.iter().cloned());
            events.write_record(&row).map_err(io)?;
        }
    }
    events.flush().map_err(io)?;

    let mut reps = csv_writer(&dir.join("replicates.csv"))?;
    let mut header = vec!["replicate_id".to_string()];
    header.extend(xs.iter().cloned());
    reps.write_record(&header).map_err(io)?;
    for (i, s) in data.samples.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(s.covariate().iter().map(f64::to_string));
        reps.write_record(&row).map_err(io)?;
    }
    reps.flush().map_err(io)?;

    let mut latent = csv_writer(&dir.join("latent.csv"))?;
    let mut header = vec!["replicate_id".to_string(), "tau".to_string()];
    header.extend((1..=nu).map(|j| format!("q_{j}")));
    latent.write_record(&header).map_err(io)?;
    for (i, l) in data.latent.iter().enumerate() {
        let q = QuantileCurve::from_fn(nu, l.quantile.window(), |r| l.quantile.eval(r)).map_err(CliError::from)?;
        let mut row = vec![i.to_string(), l.tau.to_string()];
        row.extend(q.values().iter().map(f64::to_string));
        latent.write_record(&row).map_err(io)?;
    }
    latent.flush().map_err(io)?;
    Ok(())
}

