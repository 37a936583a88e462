//! Local and global Fréchet regression of intensity functions.
//!
//! The conditional Fréchet mean in the product space separates into the
//! intensity factor and the shape. The factor is estimated by the weighted
//! mean of the counts standardized by the average count, clamped at zero; the
//! shape by projecting the weighted mean of empirical quantile curves onto
//! the quantile constraint set.

use serde::{Deserialize, Serialize};

use crate::empirical::{quantile_of_sorted, PointProcessSample};
use crate::error::{Error, Result};
use crate::projection::{
    interpolate_solution, project_quantile, QuantileConstraints, DEFAULT_LOWER_SLOPE, DEFAULT_UPPER_SLOPE,
};
use crate::smoothing::{local_weights, GlobalDesign, Kernel, WeightVector};
use crate::space::{DensityCurve, DensityRecovery, QuantileCurve, TimeWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Kernel half-width for local fits; unused by global fits.
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub kernel: Kernel,
    pub nu: usize,
    pub lower_slope: f64,
    pub upper_slope: f64,
    #[serde(default)]
    pub density: DensityRecovery,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bandwidth: None,
            kernel: Kernel::Epanechnikov,
            nu: 100,
            lower_slope: DEFAULT_LOWER_SLOPE,
            upper_slope: DEFAULT_UPPER_SLOPE,
            density: DensityRecovery::default(),
        }
    }
}

impl FitConfig {
    pub fn local(bandwidth: f64) -> Self {
        FitConfig { bandwidth: Some(bandwidth), ..Default::default() }
    }

    pub fn constraints(&self, window: TimeWindow) -> Result<QuantileConstraints> {
        QuantileConstraints::new(self.lower_slope, self.upper_slope, window, self.nu)
    }
}

/// Fitted shape together with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFit {
    pub quantile: QuantileCurve,
    pub iterations: usize,
    pub max_violation: f64,
}

/// Standardized intensity factor `max(0, n⁻¹Σ s_i N_i / N̄)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauFit {
    pub tau_rel: f64,
    /// The weighted ratio before clamping at zero.
    pub raw: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Replicates with positive weight mass (kernel window or all for global).
    pub window_count: usize,
    pub solver_iterations: usize,
    pub max_violation: f64,
    pub tau_clamped: bool,
}

/// Estimated conditional intensity `τ̃(x)·f̃(x)` at one covariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalIntensityFit {
    pub x: Vec<f64>,
    pub tau_rel: f64,
    pub shape_quantile: QuantileCurve,
    pub shape_density: DensityCurve,
    pub diagnostics: FitDiagnostics,
}

impl ConditionalIntensityFit {
    /// `τ̃·f̃` on the density grid.
    pub fn intensity(&self) -> Vec<f64> {
        self.shape_density.values().iter().map(|f| self.tau_rel * f).collect()
    }

    pub fn intensity_integral(&self) -> f64 {
        crate::space::trapezoid(self.shape_density.grid(), &self.intensity())
    }
}

/// A dataset prepared for repeated fits: empirical quantiles and counts are
/// computed once.
#[derive(Debug, Clone)]
pub struct FrechetRegression {
    config: FitConfig,
    constraints: QuantileConstraints,
    window: TimeWindow,
    covariates: Vec<Vec<f64>>,
    quantiles: Vec<Vec<f64>>,
    counts: Vec<f64>,
    mean_count: f64,
    global: std::result::Result<GlobalDesign, Error>,
}

impl FrechetRegression {
    pub fn new(samples: &[PointProcessSample], config: &FitConfig) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("no samples"))?;
        let window = first.window();
        let dim = first.covariate().len();
        for (i, s) in samples.iter().enumerate() {
            if s.window() != window {
                return Err(Error::DomainMismatch { left: window.length(), right: s.window().length() });
            }
            if s.covariate().len() != dim {
                return Err(Error::invalid(format!(
                    "sample {i} has covariate dimension {}, expected {dim}",
                    s.covariate().len()
                )));
            }
        }
        if let Some(h) = config.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        let constraints = config.constraints(window)?;
        let quantiles = samples
            .iter()
            .map(|s| {
                if s.count() == 0 {
                    QuantileCurve::uniform(config.nu, window).into_values()
                } else {
                    let mut sorted = s.arrivals().to_vec();
                    sorted.sort_unstable_by(f64::total_cmp);
                    quantile_of_sorted(&sorted, config.nu, window).into_values()
                }
            })
            .collect();
        let counts: Vec<f64> = samples.iter().map(|s| s.count() as f64).collect();
        let mean_count = counts.iter().sum::<f64>() / counts.len() as f64;
        let covariates: Vec<Vec<f64>> = samples.iter().map(|s| s.covariate().to_vec()).collect();
        let global = GlobalDesign::new(&covariates);
        Ok(FrechetRegression {
            config: config.clone(),
            constraints,
            window,
            covariates,
            quantiles,
            counts,
            mean_count,
            global,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates[0].len()
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    /// `N̄(T)`.
    pub fn mean_count(&self) -> f64 {
        self.mean_count
    }

    pub fn local_weights(&self, x: f64) -> Result<WeightVector> {
        if self.dim() != 1 {
            return Err(Error::invalid(format!(
                "local regression needs a scalar covariate, data has dimension {}",
                self.dim()
            )));
        }
        let h = self
            .config
            .bandwidth
            .ok_or_else(|| Error::invalid("local regression requires a bandwidth"))?;
        let xs: Vec<f64> = self.covariates.iter().map(|c| c[0]).collect();
        local_weights(&xs, x, h, self.config.kernel)
    }

    pub fn global_weights(&self, x: &[f64]) -> Result<WeightVector> {
        self.global.as_ref().map_err(Clone::clone)?.weights(x)
    }

    /// Weighted mean `w_j = n⁻¹ Σ s_i Q̂_i(r_j)` on the grid.
    pub fn weighted_quantile_mean(&self, weights: &WeightVector) -> Vec<f64> {
        let n = self.len() as f64;
        let mut w = vec![0.0; self.config.nu];
        for (s, q) in weights.weights.iter().zip(&self.quantiles) {
            if *s != 0.0 {
                for (wj, qj) in w.iter_mut().zip(q) {
                    *wj += s * qj;
                }
            }
        }
        w.iter_mut().for_each(|v| *v /= n);
        w
    }

    pub fn shape_with(&self, weights: &WeightVector) -> Result<ShapeFit> {
        let w = self.weighted_quantile_mean(weights);
        let proj = project_quantile(&w, &self.constraints)?;
        let quantile = interpolate_solution(&proj.values, &self.constraints)?;
        Ok(ShapeFit { quantile, iterations: proj.iterations, max_violation: proj.max_violation })
    }

    pub fn tau_with(&self, weights: &WeightVector) -> Result<TauFit> {
        if self.mean_count <= 0.0 {
            return Err(Error::EmptyData);
        }
        let raw = weights.average(&self.counts) / self.mean_count;
        Ok(TauFit { tau_rel: raw.max(0.0), raw, clamped: raw < 0.0 })
    }

    pub fn intensity_with(&self, x: Vec<f64>, weights: &WeightVector) -> Result<ConditionalIntensityFit> {
        let tau = self.tau_with(weights)?;
        let shape = self.shape_with(weights)?;
        let shape_density = self.config.density.recover(&shape.quantile)?;
        Ok(ConditionalIntensityFit {
            x,
            tau_rel: tau.tau_rel,
            shape_quantile: shape.quantile,
            shape_density,
            diagnostics: FitDiagnostics {
                window_count: weights.support,
                solver_iterations: shape.iterations,
                max_violation: shape.max_violation,
                tau_clamped: tau.clamped,
            },
        })
    }

    pub fn shape_local(&self, x: f64) -> Result<ShapeFit> {
        self.shape_with(&self.local_weights(x)?)
    }

    pub fn tau_local(&self, x: f64) -> Result<TauFit> {
        self.tau_with(&self.local_weights(x)?)
    }

    pub fn intensity_local(&self, x: f64) -> Result<ConditionalIntensityFit> {
        self.intensity_with(vec![x], &self.local_weights(x)?)
    }

    pub fn shape_global(&self, x: &[f64]) -> Result<ShapeFit> {
        self.shape_with(&self.global_weights(x)?)
    }

    pub fn tau_global(&self, x: &[f64]) -> Result<TauFit> {
        self.tau_with(&self.global_weights(x)?)
    }

    pub fn intensity_global(&self, x: &[f64]) -> Result<ConditionalIntensityFit> {
        self.intensity_with(x.to_vec(), &self.global_weights(x)?)
    }
}

pub fn fit_shape_local(samples: &[PointProcessSample], x: f64, cfg: &FitConfig) -> Result<QuantileCurve> {
    Ok(FrechetRegression::new(samples, cfg)?.shape_local(x)?.quantile)
}

pub fn fit_tau_local(samples: &[PointProcessSample], x: f64, cfg: &FitConfig) -> Result<f64> {
    Ok(FrechetRegression::new(samples, cfg)?.tau_local(x)?.tau_rel)
}

pub fn fit_intensity_local(
    samples: &[PointProcessSample],
    x: f64,
    cfg: &FitConfig,
) -> Result<ConditionalIntensityFit> {
    FrechetRegression::new(samples, cfg)?.intensity_local(x)
}

pub fn fit_shape_global(samples: &[PointProcessSample], x: &[f64], cfg: &FitConfig) -> Result<QuantileCurve> {
    Ok(FrechetRegression::new(samples, cfg)?.shape_global(x)?.quantile)
}

pub fn fit_tau_global(samples: &[PointProcessSample], x: &[f64], cfg: &FitConfig) -> Result<f64> {
    Ok(FrechetRegression::new(samples, cfg)?.tau_global(x)?.tau_rel)
}

pub fn fit_intensity_global(
    samples: &[PointProcessSample],
    x: &[f64],
    cfg: &FitConfig,
) -> Result<ConditionalIntensityFit> {
    FrechetRegression::new(samples, cfg)?.intensity_global(x)
}
