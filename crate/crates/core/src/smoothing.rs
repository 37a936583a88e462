//! Kernel weights for local and global Fréchet regression.
//!
//! Local weights are the local-linear smoother weights
//! `s_in(x,h) = K_h(X_i−x)·(û₂ − û₁(X_i−x)) / (û₀û₂ − û₁²)` with
//! `û_j = n⁻¹ Σ K_h(X_i−x)(X_i−x)^j`; global weights are the
//! linear-regression weights `s_in(x) = 1 + (X_i−X̄)ᵀ Σ̂⁻¹ (x−X̄)`.
//! Both average to one over the sample.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric kernel densities supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Triangular,
    Quartic,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Triangular => 1.0 - u.abs(),
            Kernel::Quartic => {
                let v = 1.0 - u * u;
                0.9375 * v * v
            }
        }
    }

    /// `K_h(u) = K(u/h)/h`.
    #[inline]
    pub fn scaled(self, u: f64, h: f64) -> f64 {
        self.eval(u / h) / h
    }

    /// `∫ u² K(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.2,
            Kernel::Triangular => 1.0 / 6.0,
            Kernel::Quartic => 1.0 / 7.0,
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Triangular => "triangular",
            Kernel::Quartic => "quartic",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "triangular" | "tri" => Ok(Kernel::Triangular),
            "quartic" | "biweight" => Ok(Kernel::Quartic),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Regression weights for one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Number of observations with nonzero kernel mass (all of them for
    /// global weights).
    pub support: usize,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `n⁻¹ Σ s_i y_i`.
    pub fn average(&self, ys: &[f64]) -> f64 {
        debug_assert_eq!(ys.len(), self.weights.len());
        let n = self.weights.len() as f64;
        self.weights.iter().zip(ys).map(|(s, y)| s * y).sum::<f64>() / n
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

/// Local-linear weights `s_in(x, h)` for scalar covariates.
pub fn local_weights(xs: &[f64], x: f64, h: f64, kernel: Kernel) -> Result<WeightVector> {
    if xs.len() < 2 {
        return Err(Error::invalid("local weights need at least 2 observations"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    let n = xs.len() as f64;
    let kh: Vec<f64> = xs.iter().map(|&xi| kernel.scaled(xi - x, h)).collect();
    let (mut u0, mut u1, mut u2) = (0.0, 0.0, 0.0);
    for (&xi, &k) in xs.iter().zip(&kh) {
        let d = xi - x;
        u0 += k;
        u1 += k * d;
        u2 += k * d * d;
    }
    u0 /= n;
    u1 /= n;
    u2 /= n;
    let support = kh.iter().filter(|&&k| k > 0.0).count();
    let sigma2 = u0 * u2 - u1 * u1;
    if u0 == 0.0 || sigma2 <= 1e-14 * u0 * u2 {
        return Err(Error::DegenerateDesign {
            x,
            reason: format!("{support} observation(s) within bandwidth {h}, need 2 distinct"),
        });
    }
    let weights = xs
        .iter()
        .zip(&kh)
        .map(|(&xi, &k)| k * (u2 - u1 * (xi - x)) / sigma2)
        .collect();
    Ok(WeightVector { weights, support })
}

/// Local-linear regression estimate `n⁻¹ Σ s_in(x,h) y_i`.
pub fn local_linear_fit(xs: &[f64], ys: &[f64], x: f64, h: f64, kernel: Kernel) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("xs and ys differ in length"));
    }
    Ok(local_weights(xs, x, h, kernel)?.average(ys))
}

/// Precomputed centering and covariance factor for global weights.
#[derive(Debug, Clone)]
pub struct GlobalDesign {
    mean: DVector<f64>,
    centered: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// Largest accepted condition number of the sample covariance.
pub const MAX_CONDITION: f64 = 1e12;

impl GlobalDesign {
    /// `rows[i]` is the covariate vector of observation `i`.
    pub fn new<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.as_ref().len());
        if p == 0 {
            return Err(Error::invalid("global weights need at least one covariate"));
        }
        if n <= p {
            return Err(Error::invalid(format!("global weights need n > p (n = {n}, p = {p})")));
        }
        if rows.iter().any(|r| r.as_ref().len() != p) {
            return Err(Error::invalid("covariate vectors differ in dimension"));
        }
        let data = DMatrix::from_fn(n, p, |i, j| rows[i].as_ref()[j]);
        let mean = DVector::from_fn(p, |j, _| data.column(j).mean());
        let centered = DMatrix::from_fn(n, p, |i, j| data[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / n as f64;
        let eig = cov.clone().symmetric_eigen();
        let hi = eig.eigenvalues.max();
        let lo = eig.eigenvalues.min();
        if !(lo > 0.0) || hi / lo >= MAX_CONDITION {
            return Err(Error::CollinearDesign { condition: if lo > 0.0 { hi / lo } else { f64::INFINITY } });
        }
        let chol = cov.cholesky().ok_or(Error::CollinearDesign { condition: hi / lo })?;
        Ok(GlobalDesign { mean, centered, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn weights(&self, x: &[f64]) -> Result<WeightVector> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "evaluation point has dimension {}, design has {}",
                x.len(),
                self.dim()
            )));
        }
        let dx = DVector::from_fn(self.dim(), |j, _| x[j] - self.mean[j]);
        let v = self.chol.solve(&dx);
        let s = &self.centered * v;
        Ok(WeightVector {
            weights: s.iter().map(|si| 1.0 + si).collect(),
            support: s.len(),
        })
    }
}

/// Global weights `s_in(x)` for the covariate rows `rows`.
pub fn global_weights<R: AsRef<[f64]>>(rows: &[R], x: &[f64]) -> Result<WeightVector> {
    GlobalDesign::new(rows)?.weights(x)
}
