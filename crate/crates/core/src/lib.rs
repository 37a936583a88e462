//! Nonparametric regression of point-process intensity functions on
//! Euclidean covariates.
//!
//! An intensity function `Λ = τ·f` on a window `[0, T]` is split into an
//! intensity factor `τ` (expected event count) and a shape density `f`. The
//! space of intensities is the product of the half line with the space of
//! densities under the 2-Wasserstein metric, and conditional Fréchet means in
//! that space separate into a scalar regression for `τ` and a Wasserstein
//! barycenter regression for `f`.
//!
//! The pipeline:
//!
//! 1. [`empirical`] turns each replicate's arrival times into an empirical
//!    quantile curve.
//! 2. [`smoothing`] computes local-linear or global (linear-regression) weights
//!    for a covariate value `x`.
//! 3. [`projection`] projects the weighted average of quantile curves back onto
//!    the set of valid quantile functions by solving a small QP.
//! 4. [`regression`] combines the pieces into the standardized intensity factor
//!    and shape estimates.
//!
//! [`simulation`] and [`evaluation`] reproduce the two data-generating
//! mechanisms and the integrated-squared-error experiments; [`cli`] exposes it
//! all on the command line.

pub mod cli;
pub mod empirical;
mod error;
pub mod evaluation;
pub mod projection;
pub mod regression;
pub mod simulation;
pub mod smoothing;
pub mod space;

pub use error::{Error, Result};
pub use space::{
    CdfCurve, DensityCurve, DensityRecovery, IntensitySpacePoint, QuantileCurve, TimeWindow,
};

/// Library version recorded in output documents.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
