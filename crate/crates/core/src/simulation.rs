//! Data-generating mechanisms for Cox processes with covariates, and the
//! Monte Carlo oracles used as ground truth.
//!
//! Each replicate draws `X ~ U(0,1)`, an intensity factor `τ` from a linear
//! model with truncated-normal noise, and a random shape quantile `Q`. The
//! count is Poisson with mean `α·τ` and, given the count, arrivals are i.i.d.
//! `Q(U)` with `U ~ U(0,1)`.
//!
//! Two shape families are provided: [`LqdSimConfig`] builds `Q` from a random
//! log-quantile-density curve, [`TruncNormSimConfig`] uses truncated normal
//! densities with covariate-dependent mean and scale.
//!
//! Randomness is split by stream: replicate `i` of a dataset with seed `s`
//! uses ChaCha20 keyed by `s` on stream `i`, so generation order and thread
//! count do not change the output.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::empirical::PointProcessSample;
use crate::error::{Error, Result};
use crate::space::{grid_point, QuantileCurve, TimeWindow};

/// Generator for stream `stream` of master seed `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes several words into one seed (splitmix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step against the accurate CDF
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if !(pdf > 0.0) {
        return z;
    }
    let e = (normal_cdf(z) - p) / pdf;
    z - e / (1.0 + 0.5 * z * e)
}

/// Quantile at level `u` of `N(mu, sigma²)` conditioned on `[lo, hi]`.
pub fn truncated_normal_quantile(mu: f64, sigma: f64, lo: f64, hi: f64, u: f64) -> f64 {
    if sigma == 0.0 {
        return mu.clamp(lo, hi);
    }
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    // Work in whichever tail keeps the probabilities away from 1.
    let z = if a > 0.0 {
        let (pa, pb) = (normal_cdf(-a), normal_cdf(-b));
        -normal_quantile(pa - u * (pa - pb))
    } else {
        let (pa, pb) = (normal_cdf(a), normal_cdf(b));
        normal_quantile(pa + u * (pb - pa))
    };
    (mu + sigma * z.clamp(a, b)).clamp(lo, hi)
}

/// Draws from `N(mu, sigma²)` conditioned on `[lo, hi]` by inversion.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mu: f64, sigma: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(lo <= hi) || !(sigma >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!(
            "truncated normal needs lo <= hi and sigma >= 0 (mu {mu}, sigma {sigma}, [{lo}, {hi}])"
        )));
    }
    if sigma == 0.0 || lo == hi {
        return Ok(mu.clamp(lo, hi));
    }
    let u: f64 = rng.random();
    Ok(truncated_normal_quantile(mu, sigma, lo, hi, u))
}

/// Magnitude above which an LQD curve is rejected.
pub const LQD_CAP: f64 = 50.0;

/// Inverse log-quantile-density transform.
///
/// `curve[j]` is the value at `s_j = j/(ν+1)`, `j = 0..=ν+1`. Returns
/// `Q(t) = T·∫₀ᵗ exp(curve) / ∫₀¹ exp(curve)` at the interior grid, with
/// both integrals by the trapezoid rule.
pub fn lqd_inverse(curve: &[f64], window: TimeWindow) -> Result<QuantileCurve> {
    if curve.len() < 3 {
        return Err(Error::invalid("lqd curve needs at least 3 grid values"));
    }
    let magnitude = curve.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(magnitude <= LQD_CAP) {
        return Err(Error::Overflow { magnitude, cap: LQD_CAP });
    }
    let top = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cum = Vec::with_capacity(curve.len());
    let mut acc = 0.0;
    let mut prev = (curve[0] - top).exp();
    cum.push(0.0);
    for v in &curve[1..] {
        let e = (v - top).exp();
        acc += 0.5 * (prev + e);
        cum.push(acc);
        prev = e;
    }
    let total = acc;
    let t = window.length();
    let nu = curve.len() - 2;
    let eps = t * 1e-12;
    let values = cum[1..=nu].iter().map(|c| (t * c / total).clamp(eps, t - eps)).collect();
    QuantileCurve::new(values, window)
}

/// `τ = a + b·x + ε`, `ε ~ N(0, σ²)` truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauModel {
    pub intercept: f64,
    pub slope: f64,
    pub noise_sd: f64,
    pub noise_lo: f64,
    pub noise_hi: f64,
}

impl TauModel {
    /// `a₁ = 1`, `b₁ = 0.2`, `σ₁ = 1.5`, noise truncated to `[−0.2, 0.2]`.
    pub fn paper() -> Self {
        TauModel { intercept: 1.0, slope: 0.2, noise_sd: 1.5, noise_lo: -0.2, noise_hi: 0.2 }
    }

    /// `E(τ | X = x)`; the noise is symmetric about zero.
    pub fn mean(&self, x: f64) -> f64 {
        self.intercept + self.slope * x + self.noise_mean()
    }

    fn noise_mean(&self) -> f64 {
        if self.noise_sd == 0.0 {
            return 0.0_f64.clamp(self.noise_lo, self.noise_hi);
        }
        let a = self.noise_lo / self.noise_sd;
        let b = self.noise_hi / self.noise_sd;
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        self.noise_sd * (phi(a) - phi(b)) / (normal_cdf(b) - normal_cdf(a))
    }

    /// `E(τ)` for `X ~ U(0, 1)`.
    pub fn expected(&self) -> f64 {
        self.mean(0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let eps = sample_truncated_normal(0.0, self.noise_sd, self.noise_lo, self.noise_hi, rng)?;
        Ok(self.intercept + self.slope * x + eps)
    }

    fn validate(&self) -> Result<()> {
        let worst = self.intercept + self.slope.min(0.0) + self.noise_lo;
        if !(worst > 0.0) {
            return Err(Error::invalid(format!("intensity factor can reach {worst} <= 0 on the covariate support")));
        }
        if self.noise_lo > self.noise_hi || self.noise_sd < 0.0 {
            return Err(Error::invalid("intensity-factor noise needs lo <= hi and sd >= 0"));
        }
        Ok(())
    }
}

/// Latent truth of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReplicate {
    pub tau: f64,
    pub quantile: QuantileCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub samples: Vec<PointProcessSample>,
    pub latent: Vec<LatentReplicate>,
    pub seed: u64,
    pub alpha: f64,
}

/// A data-generating mechanism with covariate `X ~ U(0, 1)`.
pub trait IntensityModel: Send + Sync {
    fn window(&self) -> TimeWindow;
    /// Intensity multiplier `α`.
    fn alpha(&self) -> f64;
    fn tau_model(&self) -> &TauModel;
    /// Random shape quantile at covariate `x`.
    fn draw_shape(&self, x: f64, rng: &mut ChaCha20Rng) -> Result<QuantileCurve>;

    fn mean_tau(&self, x: f64) -> f64 {
        self.tau_model().mean(x)
    }

    fn expected_tau(&self) -> f64 {
        self.tau_model().expected()
    }
}

/// Which function of `var_fns` is the score variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariance {
    /// `var(ξ_k | x) = υ_k²(x)`, the tabulated value.
    #[default]
    Squared,
    /// `var(ξ_k | x) = υ_k(x)`, the square root of the tabulated value.
    Root,
}

pub type CurveFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type BasisFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Random shapes `Q = lqd⁻¹(μ(·,x) + Σ ξ_k φ_k)` with `ξ_k ~ N(0, υ_k²(x))`.
#[derive(Clone)]
pub struct LqdSimConfig {
    pub tau: TauModel,
    /// `μ(s, x)`.
    pub mean_fn: CurveFn,
    /// `φ_k(s)`, orthonormal on `[0, 1]`.
    pub eigen_fns: Vec<BasisFn>,
    /// `υ_k²(x)`.
    pub var_fns: Vec<BasisFn>,
    pub variance: ScoreVariance,
    pub alpha: f64,
    pub window: TimeWindow,
    /// Interior grid size on which latent quantiles are tabulated.
    pub latent_nu: usize,
}

impl fmt::Debug for LqdSimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LqdSimConfig")
            .field("tau", &self.tau)
            .field("components", &self.eigen_fns.len())
            .field("variance", &self.variance)
            .field("alpha", &self.alpha)
            .field("window", &self.window)
            .field("latent_nu", &self.latent_nu)
            .finish()
    }
}

impl LqdSimConfig {
    /// `μ(s,x) = e^{1.5x} + e^{1.5s}`, `φ₁ = −√2 cos(πs)`, `φ₂ = √2 sin(πs)`,
    /// `υ₁² = 3 + 2x`, `υ₂² = (2 − x)²`, `T = 1`.
    pub fn paper(alpha: f64) -> Self {
        use std::f64::consts::{PI, SQRT_2};
        LqdSimConfig {
            tau: TauModel::paper(),
            mean_fn: Arc::new(|s, x| (1.5 * x).exp() + (1.5 * s).exp()),
            eigen_fns: vec![Arc::new(|s| -SQRT_2 * (PI * s).cos()), Arc::new(|s| SQRT_2 * (PI * s).sin())],
            var_fns: vec![Arc::new(|x| 3.0 + 2.0 * x), Arc::new(|x| (2.0 - x).powi(2))],
            variance: ScoreVariance::Squared,
            alpha,
            window: TimeWindow::new(1.0).expect("unit window"),
            latent_nu: 1000,
        }
    }

    /// No regression: constant `τ = tau` and the fixed shape `lqd⁻¹(μ(·))`.
    pub fn point_mass(tau: f64, mean: impl Fn(f64) -> f64 + Send + Sync + 'static, alpha: f64) -> Self {
        LqdSimConfig {
            tau: TauModel { intercept: tau, slope: 0.0, noise_sd: 0.0, noise_lo: 0.0, noise_hi: 0.0 },
            mean_fn: Arc::new(move |s, _| mean(s)),
            eigen_fns: Vec::new(),
            var_fns: Vec::new(),
            variance: ScoreVariance::Squared,
            alpha,
            window: TimeWindow::new(1.0).expect("unit window"),
            latent_nu: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        if self.eigen_fns.len() != self.var_fns.len() {
            return Err(Error::invalid("need one variance function per eigenfunction"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.latent_nu < 2 {
            return Err(Error::invalid("latent grid needs at least 2 points"));
        }
        // orthonormality by midpoint quadrature
        let m = 4000;
        let k = self.eigen_fns.len();
        for a in 0..k {
            for b in a..k {
                let ip: f64 = (0..m)
                    .map(|i| {
                        let s = (i as f64 + 0.5) / m as f64;
                        (self.eigen_fns[a])(s) * (self.eigen_fns[b])(s)
                    })
                    .sum::<f64>()
                    / m as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                if (ip - target).abs() > 1e-3 {
                    return Err(Error::invalid(format!("eigenfunctions {a},{b} have inner product {ip}")));
                }
            }
        }
        Ok(())
    }

    fn score_sd(&self, k: usize, x: f64) -> f64 {
        let v = (self.var_fns[k])(x).max(0.0);
        match self.variance {
            ScoreVariance::Squared => v.sqrt(),
            ScoreVariance::Root => v.sqrt().sqrt(),
        }
    }

    /// The LQD curve at `x` for given scores, on `s_j = j/(ν+1)`, `j = 0..=ν+1`.
    pub fn lqd_curve(&self, x: f64, scores: &[f64]) -> Vec<f64> {
        let nu = self.latent_nu;
        (0..=nu + 1)
            .map(|j| {
                let s = grid_point(j, nu);
                (self.mean_fn)(s, x) + scores.iter().zip(&self.eigen_fns).map(|(xi, phi)| xi * phi(s)).sum::<f64>()
            })
            .collect()
    }
}

impl IntensityModel for LqdSimConfig {
    fn window(&self) -> TimeWindow {
        self.window
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn tau_model(&self) -> &TauModel {
        &self.tau
    }

    fn draw_shape(&self, x: f64, rng: &mut ChaCha20Rng) -> Result<QuantileCurve> {
        let scores: Vec<f64> = (0..self.eigen_fns.len())
            .map(|k| {
                let z: f64 = StandardNormal.sample(rng);
                self.score_sd(k, x) * z
            })
            .collect();
        lqd_inverse(&self.lqd_curve(x, &scores), self.window)
    }
}

/// Truncated-normal noise `N(0, sd²)` restricted to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedNoise {
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Shapes are normal densities truncated to `[0, T]` with mean
/// `a₂ + b₂x + ε₁` and standard deviation `a₃ + b₃x + ε₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncNormSimConfig {
    pub tau: TauModel,
    pub mean_intercept: f64,
    pub mean_slope: f64,
    pub sd_intercept: f64,
    pub sd_slope: f64,
    pub mean_noise: BoundedNoise,
    pub sd_noise: BoundedNoise,
    pub alpha: f64,
    pub window: TimeWindow,
    pub latent_nu: usize,
}

impl TruncNormSimConfig {
    /// `a₂ = 0.3`, `b₂ = 0.4`, `a₃ = 0.1`, `b₃ = −0.01`, `ε₁ ∈ [−0.1, 0.1]`,
    /// `ε₂ ∈ [−0.01, 0.01]`, both with `σ = 0.5`.
    pub fn paper(alpha: f64) -> Self {
        TruncNormSimConfig {
            tau: TauModel::paper(),
            mean_intercept: 0.3,
            mean_slope: 0.4,
            sd_intercept: 0.1,
            sd_slope: -0.01,
            mean_noise: BoundedNoise { sd: 0.5, lo: -0.1, hi: 0.1 },
            sd_noise: BoundedNoise { sd: 0.5, lo: -0.01, hi: 0.01 },
            alpha,
            window: TimeWindow::new(1.0).expect("unit window"),
            latent_nu: 1000,
        }
    }

    /// Horizontal translation setting for comparing Euclidean and Wasserstein
    /// means: `a₂ = b₂ = 1/3`, constant sd `0.05`, wide mean noise.
    pub fn translation_comparison(alpha: f64) -> Self {
        TruncNormSimConfig {
            mean_intercept: 1.0 / 3.0,
            mean_slope: 1.0 / 3.0,
            sd_intercept: 0.05,
            sd_slope: 0.0,
            mean_noise: BoundedNoise { sd: 3.0, lo: -0.15, hi: 0.15 },
            sd_noise: BoundedNoise { sd: 0.0, lo: 0.0, hi: 0.0 },
            ..Self::paper(alpha)
        }
    }

    /// Same configuration with all shape and factor noise removed.
    pub fn noiseless(&self) -> Self {
        let off = BoundedNoise { sd: 0.0, lo: 0.0, hi: 0.0 };
        TruncNormSimConfig {
            tau: TauModel { noise_sd: 0.0, noise_lo: 0.0, noise_hi: 0.0, ..self.tau },
            mean_noise: off,
            sd_noise: off,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        let worst = self.sd_intercept + self.sd_slope.min(0.0) + self.sd_noise.lo;
        if !(worst > 0.0) {
            return Err(Error::invalid(format!("shape sd can reach {worst} <= 0 on the covariate support")));
        }
        for n in [self.mean_noise, self.sd_noise] {
            if n.lo > n.hi || n.sd < 0.0 {
                return Err(Error::invalid("noise bounds need lo <= hi and sd >= 0"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Random `(mean, sd)` of the shape at covariate `x`.
    pub fn draw_params<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<(f64, f64)> {
        let (m, s) = (self.mean_noise, self.sd_noise);
        let e1 = sample_truncated_normal(0.0, m.sd, m.lo, m.hi, rng)?;
        let e2 = sample_truncated_normal(0.0, s.sd, s.lo, s.hi, rng)?;
        Ok((self.mean_intercept + self.mean_slope * x + e1, self.sd_intercept + self.sd_slope * x + e2))
    }

    /// Density at `t` of `N(mean, sd²)` truncated to `[0, T]`.
    pub fn shape_density(&self, mean: f64, sd: f64, t: f64) -> f64 {
        let len = self.window.length();
        if !(0.0..=len).contains(&t) {
            return 0.0;
        }
        let mass = if mean > 0.5 * len {
            normal_cdf(mean / sd) - normal_cdf((mean - len) / sd)
        } else {
            normal_cdf((len - mean) / sd) - normal_cdf(-mean / sd)
        };
        let z = (t - mean) / sd;
        (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sd * mass)
    }

    /// Quantile of the truncated normal shape with the given mean and sd.
    pub fn shape_quantile(&self, mean: f64, sd: f64) -> Result<QuantileCurve> {
        let t = self.window.length();
        let eps = t * 1e-12;
        QuantileCurve::from_fn(self.latent_nu, self.window, |r| {
            truncated_normal_quantile(mean, sd, 0.0, t, r).clamp(eps, t - eps)
        })
    }
}

impl IntensityModel for TruncNormSimConfig {
    fn window(&self) -> TimeWindow {
        self.window
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn tau_model(&self) -> &TauModel {
        &self.tau
    }

    fn draw_shape(&self, x: f64, rng: &mut ChaCha20Rng) -> Result<QuantileCurve> {
        let (mean, sd) = self.draw_params(x, rng)?;
        self.shape_quantile(mean, sd)
    }
}

/// Draws one replicate `(X, τ, Q, arrivals)` from `rng`.
fn draw_replicate<M: IntensityModel + ?Sized>(
    model: &M,
    rng: &mut ChaCha20Rng,
) -> Result<(PointProcessSample, LatentReplicate)> {
    let x: f64 = rng.random();
    let tau = model.tau_model().sample(x, rng)?;
    let quantile = model.draw_shape(x, rng)?;
    let rate = model.alpha() * tau;
    let count = if rate > 0.0 {
        Poisson::new(rate)
            .map_err(|e| Error::invalid(format!("poisson rate {rate}: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut arrivals: Vec<f64> = (0..count).map(|_| quantile.eval(rng.random())).collect();
    arrivals.sort_unstable_by(f64::total_cmp);
    let sample = PointProcessSample::new(vec![x], arrivals, model.window())?;
    Ok((sample, LatentReplicate { tau, quantile }))
}

/// `n` independent replicates; replicate `i` uses stream `i` of `seed`.
pub fn simulate<M: IntensityModel + ?Sized>(model: &M, n: usize, seed: u64) -> Result<SimulatedDataset> {
    let draws: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| draw_replicate(model, &mut replicate_rng(seed, i as u64)))
        .collect::<Result<_>>()?;
    let (samples, latent) = draws.into_iter().unzip();
    Ok(SimulatedDataset { samples, latent, seed, alpha: model.alpha() })
}

pub fn simulate_lqd(n: usize, cfg: &LqdSimConfig, seed: u64) -> Result<SimulatedDataset> {
    cfg.validate()?;
    simulate(cfg, n, seed)
}

pub fn simulate_truncnorm(n: usize, cfg: &TruncNormSimConfig, seed: u64) -> Result<SimulatedDataset> {
    cfg.validate()?;
    simulate(cfg, n, seed)
}

/// `E(τ | X = x)`.
pub fn oracle_tau<M: IntensityModel + ?Sized>(model: &M, x: f64) -> f64 {
    model.mean_tau(x)
}

/// Monte Carlo `E(Q | X = x)`: the pointwise mean of `reps` shapes drawn at
/// `x`. Draw `k` uses stream `k` of `seed` for every `x`.
pub fn oracle_shape<M: IntensityModel + ?Sized>(model: &M, x: f64, reps: usize, seed: u64) -> Result<QuantileCurve> {
    if reps == 0 {
        return Err(Error::invalid("oracle needs at least one replicate"));
    }
    let draws: Vec<QuantileCurve> = (0..reps)
        .into_par_iter()
        .map(|k| model.draw_shape(x, &mut replicate_rng(seed, k as u64)))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; draws[0].nu()];
    for d in &draws {
        for (a, v) in acc.iter_mut().zip(d.values()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= reps as f64);
    QuantileCurve::new(acc, model.window())
}

/// Monte Carlo `E(s(X,x)·Q)` before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalOracle {
    pub x: f64,
    /// Values on the latent grid; may be non-monotone.
    pub values: Vec<f64>,
    pub monotone: bool,
}

/// Sample moments of the joint draws. Because the weight is affine in `X`,
/// `E[Q]` and the covariance of `X` with `Q` determine the oracle at every
/// evaluation point.
pub struct GlobalOracleDraws {
    mean_x: f64,
    var_x: f64,
    mean_q: Vec<f64>,
    cov_xq: Vec<f64>,
}

/// Draws per accumulation chunk; chunks are summed in index order so the
/// result does not depend on the thread count.
const ORACLE_CHUNK: usize = 256;

impl GlobalOracleDraws {
    /// Draw `k` takes `X_k` uniform on the stratum `[k/reps, (k+1)/reps)` and
    /// `Q_k` at `X_k` from stream `k`.
    pub fn new<M: IntensityModel + ?Sized>(model: &M, reps: usize, seed: u64) -> Result<Self> {
        if reps < 2 {
            return Err(Error::invalid("global oracle needs at least 2 replicates"));
        }
        let chunks: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = (0..reps.div_ceil(ORACLE_CHUNK))
            .into_par_iter()
            .map(|c| {
                let (mut sum_x, mut sum_xx) = (0.0, 0.0);
                let mut sum_q: Vec<f64> = Vec::new();
                let mut sum_xq: Vec<f64> = Vec::new();
                for k in c * ORACLE_CHUNK..((c + 1) * ORACLE_CHUNK).min(reps) {
                    let mut rng = replicate_rng(seed, k as u64);
                    let x = (k as f64 + rng.random::<f64>()) / reps as f64;
                    let q = model.draw_shape(x, &mut rng)?;
                    sum_x += x;
                    sum_xx += x * x;
                    if sum_q.is_empty() {
                        sum_q = vec![0.0; q.nu()];
                        sum_xq = vec![0.0; q.nu()];
                    }
                    for ((a, b), v) in sum_q.iter_mut().zip(sum_xq.iter_mut()).zip(q.values()) {
                        *a += v;
                        *b += x * v;
                    }
                }
                Ok((sum_x, sum_xx, sum_q, sum_xq))
            })
            .collect::<Result<_>>()?;
        let nu = chunks[0].2.len();
        let (mut sum_x, mut sum_xx) = (0.0, 0.0);
        let (mut mean_q, mut cov_xq) = (vec![0.0; nu], vec![0.0; nu]);
        for (sx, sxx, sq, sxq) in &chunks {
            sum_x += sx;
            sum_xx += sxx;
            mean_q.iter_mut().zip(sq).for_each(|(a, v)| *a += v);
            cov_xq.iter_mut().zip(sxq).for_each(|(a, v)| *a += v);
        }
        let n = reps as f64;
        let mean_x = sum_x / n;
        let var_x = sum_xx / n - mean_x * mean_x;
        mean_q.iter_mut().for_each(|a| *a /= n);
        cov_xq.iter_mut().zip(&mean_q).for_each(|(a, m)| *a = *a / n - mean_x * m);
        Ok(GlobalOracleDraws { mean_x, var_x, mean_q, cov_xq })
    }

    pub fn at(&self, x: f64) -> GlobalOracle {
        let slope = (x - self.mean_x) / self.var_x;
        let values: Vec<f64> = self.mean_q.iter().zip(&self.cov_xq).map(|(m, c)| m + slope * c).collect();
        let monotone = values.windows(2).all(|w| w[1] >= w[0]);
        GlobalOracle { x, values, monotone }
    }
}

/// Monte Carlo `E(s(X,x)·Q)` with weights from the simulated covariates.
pub fn oracle_shape_global<M: IntensityModel + ?Sized>(model: &M, x: f64, reps: usize, seed: u64) -> Result<GlobalOracle> {
    Ok(GlobalOracleDraws::new(model, reps, seed)?.at(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> TimeWindow {
        TimeWindow::new(1.0).unwrap()
    }

    #[test]
    fn normal_functions_match_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(-3.0), 0.001_349_898_031_630_094_6, epsilon = 1e-17);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_quantile(1e-10), -6.361_340_902_404_056, epsilon = 1e-12);
        for p in [1e-8, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) / p - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn truncated_normal_basics() {
        let mut rng = replicate_rng(1, 0);
        assert_eq!(sample_truncated_normal(0.3, 0.0, 0.0, 1.0, &mut rng).unwrap(), 0.3);
        assert_eq!(sample_truncated_normal(1.3, 0.0, 0.0, 1.0, &mut rng).unwrap(), 1.0);
        assert!(sample_truncated_normal(0.0, 1.0, 1.0, 0.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, -1.0, 0.0, 1.0, &mut rng).is_err());
        // far upper tail stays inside and ordered
        let a = truncated_normal_quantile(0.0, 1.0, 8.0, 9.0, 0.1);
        let b = truncated_normal_quantile(0.0, 1.0, 8.0, 9.0, 0.9);
        assert!(8.0 <= a && a < b && b <= 9.0);
    }

    #[test]
    fn truncated_normal_means() {
        let n = 100_000;
        let mut rng = replicate_rng(2, 0);
        let draws: Vec<f64> = (0..n).map(|_| sample_truncated_normal(0.4, 0.3, 0.1, 0.7, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 0.4).abs() < 4.0 * sd / (n as f64).sqrt());

        let draws: Vec<f64> = (0..n).map(|_| sample_truncated_normal(0.0, 1.0, 0.0, 6.0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let half_normal = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - half_normal).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn lqd_inverse_cases() {
        let nu = 999;
        let zero = lqd_inverse(&vec![0.0; nu + 2], unit()).unwrap();
        let c = lqd_inverse(&vec![3.7; nu + 2], unit()).unwrap();
        for (j, (a, b)) in zero.values().iter().zip(c.values()).enumerate() {
            let r = grid_point(j + 1, nu);
            assert_abs_diff_eq!(*a, r, epsilon = 1e-12);
            assert_abs_diff_eq!(*b, r, epsilon = 1e-12);
        }
        let lin: Vec<f64> = (0..nu + 2).map(|j| grid_point(j, nu)).collect();
        let q = lqd_inverse(&lin, unit()).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(q.eval(0.5), (e.sqrt() - 1.0) / (e - 1.0), epsilon = 1e-5);
        assert!(matches!(lqd_inverse(&[0.0, 60.0, 0.0], unit()), Err(Error::Overflow { .. })));
    }

    #[test]
    fn noiseless_lqd_is_uniform() {
        let cfg = LqdSimConfig {
            tau: TauModel { noise_sd: 0.0, ..TauModel::paper() },
            mean_fn: Arc::new(|_, _| 0.0),
            var_fns: vec![Arc::new(|_| 0.0), Arc::new(|_| 0.0)],
            latent_nu: 99,
            ..LqdSimConfig::paper(50.0)
        };
        let data = simulate_lqd(30, &cfg, 4).unwrap();
        for (s, l) in data.samples.iter().zip(&data.latent) {
            let x = s.covariate()[0];
            assert_abs_diff_eq!(l.tau, 1.0 + 0.2 * x, epsilon = 1e-15);
            for (j, q) in l.quantile.values().iter().enumerate() {
                assert_abs_diff_eq!(*q, grid_point(j + 1, 99), epsilon = 1e-12);
            }
        }
        assert!(simulate_lqd(0, &cfg, 4).unwrap().samples.is_empty());
    }

    #[test]
    fn paper_lqd_validates_and_counts_match_moment() {
        let cfg = LqdSimConfig::paper(40.0);
        cfg.validate().unwrap();
        let n = 500;
        let data = simulate_lqd(n, &cfg, 11).unwrap();
        let ratios: Vec<f64> = data.samples.iter().map(|s| s.count() as f64 / cfg.alpha).collect();
        let mean = ratios.iter().sum::<f64>() / n as f64;
        let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 1.1).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
        assert_abs_diff_eq!(cfg.expected_tau(), 1.1, epsilon = 1e-15);
    }

    #[test]
    fn reproducible() {
        let cfg = LqdSimConfig::paper(20.0);
        let a = simulate_lqd(25, &cfg, 99).unwrap();
        let b = simulate_lqd(25, &cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_lqd(25, &cfg, 100).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = LqdSimConfig::paper(1.0);
        cfg.tau.intercept = 0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = LqdSimConfig::paper(1.0);
        cfg.eigen_fns[1] = Arc::new(|s| s);
        assert!(cfg.validate().is_err());
        let mut tn = TruncNormSimConfig::paper(1.0);
        tn.sd_intercept = 0.005;
        assert!(tn.validate().is_err());
    }

    #[test]
    fn truncnorm_noiseless_shapes() {
        let cfg = TruncNormSimConfig::paper(100.0).noiseless();
        let data = simulate_truncnorm(20, &cfg, 3).unwrap();
        for (s, l) in data.samples.iter().zip(&data.latent) {
            let x = s.covariate()[0];
            let exact = cfg.shape_quantile(0.3 + 0.4 * x, 0.1 - 0.01 * x).unwrap();
            assert_eq!(&l.quantile, &exact);
            assert!(s.arrivals().iter().all(|&t| (0.0..=1.0).contains(&t)));
            let d = crate::space::DensityRecovery::default().recover(&l.quantile).unwrap();
            assert_abs_diff_eq!(d.integral(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn truncnorm_arrival_mean_at_half() {
        let cfg = TruncNormSimConfig { mean_slope: 0.4, ..TruncNormSimConfig::paper(1.0).noiseless() };
        let q = cfg.shape_quantile(0.5, 0.095).unwrap();
        let mut rng = replicate_rng(5, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| q.eval(rng.random())).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // symmetric truncation about 0.5
        assert!((mean - 0.5).abs() < 4.0 * 0.095 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn oracle_shape_basics() {
        let cfg = TruncNormSimConfig::paper(1.0).noiseless();
        let o = oracle_shape(&cfg, 0.3, 5, 1).unwrap();
        for (a, b) in o.values().iter().zip(cfg.shape_quantile(0.42, 0.097).unwrap().values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let one = oracle_shape(&TruncNormSimConfig::paper(1.0), 0.3, 1, 8).unwrap();
        let mut rng = replicate_rng(8, 0);
        assert_eq!(one, TruncNormSimConfig::paper(1.0).draw_shape(0.3, &mut rng).unwrap());
        assert_abs_diff_eq!(oracle_tau(&cfg, 0.25), 1.05, epsilon = 1e-15);
    }

    #[test]
    fn oracle_error_scales_with_reps() {
        let cfg = TruncNormSimConfig::paper(1.0);
        let spread = |reps: usize| {
            let vals: Vec<f64> = (0..50u64)
                .map(|meta| oracle_shape(&cfg, 0.5, reps, 1000 + meta).unwrap().eval(0.5))
                .collect();
            let m = vals.iter().sum::<f64>() / 50.0;
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 49.0).sqrt()
        };
        let ratio = spread(200) / spread(100);
        assert!((0.6..=0.85).contains(&ratio), "{ratio}");
    }

    #[test]
    fn global_oracle_point_mass() {
        let cfg = LqdSimConfig::point_mass(2.0, |s| 1.5 * s, 1.0);
        let g = oracle_shape_global(&cfg, 0.9, 200, 3).unwrap();
        let truth = lqd_inverse(&cfg.lqd_curve(0.0, &[]), cfg.window).unwrap();
        assert!(g.monotone);
        for (a, b) in g.values.iter().zip(truth.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let single = oracle_shape_global(&cfg, 0.9, 1, 3);
        assert!(single.is_err());
    }

    #[test]
    fn global_oracle_matches_direct_weighting() {
        let cfg = TruncNormSimConfig::paper(1.0);
        let reps = 300;
        let draws = GlobalOracleDraws::new(&cfg, reps, 5).unwrap();
        let at = 0.8;
        let pairs: Vec<(f64, QuantileCurve)> = (0..reps)
            .map(|k| {
                let mut rng = replicate_rng(5, k as u64);
                let x = (k as f64 + rng.random::<f64>()) / reps as f64;
                (x, cfg.draw_shape(x, &mut rng).unwrap())
            })
            .collect();
        let n = reps as f64;
        let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let var = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / n;
        let (mut avg, mut weighted) = (vec![0.0; cfg.latent_nu], vec![0.0; cfg.latent_nu]);
        for (x, q) in &pairs {
            let s = 1.0 + (x - mean) * (at - mean) / var;
            for ((a, w), v) in avg.iter_mut().zip(weighted.iter_mut()).zip(q.values()) {
                *a += v / n;
                *w += s * v / n;
            }
        }
        for (a, b) in draws.at(mean).values.iter().zip(&avg) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in draws.at(at).values.iter().zip(&weighted) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
