//! The intensity space: intensity factors paired with shape densities, the
//! product metric on it, and conversions between quantile, CDF and density
//! representations of a shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoothing::Kernel;

/// Length `T` of the observation window `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TimeWindow(f64);

impl TimeWindow {
    pub fn new(length: f64) -> Result<Self> {
        if length.is_finite() && length > 0.0 {
            Ok(TimeWindow(length))
        } else {
            Err(Error::invalid(format!("time window must be positive and finite, got {length}")))
        }
    }

    #[inline]
    pub fn length(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TimeWindow {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        TimeWindow::new(v)
    }
}

impl From<TimeWindow> for f64 {
    fn from(w: TimeWindow) -> f64 {
        w.0
    }
}

/// Interior grid point `r_j = j / (ν + 1)`, `j = 0..=ν+1`.
#[inline]
pub fn grid_point(j: usize, nu: usize) -> f64 {
    j as f64 / (nu + 1) as f64
}

/// Trapezoid rule for samples `ys` at abscissae `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// A quantile function on `[0, 1]` stored at the interior grid
/// `r_j = j/(ν+1)`, pinned to `Q(0) = 0` and `Q(1) = T`, and evaluated by
/// linear interpolation between those knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurve {
    values: Vec<f64>,
    window: TimeWindow,
}

impl QuantileCurve {
    /// Values must satisfy `0 < q_1 <= ... <= q_ν < T`.
    pub fn new(values: Vec<f64>, window: TimeWindow) -> Result<Self> {
        let t = window.length();
        if values.is_empty() {
            return Err(Error::invalid("quantile curve needs at least one grid value"));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("quantile value {j} is not finite")));
        }
        if values[0] <= 0.0 || values[values.len() - 1] >= t {
            return Err(Error::invalid(format!(
                "quantile values must lie strictly inside (0, {t}); got first {} last {}",
                values[0],
                values[values.len() - 1]
            )));
        }
        if let Some(j) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "quantile values decrease between grid points {} and {}",
                j + 1,
                j + 2
            )));
        }
        Ok(QuantileCurve { values, window })
    }

    /// Samples `f` at the interior grid of size `nu`.
    pub fn from_fn(nu: usize, window: TimeWindow, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((1..=nu).map(|j| f(grid_point(j, nu))).collect(), window)
    }

    /// Quantile function of the uniform distribution on `[0, T]`.
    pub fn uniform(nu: usize, window: TimeWindow) -> Self {
        let t = window.length();
        QuantileCurve {
            values: (1..=nu.max(1)).map(|j| t * grid_point(j, nu.max(1))).collect(),
            window,
        }
    }

    pub fn nu(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    /// Grid points `r_1..r_ν`.
    pub fn grid(&self) -> Vec<f64> {
        let nu = self.nu();
        (1..=nu).map(|j| grid_point(j, nu)).collect()
    }

    /// Knot `j` of the interpolant, `j = 0..=ν+1`.
    #[inline]
    pub fn knot(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else if j > self.values.len() {
            self.window.length()
        } else {
            self.values[j - 1]
        }
    }

    /// Linear interpolation through `(0,0), (r_j, q_j), (1,T)`.
    pub fn eval(&self, t: f64) -> f64 {
        let nu = self.nu();
        let u = t.clamp(0.0, 1.0) * (nu + 1) as f64;
        let j = (u.floor() as usize).min(nu + 1);
        if j == nu + 1 {
            return self.window.length();
        }
        let lo = self.knot(j);
        lo + (u - j as f64) * (self.knot(j + 1) - lo)
    }
}

/// A probability density on `[0, T]` tabulated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
    window: TimeWindow,
}

impl DensityCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, window: TimeWindow) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::invalid("density grid and values must match and have length >= 2"));
        }
        let t = window.length();
        if grid.iter().any(|&s| !(0.0..=t).contains(&s)) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("density grid must be increasing inside [0, T]"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("density values must be finite and nonnegative"));
        }
        let mass = trapezoid(&grid, &values);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("density integrates to {mass}, not 1")));
        }
        Ok(DensityCurve { grid, values, window })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }
}

/// A cumulative distribution function on an equispaced grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    values: Vec<f64>,
    window: TimeWindow,
}

impl CdfCurve {
    /// `values[k]` is `F(k·T/(m−1))`; must be nondecreasing from 0 to 1.
    pub fn new(values: Vec<f64>, window: TimeWindow) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("cdf needs at least 2 grid points"));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("cdf values must be finite and nondecreasing"));
        }
        if values[0].abs() > 1e-12 || (values[values.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("cdf must run from F(0) = 0 to F(T) = 1"));
        }
        Ok(CdfCurve { values, window })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn spacing(&self) -> f64 {
        self.window.length() / (self.values.len() - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.values.len()).map(|k| k as f64 * h).collect()
    }

    /// Generalized inverse `inf{s : F(s) >= r}` at the interior grid of size `nu`.
    pub fn to_quantile(&self, nu: usize) -> Result<QuantileCurve> {
        let t = self.window.length();
        let h = self.spacing();
        let eps = t * 1e-12;
        let f = &self.values;
        let values = (1..=nu)
            .map(|j| {
                let r = grid_point(j, nu);
                let k = f.partition_point(|&v| v < r);
                let s = if k == 0 {
                    0.0
                } else if k >= f.len() {
                    t
                } else {
                    let (lo, hi) = (f[k - 1], f[k]);
                    (k - 1) as f64 * h + (r - lo) / (hi - lo) * h
                };
                s.clamp(eps, t - eps)
            })
            .collect();
        QuantileCurve::new(values, self.window)
    }
}

/// A point `(τ, f)` of the intensity space, with `f` held as its quantile curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySpacePoint {
    pub tau: f64,
    pub shape: QuantileCurve,
}

impl IntensitySpacePoint {
    pub fn new(tau: f64, shape: QuantileCurve) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::invalid(format!("intensity factor must be >= 0, got {tau}")));
        }
        Ok(IntensitySpacePoint { tau, shape })
    }
}

fn check_same_window(a: TimeWindow, b: TimeWindow) -> Result<()> {
    if a != b {
        return Err(Error::DomainMismatch { left: a.length(), right: b.length() });
    }
    Ok(())
}

/// Value of `q` as seen by distances: linear between knots and constant
/// beyond the outermost knots.
///
/// The pins `Q(0) = 0`, `Q(1) = T` belong to the constraint set, not to the
/// shape; interpolating to them would add an `O(1/ν)` artifact to every
/// distance between curves whose support does not reach both ends of the
/// window.
fn eval_interior(q: &QuantileCurve, t: f64) -> f64 {
    let nu = q.nu();
    let v = q.values();
    if t <= grid_point(1, nu) {
        v[0]
    } else if t >= grid_point(nu, nu) {
        v[nu - 1]
    } else {
        q.eval(t)
    }
}

/// 2-Wasserstein distance between two shapes: the `L²[0,1]` distance between
/// their quantile curves, integrated by the trapezoid rule over the union of
/// both knot sets. The end cells are held flat at the outermost knots.
pub fn wasserstein_distance(a: &QuantileCurve, b: &QuantileCurve) -> Result<f64> {
    check_same_window(a.window(), b.window())?;
    let sq = if a.nu() == b.nu() {
        let nu = a.nu();
        let h = grid_point(1, nu);
        let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let mut acc = h * (d[0] * d[0] + d[nu - 1] * d[nu - 1]);
        for w in d.windows(2) {
            acc += 0.5 * h * (w[0] * w[0] + w[1] * w[1]);
        }
        acc
    } else {
        let mut ts: Vec<f64> = a.grid();
        ts.extend(b.grid());
        ts.push(0.0);
        ts.push(1.0);
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
        let d2: Vec<f64> = ts.iter().map(|&t| (eval_interior(a, t) - eval_interior(b, t)).powi(2)).collect();
        trapezoid(&ts, &d2)
    };
    Ok(sq.max(0.0).sqrt())
}

/// Product metric `sqrt(d_T² + d_F²)` on the intensity space.
pub fn intensity_distance(a: &IntensitySpacePoint, b: &IntensitySpacePoint) -> Result<f64> {
    let shape = wasserstein_distance(&a.shape, &b.shape)?;
    Ok((a.tau - b.tau).hypot(shape))
}

/// CDF of the interpolated quantile curve on an equispaced `m`-grid of `[0, T]`.
///
/// Flat runs in `Q` become jumps in `F`; the result is right-continuous.
pub fn quantile_to_cdf(q: &QuantileCurve, m: usize) -> Result<CdfCurve> {
    if m < 2 {
        return Err(Error::invalid("cdf grid needs m >= 2"));
    }
    let nu = q.nu();
    let t = q.window().length();
    let dr = grid_point(1, nu);
    let knots: Vec<f64> = (0..=nu + 1).map(|j| q.knot(j)).collect();
    let mut values = Vec::with_capacity(m);
    for k in 0..m {
        let s = t * k as f64 / (m - 1) as f64;
        // last knot with value <= s
        let j = knots.partition_point(|&v| v <= s) - 1;
        let f = if j >= nu + 1 {
            1.0
        } else {
            let (lo, hi) = (knots[j], knots[j + 1]);
            grid_point(j, nu) + (s - lo) / (hi - lo) * dr
        };
        values.push(f.clamp(0.0, 1.0));
    }
    values[0] = 0.0;
    values[m - 1] = 1.0;
    CdfCurve::new(values, q.window())
}

/// Density recovered as the clipped and renormalized local-linear derivative
/// of `F`, on the same grid as `F`, using an Epanechnikov kernel of half-width
/// `bandwidth`.
pub fn cdf_to_density(cdf: &CdfCurve, bandwidth: f64) -> Result<DensityCurve> {
    let t = cdf.window().length();
    if !(bandwidth > 0.0 && bandwidth < t / 2.0) {
        return Err(Error::invalid(format!("density bandwidth must lie in (0, T/2), got {bandwidth}")));
    }
    let f = cdf.values();
    if f.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::invalid("cdf is constant; no density to recover"));
    }
    let m = f.len();
    let h = cdf.spacing();
    let reach = (bandwidth / h).ceil() as usize;
    let kernel = Kernel::Epanechnikov;
    let mut dens = Vec::with_capacity(m);
    for k in 0..m {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in k.saturating_sub(reach)..(k + reach + 1).min(m) {
            let d = (i as f64 - k as f64) * h;
            let w = kernel.eval(d / bandwidth);
            if w > 0.0 {
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * f[i];
                t1 += w * d * f[i];
            }
        }
        let det = s0 * s2 - s1 * s1;
        if det <= 1e-14 * s0 * s2 || s0 == 0.0 {
            return Err(Error::invalid(format!(
                "density bandwidth {bandwidth} covers fewer than two grid points"
            )));
        }
        dens.push(((s0 * t1 - s1 * t0) / det).max(0.0));
    }
    let grid = cdf.grid();
    let mass = trapezoid(&grid, &dens);
    if !(mass > 0.0) {
        return Err(Error::invalid("recovered density has zero mass"));
    }
    dens.iter_mut().for_each(|v| *v /= mass);
    DensityCurve::new(grid, dens, cdf.window())
}

/// Grid size and bandwidth used to turn a fitted quantile curve into a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRecovery {
    pub points: usize,
    /// Defaults to `2·T/points` when absent.
    pub bandwidth: Option<f64>,
}

impl Default for DensityRecovery {
    fn default() -> Self {
        DensityRecovery { points: 512, bandwidth: None }
    }
}

impl DensityRecovery {
    pub fn bandwidth_for(&self, window: TimeWindow) -> f64 {
        self.bandwidth.unwrap_or(2.0 * window.length() / self.points as f64)
    }

    pub fn recover(&self, q: &QuantileCurve) -> Result<DensityCurve> {
        let cdf = quantile_to_cdf(q, self.points)?;
        cdf_to_density(&cdf, self.bandwidth_for(q.window()))
    }
}
