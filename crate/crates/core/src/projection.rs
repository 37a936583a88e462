//! Projection of a grid vector onto discretized quantile functions.
//!
//! Given `w ∈ ℝ^ν` on the grid `r_j = j/(ν+1)`, finds
//!
//! ```text
//! argmin ‖q − w‖²  s.t.  M·Δr <= q_{j+1} − q_j <= L·Δr,   j = 0..=ν,
//! ```
//!
//! with the pins `q_0 = 0` and `q_{ν+1} = T`. Every constraint bounds one
//! increment of the chain, so a working set of active constraints splits the
//! chain into rigid blocks. A free block's position is the mean of its
//! offset-corrected targets, a block touching a pin is fixed, and the
//! multipliers follow from a cumulative sum of the gradient along each block.
//! The solver is a primal active-set method over that block structure: each
//! iteration costs `O(ν)` and the method terminates at the exact minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{grid_point, QuantileCurve, TimeWindow};

/// Slope bounds `M < L` on admissible quantile curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileConstraints {
    lower_slope: f64,
    upper_slope: f64,
    window: TimeWindow,
    nu: usize,
}

/// Default lower slope bound `M`.
pub const DEFAULT_LOWER_SLOPE: f64 = 1e-10;
/// Default upper slope bound `L`.
pub const DEFAULT_UPPER_SLOPE: f64 = 1e10;

/// Feasibility tolerance for the final solution.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Iteration cap for the active-set loop.
pub const MAX_ITERATIONS: usize = 100_000;

impl QuantileConstraints {
    /// The increments over `ν + 1` cells must sum to `T`, so the set is
    /// nonempty exactly when `M <= T <= L`.
    pub fn new(lower_slope: f64, upper_slope: f64, window: TimeWindow, nu: usize) -> Result<Self> {
        if nu == 0 {
            return Err(Error::invalid("quantile grid size must be >= 1"));
        }
        if !(lower_slope > 0.0 && lower_slope < upper_slope && upper_slope.is_finite()) {
            return Err(Error::InfeasibleConstraints(format!(
                "need 0 < M < L < inf, got M = {lower_slope}, L = {upper_slope}"
            )));
        }
        let t = window.length();
        if lower_slope > t || upper_slope < t {
            return Err(Error::InfeasibleConstraints(format!(
                "need M <= T <= L, got M = {lower_slope}, T = {t}, L = {upper_slope}"
            )));
        }
        Ok(QuantileConstraints { lower_slope, upper_slope, window, nu })
    }

    /// `M = 1e-10`, `L = 1e10`.
    pub fn loose(window: TimeWindow, nu: usize) -> Result<Self> {
        Self::new(DEFAULT_LOWER_SLOPE, DEFAULT_UPPER_SLOPE, window, nu)
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn lower_slope(&self) -> f64 {
        self.lower_slope
    }

    pub fn upper_slope(&self) -> f64 {
        self.upper_slope
    }

    pub fn spacing(&self) -> f64 {
        grid_point(1, self.nu)
    }

    /// Bounds `(M·Δr, L·Δr)` on every increment.
    pub fn increment_bounds(&self) -> (f64, f64) {
        let dr = self.spacing();
        (self.lower_slope * dr, self.upper_slope * dr)
    }

    /// Largest violation of any increment bound by `q`.
    pub fn max_violation(&self, q: &[f64]) -> f64 {
        let (lo, hi) = self.increment_bounds();
        let t = self.window.length();
        let knot = |j: usize| if j == 0 { 0.0 } else if j > q.len() { t } else { q[j - 1] };
        (0..=q.len())
            .map(|j| {
                let d = knot(j + 1) - knot(j);
                (lo - d).max(d - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Solution of [`project_quantile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Euclidean projection of `w` onto the constraint set of `c`.
pub fn project_quantile(w: &[f64], c: &QuantileConstraints) -> Result<Projection> {
    let nu = c.nu();
    if w.len() != nu {
        return Err(Error::invalid(format!("target has length {}, constraints expect {nu}", w.len())));
    }
    if let Some(j) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("target value {j} is not finite")));
    }
    let t = c.window().length();
    let (lo, hi) = c.increment_bounds();

    // A single feasible point when M = T or L = T.
    let uniform: Vec<f64> = (1..=nu).map(|j| t * grid_point(j, nu)).collect();
    if c.lower_slope() == t || c.upper_slope() == t {
        return Ok(Projection { values: uniform, iterations: 0, max_violation: 0.0 });
    }

    let scale = w.iter().fold(t, |m, v| m.max(v.abs()));
    let step_tol = 1e-14 * scale;
    let mult_tol = 1e-12 * scale;

    let mut q = uniform;
    let mut status = vec![Bound::Free; nu + 1];
    let mut eqp = vec![0.0; nu];
    let mut mu = vec![0.0; nu + 1];

    for iteration in 1..=MAX_ITERATIONS {
        solve_blocks(w, &status, lo, hi, t, &mut eqp);

        let mut step_norm: f64 = 0.0;
        for (a, b) in eqp.iter().zip(&q) {
            step_norm = step_norm.max((a - b).abs());
        }

        if step_norm <= step_tol {
            q.copy_from_slice(&eqp);
            multipliers(&q, w, &status, &mut mu);
            // most negative multiplier among active constraints
            let mut worst: Option<(usize, f64)> = None;
            for (j, s) in status.iter().enumerate() {
                let lambda = match s {
                    Bound::Free => continue,
                    Bound::Lower => mu[j],
                    Bound::Upper => -mu[j],
                };
                if lambda < -mult_tol && worst.is_none_or(|(_, l)| lambda < l) {
                    worst = Some((j, lambda));
                }
            }
            match worst {
                Some((j, _)) => status[j] = Bound::Free,
                None => {
                    let max_violation = c.max_violation(&q);
                    if max_violation > FEASIBILITY_TOL * t.max(1.0) {
                        return Err(Error::SolverNonConvergence { iterations: iteration, max_violation });
                    }
                    return Ok(Projection { values: q, iterations: iteration, max_violation });
                }
            }
            continue;
        }

        // Ratio test along p = eqp − q over the free increments.
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Bound)> = None;
        let knot = |v: &[f64], j: usize| if j == 0 { 0.0 } else if j > nu { t } else { v[j - 1] };
        let pin = |v: &[f64], j: usize| if j == 0 || j > nu { 0.0 } else { v[j - 1] };
        let p: Vec<f64> = eqp.iter().zip(&q).map(|(a, b)| a - b).collect();
        for (j, s) in status.iter().enumerate() {
            if *s != Bound::Free {
                continue;
            }
            let d = knot(&q, j + 1) - knot(&q, j);
            let dp = pin(&p, j + 1) - pin(&p, j);
            if dp < 0.0 {
                let ratio = ((lo - d) / dp).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some((j, Bound::Lower));
                }
            } else if dp > 0.0 {
                let ratio = ((hi - d) / dp).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some((j, Bound::Upper));
                }
            }
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += alpha * pi;
        }
        if let Some((j, s)) = blocking {
            status[j] = s;
        }
    }
    Err(Error::SolverNonConvergence {
        iterations: MAX_ITERATIONS,
        max_violation: c.max_violation(&q),
    })
}

/// Minimizer of `‖q − w‖²` with the active increments held at their bounds.
fn solve_blocks(w: &[f64], status: &[Bound], lo: f64, hi: f64, t: f64, out: &mut [f64]) {
    let nu = w.len();
    // positions 0..=nu+1; constraint j links positions j and j+1
    let mut start = 0;
    while start <= nu + 1 {
        let mut end = start;
        while end <= nu && status[end] != Bound::Free {
            end += 1;
        }
        // block covers positions start..=end, offsets taken from `start`
        let step = |k: usize| if status[k] == Bound::Lower { lo } else { hi };
        let base = if start == 0 {
            0.0
        } else if end == nu + 1 {
            t - (start..end).map(step).sum::<f64>()
        } else {
            let mut acc = 0.0;
            let mut off = 0.0;
            for k in start..=end {
                if k > start {
                    off += step(k - 1);
                }
                acc += w[k - 1] - off;
            }
            acc / (end - start + 1) as f64
        };
        let mut off = 0.0;
        for k in start..=end {
            if k > start {
                off += step(k - 1);
            }
            if (1..=nu).contains(&k) {
                out[k - 1] = base + off;
            }
        }
        start = end + 1;
    }
}

/// Signed multipliers `μ_j` on the increment constraints from the stationarity
/// condition `q_k − w_k = μ_{k−1} − μ_k`.
fn multipliers(q: &[f64], w: &[f64], status: &[Bound], mu: &mut [f64]) {
    let nu = q.len();
    let g = |k: usize| q[k - 1] - w[k - 1];
    mu.iter_mut().for_each(|m| *m = 0.0);
    let mut j = 0;
    while j <= nu {
        if status[j] == Bound::Free {
            j += 1;
            continue;
        }
        let first = j;
        while j <= nu && status[j] != Bound::Free {
            j += 1;
        }
        let last = j - 1;
        if first > 0 {
            // free constraint on the left: sweep right
            let mut m = 0.0;
            for (k, mk) in mu.iter_mut().enumerate().take(last + 1).skip(first) {
                m -= g(k);
                *mk = m;
            }
        } else {
            // pinned at 0; the constraint after `last` is free
            let mut m = 0.0;
            for k in (first + 1..=last + 1).rev() {
                m += g(k);
                mu[k - 1] = m;
            }
        }
    }
}

/// Linear interpolant through `(0,0), (r_j, q_j), (1,T)` of a feasible solution.
pub fn interpolate_solution(q: &[f64], c: &QuantileConstraints) -> Result<QuantileCurve> {
    if q.len() != c.nu() {
        return Err(Error::invalid(format!("solution has length {}, constraints expect {}", q.len(), c.nu())));
    }
    let t = c.window().length();
    let violation = c.max_violation(q);
    if violation > FEASIBILITY_TOL * t.max(1.0) {
        return Err(Error::InfeasibleConstraints(format!(
            "solution violates increment bounds by {violation:e}"
        )));
    }
    QuantileCurve::new(q.to_vec(), c.window())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit() -> TimeWindow {
        TimeWindow::new(1.0).unwrap()
    }

    // Stack-based pool-adjacent-violators.
    fn pava(y: &[f64]) -> Vec<f64> {
        let mut blocks: Vec<(f64, usize)> = Vec::new();
        for &v in y {
            blocks.push((v, 1));
            while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
                let (b, nb) = blocks.pop().unwrap();
                let (a, na) = blocks.pop().unwrap();
                blocks.push(((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb));
            }
        }
        blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
    }

    #[test]
    fn constraint_feasibility() {
        assert!(QuantileConstraints::new(0.5, 2.0, unit(), 3).is_ok());
        assert!(QuantileConstraints::new(1.5, 2.0, unit(), 3).is_err());
        assert!(QuantileConstraints::new(0.1, 0.5, unit(), 3).is_err());
        assert!(QuantileConstraints::new(0.0, 2.0, unit(), 3).is_err());
        assert!(QuantileConstraints::new(0.5, 0.4, unit(), 3).is_err());
        assert!(QuantileConstraints::new(0.5, 2.0, unit(), 0).is_err());
    }

    #[test]
    fn feasible_point_is_fixed() {
        let c = QuantileConstraints::loose(unit(), 9).unwrap();
        let w: Vec<f64> = (1..=9).map(|j| j as f64 / 10.0).collect();
        let p = project_quantile(&w, &c).unwrap();
        for (a, b) in p.values.iter().zip(&w) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_point_violator_pools() {
        let c = QuantileConstraints::loose(unit(), 2).unwrap();
        let p = project_quantile(&[0.6, 0.4], &c).unwrap();
        let dr = 1.0 / 3.0;
        assert_abs_diff_eq!(p.values[0], 0.5 - 0.5e-10 * dr, epsilon = 1e-15);
        assert_abs_diff_eq!(p.values[1], 0.5 + 0.5e-10 * dr, epsilon = 1e-15);
    }

    #[test]
    fn negative_target_hits_lower_pin() {
        let c = QuantileConstraints::loose(unit(), 2).unwrap();
        let p = project_quantile(&[-0.2, 0.5], &c).unwrap();
        assert_abs_diff_eq!(p.values[0], 1e-10 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.values[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tight_band_forces_uniform() {
        let c = QuantileConstraints::new(1.0, 3.0, unit(), 4).unwrap();
        let p = project_quantile(&[0.9, 0.1, 0.3, 0.2], &c).unwrap();
        for (j, v) in p.values.iter().enumerate() {
            assert_abs_diff_eq!(*v, (j + 1) as f64 / 5.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn upper_slope_binds() {
        // steep jump in the middle capped at L·Δr = 0.25
        let c = QuantileConstraints::new(0.1, 1.25, unit(), 4).unwrap();
        let p = project_quantile(&[0.1, 0.1, 0.9, 0.9], &c).unwrap();
        assert!(p.max_violation <= 1e-12);
        let d = p.values[2] - p.values[1];
        assert_abs_diff_eq!(d, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn wrong_length_and_nonfinite() {
        let c = QuantileConstraints::loose(unit(), 3).unwrap();
        assert!(project_quantile(&[0.1, 0.2], &c).is_err());
        assert!(project_quantile(&[0.1, f64::NAN, 0.3], &c).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let c = QuantileConstraints::loose(unit(), 1).unwrap();
        let q = interpolate_solution(&[0.3], &c).unwrap();
        assert_abs_diff_eq!(q.eval(0.25), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(q.eval(0.75), 0.3 + 1.4 * 0.25, epsilon = 1e-15);
        assert_eq!(q.eval(0.0), 0.0);
        assert_eq!(q.eval(1.0), 1.0);

        let c = QuantileConstraints::loose(TimeWindow::new(2.0).unwrap(), 3).unwrap();
        let q = interpolate_solution(&[0.5, 1.0, 1.5], &c).unwrap();
        for t in [0.1, 0.33, 0.8] {
            assert_abs_diff_eq!(q.eval(t), 2.0 * t, epsilon = 1e-14);
        }
        assert!(interpolate_solution(&[0.6, 0.4, 1.5], &c).is_err());
    }

    // Smooth target converges as the grid is refined.
    #[test]
    fn riemann_refinement() {
        let target = |t: f64| (t * t + 0.2 * (6.0 * t).sin()).clamp(-0.1, 1.1);
        let solve = |nu: usize| {
            let c = QuantileConstraints::loose(unit(), nu).unwrap();
            let w: Vec<f64> = (1..=nu).map(|j| target(grid_point(j, nu))).collect();
            interpolate_solution(&project_quantile(&w, &c).unwrap().values, &c).unwrap()
        };
        let ladder = [25, 50, 100, 200];
        let diffs: Vec<f64> = ladder
            .iter()
            .map(|&nu| crate::space::wasserstein_distance(&solve(nu), &solve(2 * nu)).unwrap())
            .collect();
        assert!(diffs.windows(2).all(|d| d[1] < d[0]), "{diffs:?}");
    }

    proptest! {
        #[test]
        fn matches_pava_when_loose(w in prop::collection::vec(0.001f64..0.999, 1..80)) {
            let c = QuantileConstraints::loose(unit(), w.len()).unwrap();
            let p = project_quantile(&w, &c).unwrap();
            for (a, b) in p.values.iter().zip(pava(&w)) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn idempotent_and_nonexpansive(w1 in prop::collection::vec(-0.5f64..1.5, 12),
                                       w2 in prop::collection::vec(-0.5f64..1.5, 12),
                                       m in 0.05f64..0.9, l in 1.1f64..4.0) {
            let c = QuantileConstraints::new(m, l, unit(), 12).unwrap();
            let p1 = project_quantile(&w1, &c).unwrap().values;
            let p2 = project_quantile(&w2, &c).unwrap().values;
            let again = project_quantile(&p1, &c).unwrap().values;
            for (a, b) in p1.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d(&p1, &p2) <= d(&w1, &w2) + 1e-9);
            prop_assert!(c.max_violation(&p1) <= 1e-12);
        }

        #[test]
        fn variational_inequality(w in prop::collection::vec(-0.5f64..1.5, 8),
                                  mix in prop::collection::vec(0.0f64..1.0, 8)) {
            // any feasible q: <w − q*, q − q*> <= 0
            let c = QuantileConstraints::new(0.2, 3.0, unit(), 8).unwrap();
            let star = project_quantile(&w, &c).unwrap().values;
            let (lo, hi) = c.increment_bounds();
            // random feasible point: increments in [lo, hi] summing to T
            let raw: Vec<f64> = mix.iter().chain(std::iter::once(&0.5)).map(|u| lo + u * (hi - lo)).collect();
            let total: f64 = raw.iter().sum();
            let shrink = (1.0 - 9.0 * lo) / (total - 9.0 * lo);
            let mut acc = 0.0;
            let q: Vec<f64> = raw.iter().take(8).map(|d| { acc += lo + (d - lo) * shrink; acc }).collect();
            prop_assume!(c.max_violation(&q) < 1e-12);
            let ip: f64 = w.iter().zip(&star).zip(&q).map(|((wi, si), qi)| (wi - si) * (qi - si)).sum();
            prop_assert!(ip <= 1e-10, "{}", ip);
        }
    }
}
