//! Empirical quantile curves from observed arrival times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{QuantileCurve, TimeWindow};

/// One observed replicate of the point process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProcessSample {
    covariate: Vec<f64>,
    arrivals: Vec<f64>,
    window: TimeWindow,
}

impl PointProcessSample {
    pub fn new(covariate: Vec<f64>, arrivals: Vec<f64>, window: TimeWindow) -> Result<Self> {
        if covariate.is_empty() {
            return Err(Error::invalid("covariate vector must have dimension >= 1"));
        }
        if let Some(j) = covariate.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("covariate component {j} is not finite")));
        }
        let t = window.length();
        if let Some(index) = arrivals.iter().position(|&z| !(0.0..=t).contains(&z)) {
            return Err(Error::ArrivalOutOfWindow { index, value: arrivals[index], window: t });
        }
        Ok(PointProcessSample { covariate, arrivals, window })
    }

    pub fn covariate(&self) -> &[f64] {
        &self.covariate
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrivals
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    /// `N(T)`, the number of arrivals.
    pub fn count(&self) -> usize {
        self.arrivals.len()
    }
}

/// Empirical quantile `inf{z : F̂(z) >= r_j}` of the arrivals on the interior
/// grid of size `nu`, or the uniform quantile on `[0, T]` when there are no
/// arrivals. Values are clamped into `[T·1e-12, T − T·1e-12]`.
pub fn empirical_quantile(sample: &PointProcessSample, nu: usize) -> Result<QuantileCurve> {
    if nu == 0 {
        return Err(Error::invalid("quantile grid size must be >= 1"));
    }
    let window = sample.window();
    let n = sample.count();
    if n == 0 {
        return Ok(QuantileCurve::uniform(nu, window));
    }
    let mut sorted = sample.arrivals.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(quantile_of_sorted(&sorted, nu, window))
}

/// Same as [`empirical_quantile`] for arrivals that are already sorted.
pub(crate) fn quantile_of_sorted(sorted: &[f64], nu: usize, window: TimeWindow) -> QuantileCurve {
    let t = window.length();
    let eps = t * 1e-12;
    let n = sorted.len();
    let values = (1..=nu)
        .map(|j| {
            // ceil(j·n/(ν+1)), the 1-based order statistic
            let k = (j * n).div_ceil(nu + 1);
            sorted[k.max(1) - 1].clamp(eps, t - eps)
        })
        .collect();
    QuantileCurve::new(values, window).expect("clamped order statistics form a valid quantile curve")
}

/// `N_i(T)` for a sample.
pub fn count(sample: &PointProcessSample) -> usize {
    sample.count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::wasserstein_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn unit() -> TimeWindow {
        TimeWindow::new(1.0).unwrap()
    }

    fn sample(arrivals: Vec<f64>) -> PointProcessSample {
        PointProcessSample::new(vec![0.0], arrivals, unit()).unwrap()
    }

    #[test]
    fn empty_is_uniform() {
        let q = empirical_quantile(&sample(vec![]), 3).unwrap();
        assert_eq!(q.values(), &[0.25, 0.5, 0.75]);
    }

    #[test]
    fn single_atom() {
        let q = empirical_quantile(&sample(vec![0.5]), 3).unwrap();
        assert_eq!(q.values(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn two_atoms() {
        let q = empirical_quantile(&sample(vec![0.8, 0.2]), 3).unwrap();
        assert_eq!(q.values(), &[0.2, 0.2, 0.8]);
    }

    #[test]
    fn boundary_arrivals_are_clamped() {
        let q = empirical_quantile(&sample(vec![0.0, 1.0, 1.0]), 5).unwrap();
        assert!(q.values()[0] > 0.0 && q.values()[4] < 1.0);
        assert!(q.values()[0] < 1e-11);
    }

    #[test]
    fn counts() {
        assert_eq!(count(&sample(vec![])), 0);
        assert_eq!(count(&sample(vec![0.2, 0.8])), 2);
        assert_eq!(count(&sample(vec![0.5; 57])), 57);
    }

    #[test]
    fn out_of_window_reports_index() {
        let err = PointProcessSample::new(vec![1.0], vec![0.1, 1.5], unit()).unwrap_err();
        assert_eq!(err, Error::ArrivalOutOfWindow { index: 1, value: 1.5, window: 1.0 });
        assert!(PointProcessSample::new(vec![], vec![0.1], unit()).is_err());
        assert!(empirical_quantile(&sample(vec![0.3]), 0).is_err());
    }

    #[test]
    fn distance_to_truth_shrinks_with_count() {
        // Q(t) = t², sampled by inversion
        let truth = QuantileCurve::from_fn(1000, unit(), |t| t * t).unwrap();
        let mut medians = Vec::new();
        for &na in &[10usize, 100, 10_000] {
            let mut ds: Vec<f64> = (0..50)
                .map(|seed| {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let arr = (0..na).map(|_| rng.random::<f64>().powi(2)).collect();
                    wasserstein_distance(&empirical_quantile(&sample(arr), 200).unwrap(), &truth).unwrap()
                })
                .collect();
            ds.sort_by(f64::total_cmp);
            medians.push(0.5 * (ds[24] + ds[25]));
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    proptest! {
        #[test]
        fn always_valid(arr in prop::collection::vec(prop_oneof![0.0f64..=1.0, Just(0.0), Just(1.0), Just(0.5)], 0..40),
                        nu in 1usize..60) {
            let q = empirical_quantile(&sample(arr), nu).unwrap();
            prop_assert_eq!(q.nu(), nu);
        }
    }
}
