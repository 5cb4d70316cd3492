//! Time discretization of `[0, 1]`, trapezoid quadrature and linear interpolation.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Tolerance used when validating that quadrature weights sum to one.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Strictly increasing sample times `0 = t_1 < ... < t_T = 1` with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Arc<[f64]>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid from explicit sample times.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::arg("a time grid needs at least two points"));
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return Err(Error::arg("a time grid must start at 0 and end at 1"));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::arg("time grid contains non-finite values"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("time grid must be strictly increasing"));
        }
        let last = points.len() - 1;
        let weights: Vec<f64> = (0..points.len())
            .map(|k| {
                let left = if k == 0 { 0.0 } else { points[k] - points[k - 1] };
                let right = if k == last { 0.0 } else { points[k + 1] - points[k] };
                0.5 * (left + right)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        debug_assert!((total - 1.0).abs() < WEIGHT_SUM_TOL);
        Ok(Self {
            points: points.into(),
            weights,
        })
    }

    /// `count` equally spaced points on `[0, 1]`.
    pub fn uniform(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::arg("a time grid needs at least two points"));
        }
        let step = (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|k| k as f64 / step).collect();
        points[count - 1] = 1.0;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Shared handle on the sample times, used as knots by piecewise-linear phases.
    pub fn shared_points(&self) -> Arc<[f64]> {
        Arc::clone(&self.points)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Segment lookup shared with piecewise-linear phase functions.
pub(crate) fn segment_index(knots: &[f64], t: f64) -> usize {
    let upper = knots.partition_point(|&k| k <= t);
    upper.saturating_sub(1).min(knots.len() - 2)
}

/// Values of a function sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.points().iter().map(|&t| f(t)).collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.values.len() != grid.len() {
            return Err(Error::dim(format!(
                "function has {} samples but the grid has {} points",
                self.values.len(),
                grid.len()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for FunctionSample {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Trapezoid approximation of `∫ f g dt`.
pub fn inner_product(f: &FunctionSample, g: &FunctionSample, grid: &TimeGrid) -> Result<f64> {
    f.check_grid(grid)?;
    g.check_grid(grid)?;
    Ok(weighted_dot(&f.values, &g.values, grid.weights()))
}

pub(crate) fn weighted_dot(f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    f.iter().zip(g).zip(w).map(|((a, b), w)| a * b * w).sum()
}

/// Discretized L² norm.
pub fn l2_norm(f: &FunctionSample, grid: &TimeGrid) -> Result<f64> {
    Ok(inner_product(f, f, grid)?.max(0.0).sqrt())
}

/// Piecewise-linear interpolation of `f` at `t ∈ [0, 1]`.
pub fn interp_linear(f: &FunctionSample, grid: &TimeGrid, t: f64) -> Result<f64> {
    f.check_grid(grid)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    Ok(interp_unchecked(grid.points(), &f.values, t))
}

/// Interpolation without validation; `t` must lie in `[knots[0], knots[last]]`.
pub(crate) fn interp_unchecked(knots: &[f64], values: &[f64], t: f64) -> f64 {
    let k = segment_index(knots, t);
    let (t0, t1) = (knots[k], knots[k + 1]);
    let w = (t - t0) / (t1 - t0);
    values[k] + w * (values[k + 1] - values[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.9]).is_err());
        let g = TimeGrid::new(vec![0.0, 0.1, 0.7, 1.0]).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_examples() {
        let g = TimeGrid::uniform(1001).unwrap();
        let one = FunctionSample::from_fn(&g, |_| 1.0);
        assert!((inner_product(&one, &one, &g).unwrap() - 1.0).abs() < 1e-14);
        let t = FunctionSample::from_fn(&g, |t| t);
        assert!((inner_product(&t, &one, &g).unwrap() - 0.5).abs() < 1e-6);
        let s = FunctionSample::from_fn(&g, |t| (2.0 * PI * t).sin());
        let c = FunctionSample::from_fn(&g, |t| (2.0 * PI * t).cos());
        assert!(inner_product(&s, &c, &g).unwrap().abs() < 1e-6);

        let coarse = TimeGrid::uniform(11).unwrap();
        assert!(matches!(
            inner_product(&one, &FunctionSample::zeros(11), &coarse),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn norm_examples() {
        let g = TimeGrid::uniform(1001).unwrap();
        let one = FunctionSample::from_fn(&g, |_| 1.0);
        assert!((l2_norm(&one, &g).unwrap() - 1.0).abs() < 1e-14);
        let h = FunctionSample::from_fn(&g, |t| 2f64.sqrt() * (2.0 * PI * t).sin());
        assert!((l2_norm(&h, &g).unwrap() - 1.0).abs() < 1e-5);
        assert_eq!(l2_norm(&FunctionSample::zeros(1001), &g).unwrap(), 0.0);
    }

    #[test]
    fn interpolation_examples() {
        let g = TimeGrid::uniform(3).unwrap();
        let sq = FunctionSample::from_fn(&g, |t| t * t);
        assert_eq!(interp_linear(&sq, &g, 0.25).unwrap(), 0.125);
        for (k, &t) in g.points().iter().enumerate() {
            assert_eq!(interp_linear(&sq, &g, t).unwrap(), sq.values[k]);
        }
        let fine = TimeGrid::uniform(17).unwrap();
        let lin = FunctionSample::from_fn(&fine, |t| 3.0 * t - 1.0);
        for t in [0.013, 0.5, 0.77, 0.999] {
            assert!((interp_linear(&lin, &fine, t).unwrap() - (3.0 * t - 1.0)).abs() < 1e-14);
        }
        assert!(matches!(interp_linear(&sq, &g, 1.5), Err(Error::Domain(_))));
        assert!(matches!(interp_linear(&sq, &g, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn trapezoid_error_is_second_order() {
        let errs: Vec<f64> = [11, 101, 1001]
            .iter()
            .map(|&n| {
                let g = TimeGrid::uniform(n).unwrap();
                let f = FunctionSample::from_fn(&g, |t| t * t);
                let one = FunctionSample::from_fn(&g, |_| 1.0);
                (inner_product(&f, &one, &g).unwrap() - 1.0 / 3.0).abs()
            })
            .collect();
        // T grows 10x, so the error should shrink about 100x.
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 80.0 && ratio < 125.0, "ratio {ratio}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inner_product_symmetric_bilinear(
                f in prop::collection::vec(-10.0f64..10.0, 21),
                g in prop::collection::vec(-10.0f64..10.0, 21),
                h in prop::collection::vec(-10.0f64..10.0, 21),
                s in -3.0f64..3.0,
            ) {
                let grid = TimeGrid::uniform(21).unwrap();
                let (f, g, h) = (FunctionSample::new(f), FunctionSample::new(g), FunctionSample::new(h));
                let fg = inner_product(&f, &g, &grid).unwrap();
                prop_assert!((fg - inner_product(&g, &f, &grid).unwrap()).abs() < 1e-12);
                let combo = FunctionSample::new(
                    f.values.iter().zip(&h.values).map(|(a, b)| s * a + b).collect(),
                );
                let lhs = inner_product(&combo, &g, &grid).unwrap();
                let rhs = s * fg + inner_product(&h, &g, &grid).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            }

            #[test]
            fn norm_zero_only_for_zero(f in prop::collection::vec(-1.0f64..1.0, 11)) {
                let grid = TimeGrid::uniform(11).unwrap();
                let n = l2_norm(&FunctionSample::new(f.clone()), &grid).unwrap();
                prop_assert!(n >= 0.0);
                prop_assert_eq!(n == 0.0, f.iter().all(|v| *v == 0.0));
            }
        }
    }
}
