//! Phase functions: orientation-preserving warps of `[0, 1]`, their group
//! operations, the three actions on sampled functions and the increment
//! representation used by the Dirichlet prior.

use std::sync::Arc;

use rand::Rng;

use crate::dist::sample_dirichlet;
use crate::error::{Error, Result};
use crate::grid::{interp_unchecked, segment_index, FunctionSample, TimeGrid};

/// Smallest admissible increment `γ(t_{k+1}) − γ(t_k)` of a piecewise-linear phase.
pub const MIN_INCREMENT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// `γ(t) = t + α t (t − 1)`, `|α| < 1`.
    Parametric { alpha: f64 },
    PiecewiseLinear { knots: Arc<[f64]>, values: Vec<f64> },
}

/// An element of the warping group, either one-parameter or piecewise linear.
///
/// Constructors validate `γ(0) = 0`, `γ(1) = 1` and strict monotonicity, so every
/// value of this type is a valid phase function.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFunction {
    repr: Repr,
}

fn check_domain(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(t))
    }
}

/// Validates a knot vector: strictly increasing from exactly 0 to exactly 1.
pub fn validate_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
        return Err(Error::arg("phase knots must run from 0 to 1"));
    }
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("phase knots must be strictly increasing"));
    }
    Ok(())
}

/// `count` equally spaced knots on `[0, 1]`.
pub fn uniform_knots(count: usize) -> Result<Arc<[f64]>> {
    if count < 2 {
        return Err(Error::arg("a phase needs at least two knots"));
    }
    let step = (count - 1) as f64;
    let mut k: Vec<f64> = (0..count).map(|i| i as f64 / step).collect();
    k[count - 1] = 1.0;
    Ok(k.into())
}

impl PhaseFunction {
    /// `γ_id(t) = t`.
    pub fn identity() -> Self {
        Self {
            repr: Repr::Parametric { alpha: 0.0 },
        }
    }

    /// One-parameter warp `t + α t (t − 1)`.
    pub fn parametric(alpha: f64) -> Result<Self> {
        if !(alpha.abs() < 1.0) {
            return Err(Error::DegeneratePhase(format!(
                "parametric warp needs |alpha| < 1, got {alpha}"
            )));
        }
        Ok(Self {
            repr: Repr::Parametric { alpha },
        })
    }

    /// Piecewise-linear warp through `(knots[k], values[k])`.
    pub fn piecewise_linear(knots: Arc<[f64]>, values: Vec<f64>) -> Result<Self> {
        validate_knots(&knots)?;
        if values.len() != knots.len() {
            return Err(Error::dim(format!(
                "{} phase values for {} knots",
                values.len(),
                knots.len()
            )));
        }
        if values[0] != 0.0 || *values.last().unwrap() != 1.0 {
            return Err(Error::DegeneratePhase(
                "phase must satisfy γ(0) = 0 and γ(1) = 1".into(),
            ));
        }
        if let Some(w) = values.windows(2).find(|w| !(w[1] - w[0] > MIN_INCREMENT)) {
            return Err(Error::DegeneratePhase(format!(
                "phase increment {} is below the slope floor",
                w[1] - w[0]
            )));
        }
        Ok(Self {
            repr: Repr::PiecewiseLinear { knots, values },
        })
    }

    /// The parameter `α` of a one-parameter warp.
    pub fn alpha(&self) -> Option<f64> {
        match self.repr {
            Repr::Parametric { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn knots(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::PiecewiseLinear { knots, .. } => Some(knots),
            _ => None,
        }
    }

    pub fn shared_knots(&self) -> Option<Arc<[f64]>> {
        match &self.repr {
            Repr::PiecewiseLinear { knots, .. } => Some(Arc::clone(knots)),
            _ => None,
        }
    }

    /// Knot values of a piecewise-linear warp.
    pub fn values(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::PiecewiseLinear { values, .. } => Some(values),
            _ => None,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self.repr, Repr::Parametric { .. })
    }

    /// `γ(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_domain(t)?;
        Ok(self.value_at(t))
    }

    /// `γ̇(t)`; piecewise-linear warps use the right segment at knots and the left one at 1.
    pub fn deriv(&self, t: f64) -> Result<f64> {
        check_domain(t)?;
        Ok(self.slope_at(t))
    }

    pub(crate) fn value_at(&self, t: f64) -> f64 {
        let v = match &self.repr {
            Repr::Parametric { alpha } => t + alpha * t * (t - 1.0),
            Repr::PiecewiseLinear { knots, values } => interp_unchecked(knots, values, t),
        };
        v.clamp(0.0, 1.0)
    }

    pub(crate) fn slope_at(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Parametric { alpha } => 1.0 + alpha * (2.0 * t - 1.0),
            Repr::PiecewiseLinear { knots, values } => {
                let k = segment_index(knots, t);
                (values[k + 1] - values[k]) / (knots[k + 1] - knots[k])
            }
        }
    }

    /// `γ` sampled at `times`.
    pub(crate) fn values_at(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.value_at(t)).collect()
    }

    /// Exact inverse of a piecewise-linear warp (knots and values swapped).
    pub fn exact_inverse(&self) -> Result<PhaseFunction> {
        match &self.repr {
            Repr::PiecewiseLinear { knots, values } => {
                PhaseFunction::piecewise_linear(values.clone().into(), knots.to_vec())
            }
            Repr::Parametric { .. } => Err(Error::arg(
                "exact inverses exist only for piecewise-linear warps; use invert()",
            )),
        }
    }

    /// Largest `|γ(t) − other(t)|` over `count` uniform points.
    pub fn sup_distance(&self, other: &PhaseFunction, count: usize) -> f64 {
        let step = (count.max(2) - 1) as f64;
        (0..count.max(2))
            .map(|k| {
                let t = k as f64 / step;
                (self.value_at(t) - other.value_at(t)).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn uniform_points(resolution: usize) -> Result<Arc<[f64]>> {
    if resolution < 2 {
        return Err(Error::arg("resolution must be at least 2"));
    }
    uniform_knots(resolution)
}

/// `γ1 ∘ γ2`, sampled at `resolution` uniform knots.
pub fn compose(
    outer: &PhaseFunction,
    inner: &PhaseFunction,
    resolution: usize,
) -> Result<PhaseFunction> {
    let knots = uniform_points(resolution)?;
    let mut values: Vec<f64> = knots
        .iter()
        .map(|&t| outer.value_at(inner.value_at(t)))
        .collect();
    values[0] = 0.0;
    *values.last_mut().unwrap() = 1.0;
    PhaseFunction::piecewise_linear(knots, values)
}

/// Piecewise-linear `γ⁻¹`: swap the samples `(t, γ(t))` and resample at uniform knots.
pub fn invert(gamma: &PhaseFunction, resolution: usize) -> Result<PhaseFunction> {
    let knots = uniform_points(resolution)?;
    let (t_samples, g_samples): (Vec<f64>, Vec<f64>) = match gamma.knots() {
        // Use the breakpoints themselves so the inverse is exact between them.
        Some(k) => (k.to_vec(), gamma.values().unwrap().to_vec()),
        None => (knots.to_vec(), gamma.values_at(&knots)),
    };
    if g_samples.windows(2).any(|w| !(w[1] - w[0] > MIN_INCREMENT)) {
        return Err(Error::DegeneratePhase(
            "warp is too flat to invert at this resolution".into(),
        ));
    }
    let mut values: Vec<f64> = knots
        .iter()
        .map(|&s| interp_unchecked(&g_samples, &t_samples, s))
        .collect();
    values[0] = 0.0;
    *values.last_mut().unwrap() = 1.0;
    PhaseFunction::piecewise_linear(knots, values)
}

fn act(
    f: &FunctionSample,
    gamma: &PhaseFunction,
    grid: &TimeGrid,
    scale: impl Fn(f64) -> f64,
) -> Result<FunctionSample> {
    f.check_grid(grid)?;
    let pts = grid.points();
    let values = pts
        .iter()
        .map(|&t| interp_unchecked(pts, &f.values, gamma.value_at(t)) * scale(gamma.slope_at(t)))
        .collect();
    Ok(FunctionSample::new(values))
}

/// `(f ∘ γ) √γ̇`, the isometric action.
pub fn act_norm_preserving(
    f: &FunctionSample,
    gamma: &PhaseFunction,
    grid: &TimeGrid,
) -> Result<FunctionSample> {
    act(f, gamma, grid, f64::sqrt)
}

/// `f ∘ γ`.
pub fn act_value_preserving(
    f: &FunctionSample,
    gamma: &PhaseFunction,
    grid: &TimeGrid,
) -> Result<FunctionSample> {
    act(f, gamma, grid, |_| 1.0)
}

/// `(f ∘ γ) γ̇`.
pub fn act_area_preserving(
    f: &FunctionSample,
    gamma: &PhaseFunction,
    grid: &TimeGrid,
) -> Result<FunctionSample> {
    act(f, gamma, grid, |d| d)
}

/// Successive increments `γ(t_{j+1}) − γ(t_j)` of a warp on a knot set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseIncrements {
    pub deltas: Vec<f64>,
    pub knots: Arc<[f64]>,
}

impl PhaseIncrements {
    /// Checks positivity and the unit sum.
    pub fn new(deltas: Vec<f64>, knots: Arc<[f64]>) -> Result<Self> {
        validate_knots(&knots)?;
        if deltas.len() + 1 != knots.len() {
            return Err(Error::dim(format!(
                "{} increments for {} knots",
                deltas.len(),
                knots.len()
            )));
        }
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::DegeneratePhase("increments must be positive".into()));
        }
        if (deltas.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::arg("increments must sum to one"));
        }
        Ok(Self { deltas, knots })
    }

    /// Knot spacings `t_{j+1} − t_j`, the Dirichlet mean direction.
    pub fn spacings(knots: &[f64]) -> Vec<f64> {
        knots.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Cumulative sums `Σ_{k≤j} Δ_k`, i.e. the warp values at knots `2..T_γ`.
    pub fn cumulative(&self) -> Vec<f64> {
        self.deltas
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect()
    }
}

/// Increments of `γ` on `knots`; the last one is the remainder, so they sum to one.
pub fn to_increments(gamma: &PhaseFunction, knots: Arc<[f64]>) -> Result<PhaseIncrements> {
    validate_knots(&knots)?;
    let vals = gamma.values_at(&knots);
    let k = knots.len() - 1;
    let mut deltas: Vec<f64> = vals.windows(2).take(k - 1).map(|w| w[1] - w[0]).collect();
    let used: f64 = deltas.iter().sum();
    deltas.push(1.0 - used);
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::DegeneratePhase(format!("non-positive increment {d}")));
    }
    Ok(PhaseIncrements { deltas, knots })
}

/// Rebuilds the piecewise-linear warp from its increments.
pub fn from_increments(inc: &PhaseIncrements) -> Result<PhaseFunction> {
    let mut values = Vec::with_capacity(inc.knots.len());
    values.push(0.0);
    values.extend(inc.cumulative());
    *values.last_mut().unwrap() = 1.0;
    PhaseFunction::piecewise_linear(Arc::clone(&inc.knots), values)
}

/// Draws a piecewise-linear warp whose increments follow `Dirichlet(θ · spacings)`.
pub fn sample_dirichlet_phase<R: Rng + ?Sized>(
    theta: f64,
    knots: Arc<[f64]>,
    rng: &mut R,
) -> Result<PhaseFunction> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::arg(format!("Dirichlet precision must be positive, got {theta}")));
    }
    validate_knots(&knots)?;
    let conc: Vec<f64> = PhaseIncrements::spacings(&knots)
        .iter()
        .map(|s| theta * s)
        .collect();
    let deltas = sample_dirichlet(&conc, rng);
    from_increments(&PhaseIncrements { deltas, knots })
}

/// Pointwise average of warps on the grid; convexity keeps it in the group.
pub fn mean_phase(phases: &[PhaseFunction], grid: &TimeGrid) -> Result<PhaseFunction> {
    let mut acc = PhaseAccumulator::new(grid);
    for p in phases {
        acc.add(p);
    }
    acc.mean()
}

/// Running pointwise sum of warps on a grid.
#[derive(Debug, Clone)]
pub struct PhaseAccumulator {
    knots: Arc<[f64]>,
    sum: Vec<f64>,
    count: usize,
}

impl PhaseAccumulator {
    pub fn new(grid: &TimeGrid) -> Self {
        Self {
            knots: grid.shared_points(),
            sum: vec![0.0; grid.len()],
            count: 0,
        }
    }

    pub fn add(&mut self, gamma: &PhaseFunction) {
        for (s, &t) in self.sum.iter_mut().zip(self.knots.iter()) {
            *s += gamma.value_at(t);
        }
        self.count += 1;
    }

    pub fn mean(&self) -> Result<PhaseFunction> {
        if self.count == 0 {
            return Err(Error::arg("cannot average an empty set of phases"));
        }
        let n = self.count as f64;
        let mut values: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        values[0] = 0.0;
        *values.last_mut().unwrap() = 1.0;
        PhaseFunction::piecewise_linear(Arc::clone(&self.knots), values)
    }
}
