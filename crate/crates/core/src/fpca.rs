//! Template alignment, the alignment-based centered mean, empirical FPCA and
//! the projection-residual experiment.

use nalgebra::DMatrix;

use crate::basis::{BasisKind, OrthonormalBasis};
use crate::error::{Error, Result};
use crate::grid::{weighted_dot, FunctionSample, TimeGrid};
use crate::phase::{act_norm_preserving, uniform_knots, PhaseFunction, MIN_INCREMENT};
use crate::simulate::cross_sectional_mean;

/// Knot count of the piecewise-linear search family.
pub const CD_KNOTS: usize = 7;
const CD_MAX_SWEEPS: usize = 50;
const CD_TOL: f64 = 1e-10;
const GOLDEN_ITERS: usize = 40;
const CENTERED_MEAN_TOL: f64 = 1e-6;

/// Search family for the argmin over warps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignFamily {
    /// `α ∈ {−0.99, −0.98, …, 0.99}` for the one-parameter warp.
    Pm1Grid,
    /// Coordinate descent over the interior knot values of a 7-knot
    /// piecewise-linear warp, started from the `Pm1Grid` optimum.
    PiecewiseCd,
}

fn sq_dist(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum()
}

fn check_inputs(f: &FunctionSample, mu: &FunctionSample, grid: &TimeGrid) -> Result<()> {
    f.check_grid(grid)?;
    mu.check_grid(grid)?;
    if f.values.iter().chain(&mu.values).any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite values in alignment input"));
    }
    Ok(())
}

fn warp_cost(
    f: &FunctionSample,
    mu: &FunctionSample,
    gamma: &PhaseFunction,
    grid: &TimeGrid,
) -> Result<f64> {
    let moved = act_norm_preserving(f, gamma, grid)?;
    Ok(sq_dist(&mu.values, &moved.values, grid.weights()))
}

fn pm1_search(f: &FunctionSample, mu: &FunctionSample, grid: &TimeGrid) -> Result<(PhaseFunction, f64)> {
    // Identity is scored without interpolation so the result never exceeds it.
    let mut best = (PhaseFunction::identity(), sq_dist(&mu.values, &f.values, grid.weights()));
    for k in -99i32..=99 {
        if k == 0 {
            continue;
        }
        let gamma = PhaseFunction::parametric(k as f64 / 100.0)?;
        let cost = warp_cost(f, mu, &gamma, grid)?;
        if cost < best.1 {
            best = (gamma, cost);
        }
    }
    Ok(best)
}

fn golden_min(lo: f64, hi: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = eval(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Coordinate descent from `start`; returns the final warp and the cost after
/// every sweep (first entry is the starting cost).
pub fn coordinate_descent(
    f: &FunctionSample,
    mu: &FunctionSample,
    grid: &TimeGrid,
    start: &PhaseFunction,
) -> Result<(PhaseFunction, Vec<f64>)> {
    check_inputs(f, mu, grid)?;
    let knots = uniform_knots(CD_KNOTS)?;
    let mut values = start.values_at(&knots);
    values[0] = 0.0;
    values[CD_KNOTS - 1] = 1.0;
    let build = |v: &[f64]| PhaseFunction::piecewise_linear(knots.clone(), v.to_vec());
    let mut cost = warp_cost(f, mu, &build(&values)?, grid)?;
    let mut history = vec![cost];
    for _ in 0..CD_MAX_SWEEPS {
        let before = cost;
        for j in 1..CD_KNOTS - 1 {
            let lo = values[j - 1] + 2.0 * MIN_INCREMENT;
            let hi = values[j + 1] - 2.0 * MIN_INCREMENT;
            if hi <= lo {
                continue;
            }
            let mut trial = values.clone();
            let (x, c) = golden_min(lo, hi, |x| {
                trial[j] = x;
                warp_cost(f, mu, &build(&trial)?, grid)
            })?;
            if c < cost {
                values[j] = x;
                cost = c;
            }
        }
        history.push(cost);
        if before - cost <= CD_TOL * before.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok((build(&values)?, history))
}

/// Minimizes `‖μ − (f ∘ γ)√γ̇‖²` over the chosen family; returns `(γ*, cost)`.
pub fn align_to_template(
    f: &FunctionSample,
    mu: &FunctionSample,
    grid: &TimeGrid,
    family: AlignFamily,
) -> Result<(PhaseFunction, f64)> {
    check_inputs(f, mu, grid)?;
    let (pm1, pm1_cost) = pm1_search(f, mu, grid)?;
    match family {
        AlignFamily::Pm1Grid => Ok((pm1, pm1_cost)),
        AlignFamily::PiecewiseCd => {
            let (gamma, history) = coordinate_descent(f, mu, grid, &pm1)?;
            let cost = *history.last().unwrap();
            // The piecewise-linear start only approximates the PM1 curve.
            if cost < pm1_cost {
                Ok((gamma, cost))
            } else {
                Ok((pm1, pm1_cost))
            }
        }
    }
}

/// Result of [`centered_mean`].
#[derive(Debug, Clone)]
pub struct CenteredMean {
    pub mean: FunctionSample,
    pub phases: Vec<PhaseFunction>,
    /// `Σ_i ‖μ̄ − D_{γ_i} f_i‖²` after each alignment round.
    pub objective: Vec<f64>,
    pub rounds: usize,
}

fn align_all(
    data: &[FunctionSample],
    mu: &FunctionSample,
    grid: &TimeGrid,
    family: AlignFamily,
) -> Result<(Vec<PhaseFunction>, Vec<FunctionSample>, f64)> {
    let mut phases = Vec::with_capacity(data.len());
    let mut aligned = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for f in data {
        let (gamma, cost) = align_to_template(f, mu, grid, family)?;
        aligned.push(if gamma.is_parametric() && gamma.alpha() == Some(0.0) {
            f.clone()
        } else {
            act_norm_preserving(f, &gamma, grid)?
        });
        phases.push(gamma);
        total += cost;
    }
    Ok((phases, aligned, total))
}

/// Alternates between aligning every observation to `μ̄` and averaging the
/// aligned curves, for at most `iters` rounds.
pub fn centered_mean(
    data: &[FunctionSample],
    grid: &TimeGrid,
    iters: usize,
    family: AlignFamily,
) -> Result<CenteredMean> {
    let mut mean = cross_sectional_mean(data)?;
    mean.check_grid(grid)?;
    let mut phases = vec![PhaseFunction::identity(); data.len()];
    let mut objective = Vec::new();
    let mut rounds = 0;
    while rounds < iters {
        let (p, aligned, total) = align_all(data, &mean, grid, family)?;
        objective.push(total);
        phases = p;
        let next = cross_sectional_mean(&aligned)?;
        rounds += 1;
        let w = grid.weights();
        let diff = sq_dist(&next.values, &mean.values, w).sqrt();
        let scale = weighted_dot(&mean.values, &mean.values, w).sqrt();
        mean = next;
        if diff <= CENTERED_MEAN_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(CenteredMean {
        mean,
        phases,
        objective,
        rounds,
    })
}

/// Leading principal directions of the aligned residuals.
#[derive(Debug, Clone)]
pub struct FpcaBasis {
    /// `T × k` matrix of orthonormal (Euclidean) directions.
    pub components: DMatrix<f64>,
    /// All singular values of the sample covariance, non-increasing.
    pub singular_values: Vec<f64>,
}

impl FpcaBasis {
    /// Cumulative fraction of total variation explained by the first `k` components.
    pub fn energy_fractions(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().sum();
        let mut acc = 0.0;
        self.singular_values
            .iter()
            .map(|s| {
                acc += s;
                if total > 0.0 {
                    acc / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Smallest component count whose cumulative energy reaches `fraction`.
    pub fn components_for(&self, fraction: f64) -> usize {
        let e = self.energy_fractions();
        e.iter()
            .position(|&x| x >= fraction)
            .map_or(e.len(), |k| k + 1)
    }

    /// The components as an orthonormal basis in the grid's L² inner product.
    pub fn to_basis(&self, grid: &TimeGrid) -> Result<OrthonormalBasis> {
        let raw: Vec<FunctionSample> = self
            .components
            .column_iter()
            .map(|c| FunctionSample::new(c.iter().copied().collect()))
            .collect();
        crate::basis::gram_schmidt(&raw, grid)
    }
}

/// SVD of the sample covariance (divisor `n − 1`) of `aligned_i − μ̄`.
pub fn fpca_basis(
    aligned: &[FunctionSample],
    grid: &TimeGrid,
    mean: &FunctionSample,
    num_components: usize,
) -> Result<FpcaBasis> {
    let n = aligned.len();
    if n < 2 {
        return Err(Error::arg("FPCA needs at least two observations"));
    }
    mean.check_grid(grid)?;
    let t = grid.len();
    if num_components == 0 || num_components > t {
        return Err(Error::arg(format!(
            "component count {num_components} outside 1..={t}"
        )));
    }
    let mut w = DMatrix::zeros(t, n);
    for (i, f) in aligned.iter().enumerate() {
        f.check_grid(grid)?;
        for r in 0..t {
            w[(r, i)] = f.values[r] - mean.values[r];
        }
    }
    let k = (&w * w.transpose()) / (n as f64 - 1.0);
    let svd = k.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let components = DMatrix::from_fn(t, num_components, |r, c| u[(r, order[c])]);
    Ok(FpcaBasis {
        components,
        singular_values,
    })
}

/// `‖f − f̂‖` for the projection `f̂` onto `basis`, or with `family` set,
/// `min_γ ‖f − (f̂ ∘ γ)√γ̇‖` over that search family.
pub fn projection_residual(
    f: &FunctionSample,
    basis: &OrthonormalBasis,
    grid: &TimeGrid,
    optimize_phase: Option<AlignFamily>,
) -> Result<f64> {
    f.check_grid(grid)?;
    let coef: Vec<f64> = (0..basis.count())
        .map(|k| weighted_dot(&f.values, basis.eval_matrix().column(k).as_slice(), grid.weights()))
        .collect();
    let fhat = basis.expand(&coef)?;
    let cost = match optimize_phase {
        None => sq_dist(&f.values, &fhat.values, grid.weights()),
        Some(family) => align_to_template(&fhat, f, grid, family)?.1,
    };
    Ok(cost.max(0.0).sqrt())
}

/// One row of [`residual_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub count: usize,
    pub plain: f64,
    pub optimized: f64,
}

/// Average plain and phase-optimized projection residuals for `B = 1..=max_count`.
pub fn residual_sweep(
    data: &[FunctionSample],
    grid: &TimeGrid,
    kind: BasisKind,
    max_count: usize,
    family: AlignFamily,
) -> Result<Vec<ResidualRow>> {
    if data.is_empty() {
        return Err(Error::arg("empty dataset"));
    }
    let n = data.len() as f64;
    (1..=max_count)
        .map(|b| {
            let basis = OrthonormalBasis::new(kind, b, grid)?;
            let (mut plain, mut optimized) = (0.0, 0.0);
            for f in data {
                plain += projection_residual(f, &basis, grid, None)?;
                optimized += projection_residual(f, &basis, grid, Some(family))?;
            }
            Ok(ResidualRow {
                count: b,
                plain: plain / n,
                optimized: optimized / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump(grid: &TimeGrid) -> FunctionSample {
        FunctionSample::from_fn(grid, |t| (-(t - 0.4) * (t - 0.4) / 0.02).exp() + 0.3 * t)
    }

    fn dist(a: &FunctionSample, b: &FunctionSample, grid: &TimeGrid) -> f64 {
        sq_dist(&a.values, &b.values, grid.weights()).sqrt()
    }

    #[test]
    fn self_alignment_is_identity() {
        let grid = TimeGrid::uniform(101).unwrap();
        let mu = bump(&grid);
        for family in [AlignFamily::Pm1Grid, AlignFamily::PiecewiseCd] {
            let (gamma, cost) = align_to_template(&mu, &mu, &grid, family).unwrap();
            assert_eq!(gamma.alpha(), Some(0.0));
            assert_eq!(cost, 0.0);
        }
    }

    #[test]
    fn pm1_alignment_undoes_pm1_warp() {
        let grid = TimeGrid::uniform(201).unwrap();
        let mu = bump(&grid);
        let f = act_norm_preserving(&mu, &PhaseFunction::parametric(0.3).unwrap(), &grid).unwrap();
        let unaligned = sq_dist(&mu.values, &f.values, grid.weights());
        let (gamma, cost) = align_to_template(&f, &mu, &grid, AlignFamily::Pm1Grid).unwrap();
        assert!(cost < 0.5 * unaligned, "{cost} vs {unaligned}");
        // the inverse of PM1(0.3) is closest to a negative α
        assert!(gamma.alpha().unwrap() < 0.0);
        let (_, cd) = align_to_template(&f, &mu, &grid, AlignFamily::PiecewiseCd).unwrap();
        assert!(cd <= cost);
    }

    #[test]
    fn coordinate_descent_is_monotone() {
        let grid = TimeGrid::uniform(101).unwrap();
        let mu = bump(&grid);
        let knots = uniform_knots(5).unwrap();
        let warp = PhaseFunction::piecewise_linear(knots, vec![0.0, 0.15, 0.4, 0.8, 1.0]).unwrap();
        let f = act_norm_preserving(&mu, &warp, &grid).unwrap();
        let (_, history) = coordinate_descent(&f, &mu, &grid, &PhaseFunction::identity()).unwrap();
        assert!(history.len() > 1);
        for w in history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(*history.last().unwrap() < 0.2 * history[0]);
    }

    #[test]
    fn alignment_rejects_bad_input() {
        let grid = TimeGrid::uniform(11).unwrap();
        let mu = FunctionSample::zeros(11);
        let mut f = FunctionSample::zeros(11);
        f.values[3] = f64::NAN;
        assert!(align_to_template(&f, &mu, &grid, AlignFamily::Pm1Grid).is_err());
        assert!(align_to_template(&FunctionSample::zeros(5), &mu, &grid, AlignFamily::Pm1Grid).is_err());
    }

    #[test]
    fn centered_mean_identical_curves() {
        let grid = TimeGrid::uniform(51).unwrap();
        let mu = bump(&grid);
        let data = vec![mu.clone(); 4];
        let c = centered_mean(&data, &grid, 5, AlignFamily::Pm1Grid).unwrap();
        assert_eq!(c.mean, mu);
        assert!(c.phases.iter().all(|g| g.alpha() == Some(0.0)));
        assert_eq!(c.rounds, 1);
    }

    #[test]
    fn centered_mean_zero_iterations() {
        let grid = TimeGrid::uniform(51).unwrap();
        let data = vec![bump(&grid), FunctionSample::from_fn(&grid, |t| t)];
        let c = centered_mean(&data, &grid, 0, AlignFamily::Pm1Grid).unwrap();
        assert_eq!(c.mean, cross_sectional_mean(&data).unwrap());
        assert!(c.objective.is_empty());
    }

    #[test]
    fn centered_mean_beats_cross_sectional_mean() {
        let grid = TimeGrid::uniform(201).unwrap();
        let mu = bump(&grid);
        let g = PhaseFunction::parametric(0.3).unwrap();
        let ginv = crate::phase::invert(&g, 2001).unwrap();
        let data = vec![
            act_norm_preserving(&mu, &g, &grid).unwrap(),
            act_norm_preserving(&mu, &ginv, &grid).unwrap(),
        ];
        let naive = cross_sectional_mean(&data).unwrap();
        let c = centered_mean(&data, &grid, 10, AlignFamily::Pm1Grid).unwrap();
        assert!(dist(&c.mean, &mu, &grid) < dist(&naive, &mu, &grid));
        for w in c.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", c.objective);
        }
    }

    #[test]
    fn fpca_zero_residuals() {
        let grid = TimeGrid::uniform(20).unwrap();
        let mu = bump(&grid);
        let b = fpca_basis(&vec![mu.clone(); 3], &grid, &mu, 2).unwrap();
        assert!(b.singular_values.iter().all(|&s| s == 0.0));
        assert!(fpca_basis(std::slice::from_ref(&mu), &grid, &mu, 1).is_err());
    }

    #[test]
    fn fpca_rank_one() {
        let grid = TimeGrid::uniform(30).unwrap();
        let mu = bump(&grid);
        let u: Vec<f64> = grid.points().iter().map(|t| (3.0 * t).sin()).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let data: Vec<FunctionSample> = [-1.5, 0.3, 2.0, -0.7]
            .iter()
            .map(|c| FunctionSample::new(mu.values.iter().zip(&u).map(|(m, x)| m + c * x).collect()))
            .collect();
        let b = fpca_basis(&data, &grid, &mu, 3).unwrap();
        let dot: f64 = b.components.column(0).iter().zip(&u).map(|(a, x)| a * x / norm).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);
        assert!(b.singular_values[1] < 1e-12 * b.singular_values[0]);
        assert!((b.energy_fractions()[0] - 1.0).abs() < 1e-10);
        assert_eq!(b.components_for(0.9), 1);
    }

    #[test]
    fn fpca_components_orthonormal() {
        let grid = TimeGrid::uniform(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<FunctionSample> = (0..10)
            .map(|_| FunctionSample::new((0..20).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let mean = cross_sectional_mean(&data).unwrap();
        let b = fpca_basis(&data, &grid, &mean, 20).unwrap();
        let gram = b.components.transpose() * &b.components;
        assert!((gram - DMatrix::identity(20, 20)).amax() < 1e-10);
        for w in b.singular_values.windows(2) {
            assert!(w[0] >= w[1] && w[1] >= 0.0);
        }
    }

    #[test]
    fn projection_of_span_member_is_exact() {
        let grid = TimeGrid::uniform(101).unwrap();
        let basis = OrthonormalBasis::new(BasisKind::ModifiedFourier, 5, &grid).unwrap();
        let f = basis.expand(&[0.4, -1.0, 0.2, 0.0, 0.7]).unwrap();
        assert!(projection_residual(&f, &basis, &grid, None).unwrap() < 1e-6);
    }

    #[test]
    fn phase_optimized_residual_never_larger() {
        let grid = TimeGrid::uniform(101).unwrap();
        let f = bump(&grid);
        for b in 1..8 {
            let basis = OrthonormalBasis::new(BasisKind::ModifiedFourier, b, &grid).unwrap();
            let plain = projection_residual(&f, &basis, &grid, None).unwrap();
            for family in [AlignFamily::Pm1Grid, AlignFamily::PiecewiseCd] {
                let opt = projection_residual(&f, &basis, &grid, Some(family)).unwrap();
                assert!(opt <= plain, "B={b}: {opt} > {plain}");
            }
        }
        assert!(l2_norm(&f, &grid).unwrap() > 0.0);
    }
}
