//! Post-processing of kept draws: centering, pointwise bands, rotated fits and
//! the `Δ_μ` accuracy metric.

use nalgebra::DVector;

use crate::basis::OrthonormalBasis;
use crate::error::{Error, Result};
use crate::grid::{FunctionSample, TimeGrid};
use crate::mcmc::PosteriorDraws;
use crate::phase::{act_norm_preserving, PhaseAccumulator, PhaseFunction};

/// Centered `μ` draws on the grid together with the centering phase `γ̄`.
#[derive(Debug, Clone)]
pub struct CenteredMuDraws {
    pub draws: Vec<FunctionSample>,
    pub gamma_bar: PhaseFunction,
}

/// Pointwise mean and 2.5% / 97.5% quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseSummary {
    pub mean: FunctionSample,
    pub lower: FunctionSample,
    pub upper: FunctionSample,
}

/// `Σ_k a_k φ_k(γ(t_j)) √γ̇(t_j)` for every grid time.
fn warped_expansion(
    basis: &OrthonormalBasis,
    gamma: &PhaseFunction,
    a: &[f64],
    grid: &TimeGrid,
) -> FunctionSample {
    let pts = grid.points();
    let times = gamma.values_at(pts);
    let v = basis.eval_unchecked(&times) * DVector::from_column_slice(a);
    FunctionSample::new(
        v.iter()
            .zip(pts)
            .map(|(x, &t)| x * gamma.slope_at(t).sqrt())
            .collect(),
    )
}

fn check_basis(draws: &PosteriorDraws, basis: &OrthonormalBasis) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::arg("no posterior draws"));
    }
    if draws.a[0].len() != basis.count() {
        return Err(Error::dim(format!(
            "draws have {} coefficients, the basis has {} functions",
            draws.a[0].len(),
            basis.count()
        )));
    }
    Ok(())
}

/// Pointwise average of every phase draw of every observation.
pub fn gamma_bar(draws: &PosteriorDraws, grid: &TimeGrid) -> Result<PhaseFunction> {
    let mut acc = PhaseAccumulator::new(grid);
    for draw in &draws.phases {
        for g in draw {
            acc.add(g);
        }
    }
    acc.mean()
}

/// Maps each draw `μ̂ʲ` to `(μ̂ʲ ∘ γ̄) √γ̄̇`, evaluating the basis analytically at `γ̄(t)`.
pub fn center_mu(
    draws: &PosteriorDraws,
    fixed: &OrthonormalBasis,
    grid: &TimeGrid,
) -> Result<CenteredMuDraws> {
    check_basis(draws, fixed)?;
    let gamma_bar = gamma_bar(draws, grid)?;
    let draws = draws
        .a
        .iter()
        .map(|a| warped_expansion(fixed, &gamma_bar, a, grid))
        .collect();
    Ok(CenteredMuDraws { draws, gamma_bar })
}

/// Quantile by linear interpolation between order statistics; `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn pointwise_summary(centered: &CenteredMuDraws) -> Result<PointwiseSummary> {
    summarize_samples(&centered.draws)
}

/// Pointwise mean and 95% band of any set of sampled functions.
pub fn summarize_samples(samples: &[FunctionSample]) -> Result<PointwiseSummary> {
    if samples.len() < 2 {
        return Err(Error::arg("pointwise summaries need at least two draws"));
    }
    let t = samples[0].len();
    if samples.iter().any(|s| s.len() != t) {
        return Err(Error::dim("draws have different lengths"));
    }
    let n = samples.len() as f64;
    let mut mean = Vec::with_capacity(t);
    let mut lower = Vec::with_capacity(t);
    let mut upper = Vec::with_capacity(t);
    let mut column = vec![0.0; samples.len()];
    for j in 0..t {
        for (c, s) in column.iter_mut().zip(samples) {
            *c = s.values[j];
        }
        mean.push(column.iter().sum::<f64>() / n);
        column.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&column, 0.025));
        upper.push(quantile_sorted(&column, 0.975));
    }
    Ok(PointwiseSummary {
        mean: mean.into(),
        lower: lower.into(),
        upper: upper.into(),
    })
}

/// `Σ_{j<T} (μ̂(t_j) − μ(t_j))² (t_{j+1} − t_j)`.
pub fn delta_mu(estimate: &FunctionSample, truth: &FunctionSample, grid: &TimeGrid) -> Result<f64> {
    estimate.check_grid(grid)?;
    truth.check_grid(grid)?;
    let pts = grid.points();
    Ok(pts
        .windows(2)
        .enumerate()
        .map(|(j, w)| (estimate.values[j] - truth.values[j]).powi(2) * (w[1] - w[0]))
        .sum())
}

/// `Δ_μ` after moving the estimate by the best one-parameter warp on a 0.01 grid of `α`.
///
/// Returns the aligned value and the minimizing `α`.
pub fn delta_mu_aligned(
    estimate: &FunctionSample,
    truth: &FunctionSample,
    grid: &TimeGrid,
) -> Result<(f64, f64)> {
    let mut best = (delta_mu(estimate, truth, grid)?, 0.0);
    for k in -99..=99 {
        let alpha = k as f64 / 100.0;
        let g = PhaseFunction::parametric(alpha)?;
        let moved = act_norm_preserving(estimate, &g, grid)?;
        let d = delta_mu(&moved, truth, grid)?;
        if d < best.0 {
            best = (d, alpha);
        }
    }
    Ok(best)
}

/// `D_{γ̂_iʲ}(μ̂ʲ)` for every kept draw `j`, evaluated analytically at the warped times.
pub fn rotated_fit(
    draws: &PosteriorDraws,
    obs: usize,
    fixed: &OrthonormalBasis,
    grid: &TimeGrid,
) -> Result<Vec<FunctionSample>> {
    check_basis(draws, fixed)?;
    if obs >= draws.observations() {
        return Err(Error::arg(format!(
            "observation {obs} out of range for {} observations",
            draws.observations()
        )));
    }
    Ok(draws
        .a
        .iter()
        .zip(&draws.phases)
        .map(|(a, phases)| warped_expansion(fixed, &phases[obs], a, grid))
        .collect())
}

/// Raw `μ̂ʲ = Σ a_kʲ φ_k` on the grid.
pub fn mu_draws(draws: &PosteriorDraws, fixed: &OrthonormalBasis) -> Result<Vec<FunctionSample>> {
    check_basis(draws, fixed)?;
    draws.a.iter().map(|a| fixed.expand(a)).collect()
}

/// Posterior means of `σ²` and `σ_c²`.
pub fn variance_means(draws: &PosteriorDraws) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::arg("no posterior draws"));
    }
    let n = draws.len() as f64;
    Ok((
        draws.sigma2.iter().sum::<f64>() / n,
        draws.sigma_c2.iter().sum::<f64>() / n,
    ))
}
