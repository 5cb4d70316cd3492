//! Modified Fourier and cubic B-spline systems, orthonormalized on the data grid.
//!
//! Each [`OrthonormalBasis`] keeps the Gram–Schmidt coefficients over its raw
//! generators, so the orthonormal functions can be evaluated analytically at
//! arbitrary (warped) times instead of interpolating the sampled matrix.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{interp_unchecked, weighted_dot, FunctionSample, TimeGrid};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Pivot norm below which Gram–Schmidt reports a rank-deficient input.
const PIVOT_TOL: f64 = 1e-10;

/// Gram residual above which a second orthogonalization pass is run.
const REORTH_TOL: f64 = 1e-8;

/// Cubic splines.
const SPLINE_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    ModifiedFourier,
    BSpline,
    /// Orthonormalized sampled functions (e.g. FPCA components), evaluated by interpolation.
    Empirical,
}

#[derive(Debug, Clone)]
enum Generator {
    ModifiedFourier,
    BSpline { knots: Vec<f64> },
    Sampled { knots: Arc<[f64]>, samples: Vec<Vec<f64>> },
}

impl Generator {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            Generator::ModifiedFourier => modified_fourier_at(t, out),
            Generator::BSpline { knots } => bspline_at(knots, t, out),
            Generator::Sampled { knots, samples } => {
                for (o, s) in out.iter_mut().zip(samples) {
                    *o = interp_unchecked(knots, s, t);
                }
            }
        }
    }
}

/// Orthonormal basis on a [`TimeGrid`] together with its analytic evaluator.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    kind: BasisKind,
    generator: Generator,
    /// Column `k` holds the weights of orthonormal function `k` over the raw generators.
    coefficients: DMatrix<f64>,
    eval_matrix: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Builds and orthonormalizes `count` functions of the given kind on `grid`.
    pub fn new(kind: BasisKind, count: usize, grid: &TimeGrid) -> Result<Self> {
        let (raw, generator) = match kind {
            BasisKind::ModifiedFourier => (raw_modified_fourier(grid, count)?, Generator::ModifiedFourier),
            BasisKind::BSpline => (
                raw_bspline(grid, count)?,
                Generator::BSpline {
                    knots: clamped_uniform_knots(count),
                },
            ),
            BasisKind::Empirical => {
                return Err(Error::arg(
                    "empirical bases are built from samples with gram_schmidt",
                ))
            }
        };
        orthonormalize(&raw, grid, kind, generator)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn count(&self) -> usize {
        self.coefficients.ncols()
    }

    /// `T × B` matrix of basis values on the construction grid.
    pub fn eval_matrix(&self) -> &DMatrix<f64> {
        &self.eval_matrix
    }

    /// Gram–Schmidt coefficients over the raw generators.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Orthonormal function `k` sampled on the construction grid.
    pub fn function(&self, k: usize) -> FunctionSample {
        FunctionSample::new(self.eval_matrix.column(k).iter().copied().collect())
    }

    /// Raw generator values at `times` (rows) without domain checks.
    pub(crate) fn raw_at(&self, times: &[f64]) -> DMatrix<f64> {
        let b = self.count();
        let mut raw = DMatrix::zeros(times.len(), b);
        let mut row = vec![0.0; b];
        for (r, &t) in times.iter().enumerate() {
            self.generator.eval_into(t, &mut row);
            for (c, v) in row.iter().enumerate() {
                raw[(r, c)] = *v;
            }
        }
        raw
    }

    /// Analytic evaluation without domain checks; `times` must lie in `[0, 1]`.
    pub(crate) fn eval_unchecked(&self, times: &[f64]) -> DMatrix<f64> {
        self.raw_at(times) * &self.coefficients
    }

    /// Evaluates `Σ_k coef_k φ_k` on the construction grid.
    pub fn expand(&self, coef: &[f64]) -> Result<FunctionSample> {
        if coef.len() != self.count() {
            return Err(Error::dim(format!(
                "{} coefficients for a basis of {} functions",
                coef.len(),
                self.count()
            )));
        }
        let v = &self.eval_matrix * nalgebra::DVector::from_column_slice(coef);
        Ok(FunctionSample::new(v.iter().copied().collect()))
    }
}

/// Evaluates every orthonormal function at `times`; rows are times, columns basis index.
pub fn eval_basis_at(basis: &OrthonormalBasis, times: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(&t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Domain(t));
    }
    Ok(basis.eval_unchecked(times))
}

fn modified_fourier_at(t: f64, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = match k {
            0 => SQRT_3 * t,
            1 => SQRT_3 * (1.0 - t),
            _ => {
                let j = ((k - 2) / 2 + 1) as f64;
                let arg = 2.0 * PI * j * t;
                if k % 2 == 0 {
                    SQRT_2 * arg.cos()
                } else {
                    SQRT_2 * arg.sin()
                }
            }
        };
    }
}

/// The raw modified Fourier system `√3 t, √3 (1 − t), √2 cos 2πjt, √2 sin 2πjt, …`.
pub fn raw_modified_fourier(grid: &TimeGrid, count: usize) -> Result<Vec<FunctionSample>> {
    if count == 0 {
        return Err(Error::arg("basis size must be at least 1"));
    }
    Ok(sample_generator(grid, count, modified_fourier_at))
}

fn sample_generator(
    grid: &TimeGrid,
    count: usize,
    eval: impl Fn(f64, &mut [f64]),
) -> Vec<FunctionSample> {
    let mut out = vec![FunctionSample::zeros(grid.len()); count];
    let mut row = vec![0.0; count];
    for (j, &t) in grid.points().iter().enumerate() {
        eval(t, &mut row);
        for (f, v) in out.iter_mut().zip(&row) {
            f.values[j] = *v;
        }
    }
    out
}

/// Clamped knot vector for `count` cubic B-splines with uniform interior knots.
fn clamped_uniform_knots(count: usize) -> Vec<f64> {
    let spans = count + 1 - SPLINE_ORDER;
    let mut knots = vec![0.0; SPLINE_ORDER];
    knots.extend((1..spans).map(|i| i as f64 / spans as f64));
    knots.extend(std::iter::repeat_n(1.0, SPLINE_ORDER));
    knots
}

/// All `count` cubic B-spline values at `t` (de Boor triangle on the active span).
fn bspline_at(knots: &[f64], t: f64, out: &mut [f64]) {
    let count = out.len();
    let p = SPLINE_ORDER - 1;
    out.iter_mut().for_each(|o| *o = 0.0);
    // Active span `s` with knots[s] <= t < knots[s+1]; the last span is closed at 1.
    let s = knots[p..=count]
        .partition_point(|&k| k <= t)
        .saturating_sub(1)
        .min(count - 1 - p)
        + p;
    let mut n = [0.0; SPLINE_ORDER];
    let mut left = [0.0; SPLINE_ORDER];
    let mut right = [0.0; SPLINE_ORDER];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[s + 1 - j];
        right[j] = knots[s + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (r, v) in n.iter().enumerate() {
        out[s - p + r] = *v;
    }
}

/// Cubic clamped B-splines on uniform interior knots, before orthonormalization.
pub fn raw_bspline(grid: &TimeGrid, count: usize) -> Result<Vec<FunctionSample>> {
    if count < SPLINE_ORDER {
        return Err(Error::arg(format!(
            "a cubic B-spline basis needs at least {SPLINE_ORDER} functions, got {count}"
        )));
    }
    let knots = clamped_uniform_knots(count);
    Ok(sample_generator(grid, count, |t, out| bspline_at(&knots, t, out)))
}

/// Raw cubic B-spline values at arbitrary `t ∈ [0, 1]`.
pub fn bspline_values(count: usize, t: f64) -> Result<Vec<f64>> {
    if count < SPLINE_ORDER {
        return Err(Error::arg("a cubic B-spline basis needs at least 4 functions"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    let mut out = vec![0.0; count];
    bspline_at(&clamped_uniform_knots(count), t, &mut out);
    Ok(out)
}

/// Classical Gram–Schmidt of sampled functions, in list order, under the grid inner product.
///
/// The result evaluates off-grid by interpolating the raw samples.
pub fn gram_schmidt(raw: &[FunctionSample], grid: &TimeGrid) -> Result<OrthonormalBasis> {
    for f in raw {
        f.check_grid(grid)?;
    }
    let generator = Generator::Sampled {
        knots: grid.shared_points(),
        samples: raw.iter().map(|f| f.values.clone()).collect(),
    };
    orthonormalize(raw, grid, BasisKind::Empirical, generator)
}

fn orthonormalize(
    raw: &[FunctionSample],
    grid: &TimeGrid,
    kind: BasisKind,
    generator: Generator,
) -> Result<OrthonormalBasis> {
    let b = raw.len();
    if b == 0 {
        return Err(Error::arg("cannot orthonormalize an empty list"));
    }
    let w = grid.weights();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut coef = DMatrix::<f64>::zeros(b, b);

    for (k, f) in raw.iter().enumerate() {
        let mut v = f.values.clone();
        let mut c = vec![0.0; b];
        c[k] = 1.0;
        // Classical: all projections use the original raw function.
        let proj: Vec<f64> = q.iter().map(|qj| weighted_dot(&f.values, qj, w)).collect();
        for (j, p) in proj.iter().enumerate() {
            subtract_scaled(&mut v, &q[j], *p);
            for m in 0..b {
                c[m] -= p * coef[(m, j)];
            }
        }
        let norm = weighted_dot(&v, &v, w).max(0.0).sqrt();
        if norm < PIVOT_TOL {
            return Err(Error::DegenerateBasis(format!(
                "function {k} is linearly dependent on its predecessors (pivot norm {norm:e})"
            )));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        for m in 0..b {
            coef[(m, k)] = c[m] / norm;
        }
        q.push(v);
    }

    if gram_residual(&q, w) > REORTH_TOL {
        for k in 0..b {
            for j in 0..k {
                let p = weighted_dot(&q[k], &q[j], w);
                let (head, tail) = q.split_at_mut(k);
                subtract_scaled(&mut tail[0], &head[j], p);
                for m in 0..b {
                    let cj = coef[(m, j)];
                    coef[(m, k)] -= p * cj;
                }
            }
            let norm = weighted_dot(&q[k], &q[k], w).sqrt();
            if norm < PIVOT_TOL {
                return Err(Error::DegenerateBasis(format!(
                    "function {k} collapsed during re-orthogonalization"
                )));
            }
            q[k].iter_mut().for_each(|x| *x /= norm);
            for m in 0..b {
                coef[(m, k)] /= norm;
            }
        }
    }

    let mut basis = OrthonormalBasis {
        kind,
        generator,
        coefficients: coef,
        eval_matrix: DMatrix::zeros(0, 0),
    };
    // Same arithmetic as off-grid evaluation, so unwarped designs reproduce it bit for bit.
    basis.eval_matrix = basis.eval_unchecked(grid.points());
    Ok(basis)
}

fn subtract_scaled(v: &mut [f64], u: &[f64], s: f64) {
    for (a, b) in v.iter_mut().zip(u) {
        *a -= s * b;
    }
}

fn gram_residual(q: &[Vec<f64>], w: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, qj) in q.iter().enumerate() {
        for (k, qk) in q.iter().enumerate().skip(j) {
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((weighted_dot(qj, qk, w) - target).abs());
        }
    }
    worst
}

/// Largest deviation of the grid Gram matrix from the identity.
pub fn orthonormality_error(basis: &OrthonormalBasis, grid: &TimeGrid) -> f64 {
    let cols: Vec<Vec<f64>> = (0..basis.count())
        .map(|k| basis.eval_matrix.column(k).iter().copied().collect())
        .collect();
    gram_residual(&cols, grid.weights())
}
