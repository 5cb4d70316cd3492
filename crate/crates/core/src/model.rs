//! Model configuration, the marginal likelihood with the random effect integrated
//! out, and the priors.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::{BasisKind, OrthonormalBasis};
use crate::dist::{dirichlet_ln_pdf, inv_gamma_ln_pdf, iso_normal_ln_pdf};
use crate::error::{Error, Result};
use crate::grid::{FunctionSample, TimeGrid};
use crate::phase::{to_increments, uniform_knots, PhaseFunction, PhaseIncrements};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which phase prior is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhasePrior {
    /// `γ(t) = t + α t (t − 1)` with `α ~ U(−1, 1)`.
    Parametric,
    /// Piecewise linear with `Dirichlet(θ · spacings)` increments.
    Dirichlet,
}

/// Inverse-gamma hyperparameters; density `∝ x^{-shape-1} exp(-scale / x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        inv_gamma_ln_pdf(x, self.shape, self.scale)
    }
}

impl Default for InvGamma {
    fn default() -> Self {
        Self {
            shape: 0.01,
            scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// `B_f`.
    pub fixed_count: usize,
    /// `B_r`.
    pub random_count: usize,
    pub fixed_kind: BasisKind,
    pub random_kind: BasisKind,
    pub phase_prior: PhasePrior,
    /// `T_γ`, the number of knots of piecewise-linear phases.
    pub phase_knot_count: usize,
    /// `θ_γ`.
    pub theta: f64,
    pub prior_var_a: f64,
    pub sigma2_prior: InvGamma,
    pub sigma_c2_prior: InvGamma,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fixed_count: 6,
            random_count: 6,
            fixed_kind: BasisKind::ModifiedFourier,
            random_kind: BasisKind::BSpline,
            phase_prior: PhasePrior::Parametric,
            phase_knot_count: 5,
            theta: 30.0,
            prior_var_a: 10_000.0,
            sigma2_prior: InvGamma::default(),
            sigma_c2_prior: InvGamma::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fixed_count == 0 || self.random_count == 0 {
            return Err(Error::arg("basis sizes must be at least 1"));
        }
        if self.phase_knot_count < 3 {
            return Err(Error::arg("piecewise-linear phases need at least 3 knots"));
        }
        let positive = [
            ("theta", self.theta),
            ("prior_var_a", self.prior_var_a),
            ("sigma2 shape", self.sigma2_prior.shape),
            ("sigma2 scale", self.sigma2_prior.scale),
            ("sigma_c2 shape", self.sigma_c2_prior.shape),
            ("sigma_c2 scale", self.sigma_c2_prior.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Uniform knots of the Dirichlet phase prior.
    pub fn phase_knots(&self) -> Result<Arc<[f64]>> {
        uniform_knots(self.phase_knot_count)
    }

    /// `θ_γ · spacings`.
    pub fn dirichlet_concentration(&self) -> Result<Vec<f64>> {
        Ok(PhaseIncrements::spacings(&self.phase_knots()?)
            .into_iter()
            .map(|s| self.theta * s)
            .collect())
    }

    /// The identity expressed in the representation the prior expects.
    pub fn identity_phase(&self) -> Result<PhaseFunction> {
        match self.phase_prior {
            PhasePrior::Parametric => Ok(PhaseFunction::identity()),
            PhasePrior::Dirichlet => {
                let knots = self.phase_knots()?;
                let values = knots.to_vec();
                PhaseFunction::piecewise_linear(knots, values)
            }
        }
    }
}

/// Grid with the fixed-effect and random-effect bases built on it.
#[derive(Debug, Clone)]
pub struct ModelBases {
    pub grid: TimeGrid,
    pub fixed: OrthonormalBasis,
    pub random: OrthonormalBasis,
}

pub fn build_bases(config: &ModelConfig, grid: &TimeGrid) -> Result<ModelBases> {
    config.validate()?;
    Ok(ModelBases {
        grid: grid.clone(),
        fixed: OrthonormalBasis::new(config.fixed_kind, config.fixed_count, grid)?,
        random: OrthonormalBasis::new(config.random_kind, config.random_count, grid)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub a: Vec<f64>,
    pub sigma2: f64,
    pub sigma_c2: f64,
    pub phases: Vec<PhaseFunction>,
}

impl ModelState {
    /// Fixed effect `Σ a_k φ_k` on the grid.
    pub fn mu(&self, bases: &ModelBases) -> Result<FunctionSample> {
        bases.fixed.expand(&self.a)
    }
}

/// Bases moved by one phase: rows `φ_k(γ(t_j)) √γ̇(t_j)`.
#[derive(Debug, Clone)]
pub struct WarpedDesign {
    pub phi: DMatrix<f64>,
    pub phi_tilde: DMatrix<f64>,
    pub gamma_dot: Vec<f64>,
    /// `Φ̃ᵀ diag(1/γ̇) Φ̃`.
    gram: DMatrix<f64>,
    ln_gamma_dot_sum: f64,
}

impl WarpedDesign {
    pub fn len(&self) -> usize {
        self.gamma_dot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_dot.is_empty()
    }
}

pub fn warped_design(
    fixed: &OrthonormalBasis,
    random: &OrthonormalBasis,
    gamma: &PhaseFunction,
    grid: &TimeGrid,
) -> Result<WarpedDesign> {
    let pts = grid.points();
    let times: Vec<f64> = pts.iter().map(|&t| gamma.value_at(t)).collect();
    let gamma_dot: Vec<f64> = pts.iter().map(|&t| gamma.slope_at(t)).collect();
    if let Some(d) = gamma_dot.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::DegeneratePhase(format!("phase slope {d} on the grid")));
    }
    let mut phi = fixed.eval_unchecked(&times);
    let mut phi_tilde = random.eval_unchecked(&times);
    for (j, d) in gamma_dot.iter().enumerate() {
        let s = d.sqrt();
        phi.row_mut(j).scale_mut(s);
        phi_tilde.row_mut(j).scale_mut(s);
    }
    let mut scaled = phi_tilde.clone();
    for (j, d) in gamma_dot.iter().enumerate() {
        scaled.row_mut(j).scale_mut(1.0 / d);
    }
    let gram = phi_tilde.transpose() * scaled;
    let ln_gamma_dot_sum = gamma_dot.iter().map(|d| d.ln()).sum();
    Ok(WarpedDesign {
        phi,
        phi_tilde,
        gamma_dot,
        gram,
        ln_gamma_dot_sum,
    })
}

fn check_dims(f: &FunctionSample, a: &[f64], design: &WarpedDesign) -> Result<()> {
    if f.len() != design.len() {
        return Err(Error::dim(format!(
            "observation has {} samples, design has {} rows",
            f.len(),
            design.len()
        )));
    }
    if a.len() != design.phi.ncols() {
        return Err(Error::dim(format!(
            "{} coefficients for {} fixed basis functions",
            a.len(),
            design.phi.ncols()
        )));
    }
    Ok(())
}

fn check_variances(sigma2: f64, sigma_c2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) || !(sigma_c2 >= 0.0 && sigma_c2.is_finite()) {
        return Err(Error::arg(format!(
            "variances must be positive (sigma2 = {sigma2}, sigma_c2 = {sigma_c2})"
        )));
    }
    Ok(())
}

fn residual(f: &FunctionSample, a: &[f64], design: &WarpedDesign) -> DVector<f64> {
    let fit = &design.phi * DVector::from_column_slice(a);
    DVector::from_iterator(f.len(), f.values.iter().zip(fit.iter()).map(|(y, m)| y - m))
}

/// `ln MVN(f; Φa, σ² diag(γ̇) + σ_c² Φ̃Φ̃ᵀ)`, choosing the cheapest exact path.
pub fn marginal_loglik_one(
    f: &FunctionSample,
    a: &[f64],
    sigma2: f64,
    sigma_c2: f64,
    design: &WarpedDesign,
) -> Result<f64> {
    let t = design.len();
    if sigma_c2 == 0.0 || 4 * design.phi_tilde.ncols() < t {
        marginal_loglik_woodbury(f, a, sigma2, sigma_c2, design)
    } else {
        marginal_loglik_dense(f, a, sigma2, sigma_c2, design)
    }
}

/// Dense path: Cholesky of the full `T × T` covariance.
pub fn marginal_loglik_dense(
    f: &FunctionSample,
    a: &[f64],
    sigma2: f64,
    sigma_c2: f64,
    design: &WarpedDesign,
) -> Result<f64> {
    check_dims(f, a, design)?;
    check_variances(sigma2, sigma_c2)?;
    let t = design.len();
    let mut cov = &design.phi_tilde * design.phi_tilde.transpose() * sigma_c2;
    for (j, d) in design.gamma_dot.iter().enumerate() {
        cov[(j, j)] += sigma2 * d;
    }
    let chol = match Cholesky::new(cov.clone()) {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * cov.trace() / t as f64;
            for j in 0..t {
                cov[(j, j)] += jitter;
            }
            Cholesky::new(cov).ok_or_else(|| {
                Error::Numerical("marginal covariance is not positive definite".into())
            })?
        }
    };
    let r = residual(f, a, design);
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (t as f64 * LN_2PI + logdet + z.norm_squared()))
}

/// Woodbury path: only a `B_r × B_r` system is factorized.
pub fn marginal_loglik_woodbury(
    f: &FunctionSample,
    a: &[f64],
    sigma2: f64,
    sigma_c2: f64,
    design: &WarpedDesign,
) -> Result<f64> {
    check_dims(f, a, design)?;
    check_variances(sigma2, sigma_c2)?;
    let t = design.len() as f64;
    let r = residual(f, a, design);
    let r_scaled = DVector::from_iterator(
        r.len(),
        r.iter().zip(&design.gamma_dot).map(|(v, d)| v / d),
    );
    let diag_quad = r.dot(&r_scaled) / sigma2;
    let mut logdet = t * sigma2.ln() + design.ln_gamma_dot_sum;
    if sigma_c2 == 0.0 {
        return Ok(-0.5 * (t * LN_2PI + logdet + diag_quad));
    }
    let br = design.phi_tilde.ncols();
    let mut m = &design.gram / sigma2;
    for k in 0..br {
        m[(k, k)] += 1.0 / sigma_c2;
    }
    let chol = Cholesky::new(m)
        .ok_or_else(|| Error::Numerical("Woodbury capacitance is not positive definite".into()))?;
    let u = design.phi_tilde.transpose() * r_scaled / sigma2;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&u)
        .ok_or_else(|| Error::Numerical("singular capacitance factor".into()))?;
    logdet += br as f64 * sigma_c2.ln()
        + 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (t * LN_2PI + logdet + diag_quad - w.norm_squared()))
}

/// `Σ_i` of the marginal log-likelihoods, each with its own warped design.
pub fn total_loglik(
    dataset: &[FunctionSample],
    state: &ModelState,
    bases: &ModelBases,
) -> Result<f64> {
    if dataset.len() != state.phases.len() {
        return Err(Error::dim(format!(
            "{} observations but {} phases",
            dataset.len(),
            state.phases.len()
        )));
    }
    let mut total = 0.0;
    for (f, gamma) in dataset.iter().zip(&state.phases) {
        let design = warped_design(&bases.fixed, &bases.random, gamma, &bases.grid)?;
        total += marginal_loglik_one(f, &state.a, state.sigma2, state.sigma_c2, &design)?;
    }
    Ok(total)
}

/// Log prior density of one phase; `-∞` outside the support.
pub fn phase_log_prior(gamma: &PhaseFunction, config: &ModelConfig) -> f64 {
    match config.phase_prior {
        PhasePrior::Parametric => match gamma.alpha() {
            Some(a) if a.abs() < 1.0 => 0.0,
            _ => f64::NEG_INFINITY,
        },
        PhasePrior::Dirichlet => {
            let (Ok(knots), Ok(conc)) = (config.phase_knots(), config.dirichlet_concentration())
            else {
                return f64::NEG_INFINITY;
            };
            match to_increments(gamma, knots) {
                Ok(inc) => dirichlet_ln_pdf(&inc.deltas, &conc),
                Err(_) => f64::NEG_INFINITY,
            }
        }
    }
}

/// Sum of the coefficient, variance and phase log priors.
pub fn log_prior(state: &ModelState, config: &ModelConfig) -> f64 {
    let mut lp = iso_normal_ln_pdf(&state.a, config.prior_var_a)
        + config.sigma2_prior.ln_pdf(state.sigma2)
        + config.sigma_c2_prior.ln_pdf(state.sigma_c2);
    for gamma in &state.phases {
        lp += phase_log_prior(gamma, config);
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}
