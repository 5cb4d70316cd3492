//! Synthetic data: draws from the model itself, and value-warped data from a
//! mismatched generator.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::bspline_values;
use crate::error::{Error, Result};
use crate::grid::{FunctionSample, TimeGrid};
use crate::model::{build_bases, warped_design, ModelConfig, ModelState, PhasePrior};
use crate::phase::{sample_dirichlet_phase, uniform_knots, PhaseFunction};

/// Number of raw spline coefficients in the value-warped random effect.
pub const VALUE_WARPED_SPLINES: usize = 6;
/// Knots of the Dirichlet warps in the value-warped generator.
pub const VALUE_WARPED_KNOTS: usize = 5;
/// Dirichlet precision of simulated piecewise-linear warps.
pub const SIM_THETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Model draws with one-parameter warps.
    ModelParametric,
    /// Model draws with Dirichlet-increment warps.
    ModelDirichlet,
    /// `(μ + v_i) ∘ γ_i + ε_i` with `μ` from the fixed-effect library.
    ValueWarped { mu: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub n: usize,
    /// Number of equally spaced sample times.
    pub t: usize,
    pub generator: Generator,
    pub sigma2: f64,
    pub sigma_c2: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t < 2 {
            return Err(Error::arg("need at least one observation and two sample times"));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite())
            || !(self.sigma_c2 >= 0.0 && self.sigma_c2.is_finite())
        {
            return Err(Error::arg("simulation variances must be non-negative"));
        }
        if let Generator::ValueWarped { mu } = self.generator {
            fixed_effect(mu)?;
        }
        Ok(())
    }
}

/// Data drawn from the model, with the generating parameters.
#[derive(Debug, Clone)]
pub struct ModelSample {
    pub grid: TimeGrid,
    pub data: Vec<FunctionSample>,
    pub truth: ModelState,
    /// `Σ a_k φ_k` on the grid.
    pub mu: FunctionSample,
    /// Random-effect coefficients `c_i`.
    pub random_coefficients: Vec<Vec<f64>>,
}

fn normals<R: Rng>(rng: &mut R, count: usize, sd: f64) -> Vec<f64> {
    (0..count)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `f_i = Φ_i a + Φ̃_i c_i + ε_i`, `a ~ N(0, I)`, `c_i ~ N(0, σ_c² I)`, `ε_ij ~ N(0, σ² γ̇_i(t_j))`.
pub fn generate_from_model(spec: &SimSpec, config: &ModelConfig) -> Result<ModelSample> {
    spec.validate()?;
    let prior = match spec.generator {
        Generator::ModelParametric => PhasePrior::Parametric,
        Generator::ModelDirichlet => PhasePrior::Dirichlet,
        Generator::ValueWarped { .. } => {
            return Err(Error::arg("value-warped data come from generate_value_warped"))
        }
    };
    let grid = TimeGrid::uniform(spec.t)?;
    let bases = build_bases(config, &grid)?;
    let knots = config.phase_knots()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = normals(&mut rng, config.fixed_count, 1.0);
    let (sd, sd_c) = (spec.sigma2.sqrt(), spec.sigma_c2.sqrt());
    let mut data = Vec::with_capacity(spec.n);
    let mut phases = Vec::with_capacity(spec.n);
    let mut coefs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let gamma = match prior {
            PhasePrior::Parametric => PhaseFunction::parametric(rng.random_range(-1.0..1.0))?,
            PhasePrior::Dirichlet => sample_dirichlet_phase(config.theta, knots.clone(), &mut rng)?,
        };
        let c = normals(&mut rng, config.random_count, sd_c);
        let design = warped_design(&bases.fixed, &bases.random, &gamma, &grid)?;
        let mean = &design.phi * DVector::from_column_slice(&a)
            + &design.phi_tilde * DVector::from_column_slice(&c);
        let values = mean
            .iter()
            .zip(&design.gamma_dot)
            .map(|(m, g)| m + sd * g.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<f64>>();
        data.push(FunctionSample::new(values));
        phases.push(gamma);
        coefs.push(c);
    }
    let mu = bases.fixed.expand(&a)?;
    Ok(ModelSample {
        grid,
        data,
        truth: ModelState {
            a,
            sigma2: spec.sigma2,
            sigma_c2: spec.sigma_c2,
            phases,
        },
        mu,
        random_coefficients: coefs,
    })
}

/// One of the three fixed effects used with the value-warped generator.
pub fn fixed_effect(id: u8) -> Result<fn(f64) -> f64> {
    match id {
        1 => Ok(|t| ((3.0 * PI * t).sin() + 3.0 * PI * t) / 4.0),
        2 => Ok(|t| (-(t - 0.25).powi(2) / 0.04).exp() + (-(t - 0.75).powi(2) / 0.02).exp()),
        3 => Ok(|t| (2.0 * PI * t + PI / 2.0).cos()),
        _ => Err(Error::arg(format!("fixed effect id must be 1, 2 or 3, got {id}"))),
    }
}

pub fn fixed_effect_library(id: u8, grid: &TimeGrid) -> Result<FunctionSample> {
    Ok(FunctionSample::from_fn(grid, fixed_effect(id)?))
}

/// Value-warped data with the generating pieces.
#[derive(Debug, Clone)]
pub struct ValueWarpedSample {
    pub grid: TimeGrid,
    pub data: Vec<FunctionSample>,
    /// The fixed effect on the grid.
    pub mu: FunctionSample,
    pub phases: Vec<PhaseFunction>,
    /// Spline coefficients of each `v_i`.
    pub random_coefficients: Vec<Vec<f64>>,
}

/// `f_i(t) = (μ + v_i)(γ_i(t)) + ε_i(t)`.
///
/// `v_i` combines six raw cubic B-splines with `N(0, σ_c²)` coefficients,
/// `γ_i` has `Dirichlet(30 · spacings)` increments on five knots and
/// `ε_i(t) ~ N(0, σ²)`.
pub fn generate_value_warped(spec: &SimSpec, grid: &TimeGrid) -> Result<ValueWarpedSample> {
    spec.validate()?;
    let Generator::ValueWarped { mu: id } = spec.generator else {
        return Err(Error::arg("generate_value_warped needs the value-warped generator"));
    };
    if grid.len() != spec.t {
        return Err(Error::dim(format!(
            "grid has {} points, simulation asks for {}",
            grid.len(),
            spec.t
        )));
    }
    let mu_fn = fixed_effect(id)?;
    let knots = uniform_knots(VALUE_WARPED_KNOTS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (sd, sd_c) = (spec.sigma2.sqrt(), spec.sigma_c2.sqrt());
    let mut data = Vec::with_capacity(spec.n);
    let mut phases = Vec::with_capacity(spec.n);
    let mut coefs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = normals(&mut rng, VALUE_WARPED_SPLINES, sd_c);
        let gamma = sample_dirichlet_phase(SIM_THETA, knots.clone(), &mut rng)?;
        let mut values = Vec::with_capacity(grid.len());
        for &t in grid.points() {
            let s = gamma.value_at(t);
            let v: f64 = bspline_values(VALUE_WARPED_SPLINES, s)?
                .iter()
                .zip(&c)
                .map(|(b, ck)| b * ck)
                .sum();
            values.push(mu_fn(s) + v + sd * rng.sample::<f64, _>(StandardNormal));
        }
        data.push(FunctionSample::new(values));
        phases.push(gamma);
        coefs.push(c);
    }
    Ok(ValueWarpedSample {
        grid: grid.clone(),
        data,
        mu: FunctionSample::from_fn(grid, mu_fn),
        phases,
        random_coefficients: coefs,
    })
}

/// Pointwise average of the observations.
pub fn cross_sectional_mean(data: &[FunctionSample]) -> Result<FunctionSample> {
    let first = data.first().ok_or_else(|| Error::arg("dataset is empty"))?;
    let n = data.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for f in data {
        if f.len() != mean.len() {
            return Err(Error::dim("observations have different lengths"));
        }
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v / n;
        }
    }
    Ok(FunctionSample::new(mean))
}
