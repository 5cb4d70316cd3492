//! Adaptive Metropolis-Hastings sampler for the marginalized model.
//!
//! One sweep updates `a`, then `σ²`, then `σ_c²`, then every phase in index
//! order. Proposal scales adapt every `N_t` iterations during burn-in and are
//! frozen afterwards.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dist::{dirichlet_ln_pdf, normal_cdf, sample_dirichlet, sample_positive_normal};
use crate::error::{Error, Result};
use crate::fpca::{align_to_template, centered_mean, AlignFamily};
use crate::grid::FunctionSample;
use crate::model::{
    marginal_loglik_one, warped_design, ModelBases, ModelConfig, ModelState, PhasePrior,
    WarpedDesign,
};
use crate::phase::{
    act_norm_preserving, from_increments, to_increments, PhaseFunction, PhaseIncrements,
};

/// Ridge added to the adapted coefficient proposal covariance.
const SIGMA_A_RIDGE: f64 = 1e-10;
/// Multiplicative step used by every scalar adaptation.
const ADAPT_FACTOR: f64 = 1.1;
const ALPHA_PROP_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalConfig {
    /// Random-walk covariance of `a`.
    pub sigma_a: DMatrix<f64>,
    /// Extra multiplier on the empirical covariance, steered toward the vector target.
    pub a_scale: f64,
    pub tau2_sigma: f64,
    pub tau2_sigma_c: f64,
    /// Half-width of the uniform window for `α_i`.
    pub delta: f64,
    /// Concentration of the Dirichlet warp composed into `γ_i`.
    pub alpha_prop: f64,
    /// `N_t`.
    pub adapt_interval: usize,
    pub target_scalar: f64,
    pub target_vector: f64,
}

impl ProposalConfig {
    pub fn new(fixed_count: usize) -> Self {
        Self {
            sigma_a: DMatrix::identity(fixed_count, fixed_count) * 1e-3,
            a_scale: 1.0,
            tau2_sigma: 1e-2,
            tau2_sigma_c: 1e-2,
            delta: 0.1,
            alpha_prop: 1000.0,
            adapt_interval: 500,
            target_scalar: 0.44,
            target_vector: 0.23,
        }
    }

    /// Step sizes scaled to a starting state.
    pub fn for_state(state: &ModelState) -> Self {
        let mut p = Self::new(state.a.len());
        p.tau2_sigma = (0.05 * state.sigma2).powi(2);
        p.tau2_sigma_c = (0.05 * state.sigma_c2.max(1e-6)).powi(2);
        p
    }

    pub fn validate(&self, fixed_count: usize) -> Result<()> {
        if self.sigma_a.nrows() != fixed_count || self.sigma_a.ncols() != fixed_count {
            return Err(Error::dim(format!(
                "proposal covariance is {}x{} for {fixed_count} coefficients",
                self.sigma_a.nrows(),
                self.sigma_a.ncols()
            )));
        }
        let scalars = [
            ("a_scale", self.a_scale),
            ("tau2_sigma", self.tau2_sigma),
            ("tau2_sigma_c", self.tau2_sigma_c),
            ("delta", self.delta),
            ("alpha_prop", self.alpha_prop),
            ("target_scalar", self.target_scalar),
            ("target_vector", self.target_vector),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if self.adapt_interval == 0 {
            return Err(Error::arg("adaptation interval must be at least 1"));
        }
        Ok(())
    }
}

/// Which parameter blocks are updated; frozen blocks keep their starting value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub a: bool,
    pub sigma2: bool,
    pub sigma_c2: bool,
    pub phases: bool,
}

impl Default for Blocks {
    fn default() -> Self {
        Self {
            a: true,
            sigma2: true,
            sigma_c2: true,
            phases: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    /// `N`, iterations including burn-in.
    pub total: usize,
    /// `N_b`.
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub blocks: Blocks,
}

impl ChainConfig {
    pub fn new(total: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        Self {
            total,
            burn_in,
            thin,
            seed,
            blocks: Blocks::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.total {
            return Err(Error::arg("burn-in exceeds the total number of iterations"));
        }
        if self.thin == 0 {
            return Err(Error::arg("thinning interval must be at least 1"));
        }
        Ok(())
    }

    /// Number of draws that will be stored.
    pub fn kept(&self) -> usize {
        (self.total - self.burn_in) / self.thin
    }
}

/// Proposal and acceptance counts for one block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    /// Acceptance rate, or `None` before any proposal.
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub a: Counter,
    pub sigma2: Counter,
    pub sigma_c2: Counter,
    /// Pooled over observations.
    pub phases: Counter,
}

impl AcceptanceStats {
    /// Counts accumulated after the snapshot `earlier` was taken.
    fn since(&self, earlier: &AcceptanceStats) -> AcceptanceStats {
        let diff = |x: Counter, y: Counter| Counter {
            proposed: x.proposed - y.proposed,
            accepted: x.accepted - y.accepted,
        };
        AcceptanceStats {
            a: diff(self.a, earlier.a),
            sigma2: diff(self.sigma2, earlier.sigma2),
            sigma_c2: diff(self.sigma_c2, earlier.sigma_c2),
            phases: diff(self.phases, earlier.phases),
        }
    }
}

/// Kept draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// Iteration number (1-based) of each kept draw.
    pub iterations: Vec<usize>,
    pub a: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub sigma_c2: Vec<f64>,
    /// `phases[j][i]` is the phase of observation `i` in draw `j`.
    pub phases: Vec<Vec<PhaseFunction>>,
    /// Acceptance counts over the whole run.
    pub acceptance: AcceptanceStats,
    /// Acceptance counts after burn-in.
    pub acceptance_post_burn: AcceptanceStats,
    pub proposal: ProposalConfig,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn observations(&self) -> usize {
        self.phases.first().map_or(0, Vec::len)
    }
}

/// Per-observation log-likelihood used by the sampler.
pub trait Likelihood {
    fn loglik(
        &self,
        f: &FunctionSample,
        a: &[f64],
        sigma2: f64,
        sigma_c2: f64,
        design: &WarpedDesign,
    ) -> Result<f64>;
}

/// The marginal Gaussian likelihood with the random effect integrated out.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarginalLikelihood;

impl Likelihood for MarginalLikelihood {
    fn loglik(
        &self,
        f: &FunctionSample,
        a: &[f64],
        sigma2: f64,
        sigma_c2: f64,
        design: &WarpedDesign,
    ) -> Result<f64> {
        marginal_loglik_one(f, a, sigma2, sigma_c2, design)
    }
}

/// Constant likelihood; the chain then targets the prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatLikelihood;

impl Likelihood for FlatLikelihood {
    fn loglik(&self, _: &FunctionSample, _: &[f64], _: f64, _: f64, _: &WarpedDesign) -> Result<f64> {
        Ok(0.0)
    }
}

/// Outcome of one Metropolis-Hastings proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveRecord<C> {
    pub candidate: C,
    /// Log acceptance ratio; `-∞` for out-of-support or failed candidates.
    pub log_ratio: f64,
    pub log_u: f64,
    pub accepted: bool,
}

/// `Σ_j ln (γ_ref⁻¹)'(S_j)` over the free coordinates `j = 1..K−1`, where `S_j`
/// are the cumulative sums of `inc`.
///
/// This is the log-determinant of the map from the increments of
/// `γ_ref ∘ γ̃` to the increments of `γ̃`. The last cumulative sum is pinned at
/// one by the simplex constraint and contributes no factor.
pub fn jacobian_logdet(gamma_ref: &PhaseFunction, inc: &PhaseIncrements) -> Result<f64> {
    let cum = inc.cumulative();
    let free = &cum[..cum.len().saturating_sub(1)];
    match gamma_ref.alpha() {
        Some(alpha) => Ok(free
            .iter()
            .map(|&s| -gamma_ref.slope_at(parametric_inverse(alpha, s)).ln())
            .sum()),
        None => {
            let inv = gamma_ref.exact_inverse()?;
            Ok(free.iter().map(|&s| inv.slope_at(s).ln()).sum())
        }
    }
}

/// Solves `t + α t (t − 1) = s` on `[0, 1]`.
fn parametric_inverse(alpha: f64, s: f64) -> f64 {
    if alpha.abs() < 1e-12 {
        return s;
    }
    // α t² + (1 − α) t − s = 0, stable root.
    let b = 1.0 - alpha;
    let disc = (b * b + 4.0 * alpha * s).max(0.0).sqrt();
    (2.0 * s / (b + disc)).clamp(0.0, 1.0)
}

/// `(2.38² / B) · scale · cov(window) + ridge · I`; a constant window gives the ridge only.
pub fn empirical_proposal_covariance(window: &[Vec<f64>], scale: f64) -> Result<DMatrix<f64>> {
    let b = window
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::arg("empty adaptation window"))?;
    let n = window.len() as f64;
    let mut mean = DVector::zeros(b);
    for a in window {
        mean += DVector::from_column_slice(a);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(b, b);
    for a in window {
        let d = DVector::from_column_slice(a) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    let denom = (n - 1.0).max(1.0);
    let mut out = cov * (2.38 * 2.38 / b as f64 * scale / denom);
    for k in 0..b {
        out[(k, k)] += SIGMA_A_RIDGE;
    }
    Ok(out)
}

fn step_factor(rate: Option<f64>, target: f64) -> f64 {
    match rate {
        Some(r) if r > target => ADAPT_FACTOR,
        Some(r) if r < target => 1.0 / ADAPT_FACTOR,
        _ => 1.0,
    }
}

/// One adaptation: scalar steps move by a factor 1.1 toward their acceptance
/// targets and `Σ_a` is re-estimated from the window of `a` draws.
///
/// `Σ_a` is only re-estimated when the window holds at least `2 B_f` accepted
/// coefficient moves; otherwise it is rescaled with `a_scale`.
pub fn adapt(
    prop: &ProposalConfig,
    window: &AcceptanceStats,
    a_window: &[Vec<f64>],
    phase_knot_count: usize,
) -> ProposalConfig {
    let mut next = prop.clone();
    let up = |c: &Counter| step_factor(c.rate(), prop.target_scalar);

    let fa = step_factor(window.a.rate(), prop.target_vector);
    next.a_scale = prop.a_scale * fa;
    let b = prop.sigma_a.nrows();
    let enough = window.a.accepted as usize >= 2 * b && a_window.len() >= 2;
    next.sigma_a = match enough {
        true => empirical_proposal_covariance(a_window, next.a_scale)
            .unwrap_or_else(|_| prop.sigma_a.clone() * fa),
        false => prop.sigma_a.clone() * fa,
    };

    next.tau2_sigma = prop.tau2_sigma * up(&window.sigma2);
    next.tau2_sigma_c = prop.tau2_sigma_c * up(&window.sigma_c2);
    let fp = up(&window.phases);
    next.delta = (prop.delta * fp).min(1.0);
    next.alpha_prop = (prop.alpha_prop / fp).clamp(phase_knot_count as f64, ALPHA_PROP_MAX);
    next
}

fn lower_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c.unpack());
    }
    let b = cov.nrows();
    let jitter = 1e-10 * cov.trace().abs().max(1e-300) / b as f64;
    let mut j = cov.clone();
    for k in 0..b {
        j[(k, k)] += jitter;
    }
    Cholesky::new(j)
        .map(Cholesky::unpack)
        .ok_or_else(|| Error::Numerical("proposal covariance is not positive definite".into()))
}

/// A running chain with cached designs and per-observation log-likelihoods.
pub struct Chain<'a, L: Likelihood> {
    data: &'a [FunctionSample],
    bases: &'a ModelBases,
    config: &'a ModelConfig,
    likelihood: L,
    state: ModelState,
    prop: ProposalConfig,
    a_factor: DMatrix<f64>,
    designs: Vec<WarpedDesign>,
    logliks: Vec<f64>,
    rng: ChaCha8Rng,
    blocks: Blocks,
    knots: Arc<[f64]>,
    prior_conc: Vec<f64>,
    stats: AcceptanceStats,
    window: AcceptanceStats,
    a_window: Vec<Vec<f64>>,
    adapting: bool,
}

impl<'a, L: Likelihood> Chain<'a, L> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: &'a [FunctionSample],
        bases: &'a ModelBases,
        config: &'a ModelConfig,
        likelihood: L,
        state: ModelState,
        prop: ProposalConfig,
        seed: u64,
        blocks: Blocks,
    ) -> Result<Self> {
        config.validate()?;
        prop.validate(config.fixed_count)?;
        if data.is_empty() {
            return Err(Error::arg("dataset is empty"));
        }
        if state.phases.len() != data.len() {
            return Err(Error::dim(format!(
                "{} phases for {} observations",
                state.phases.len(),
                data.len()
            )));
        }
        if state.a.len() != config.fixed_count {
            return Err(Error::dim("initial coefficient vector has the wrong length"));
        }
        for f in data {
            f.check_grid(&bases.grid)?;
        }
        let knots = config.phase_knots()?;
        let prior_conc = config.dirichlet_concentration()?;
        let mut designs = Vec::with_capacity(data.len());
        let mut logliks = Vec::with_capacity(data.len());
        for (f, g) in data.iter().zip(&state.phases) {
            if config.phase_prior == PhasePrior::Dirichlet {
                to_increments(g, Arc::clone(&knots))?;
            }
            let d = warped_design(&bases.fixed, &bases.random, g, &bases.grid)?;
            let ll = likelihood.loglik(f, &state.a, state.sigma2, state.sigma_c2, &d)?;
            if !ll.is_finite() {
                return Err(Error::Numerical("initial state has non-finite likelihood".into()));
            }
            designs.push(d);
            logliks.push(ll);
        }
        if !crate::model::log_prior(&state, config).is_finite() {
            return Err(Error::arg("initial state is outside the prior support"));
        }
        let a_factor = lower_factor(&prop.sigma_a)?;
        Ok(Self {
            data,
            bases,
            config,
            likelihood,
            state,
            prop,
            a_factor,
            designs,
            logliks,
            rng: ChaCha8Rng::seed_from_u64(seed),
            blocks,
            knots,
            prior_conc,
            stats: AcceptanceStats::default(),
            window: AcceptanceStats::default(),
            a_window: Vec::new(),
            adapting: false,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn proposal(&self) -> &ProposalConfig {
        &self.prop
    }

    pub fn stats(&self) -> &AcceptanceStats {
        &self.stats
    }

    /// Cached log-likelihood of each observation at the current state.
    pub fn logliks(&self) -> &[f64] {
        &self.logliks
    }

    fn log_u(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        u.ln()
    }

    fn record<C>(&mut self, candidate: C, log_ratio: f64) -> MoveRecord<C> {
        let log_u = self.log_u();
        let accepted = log_ratio.is_finite() && log_u < log_ratio;
        MoveRecord {
            candidate,
            log_ratio,
            log_u,
            accepted,
        }
    }

    /// Likelihoods of every observation under new `a`/variances with current designs.
    fn all_logliks(&self, a: &[f64], sigma2: f64, sigma_c2: f64) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.data.len());
        for (f, d) in self.data.iter().zip(&self.designs) {
            match self.likelihood.loglik(f, a, sigma2, sigma_c2, d) {
                Ok(v) if v.is_finite() => out.push(v),
                _ => return None,
            }
        }
        Some(out)
    }

    fn total(&self) -> f64 {
        self.logliks.iter().sum()
    }

    /// Random-walk update of `a` with covariance `Σ_a`.
    pub fn step_a(&mut self) -> MoveRecord<Vec<f64>> {
        let b = self.state.a.len();
        let z = DVector::from_fn(b, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let step = &self.a_factor * z;
        let can: Vec<f64> = self.state.a.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        let var = self.config.prior_var_a;
        let ss = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let prior_diff = -0.5 * (ss(&can) - ss(&self.state.a)) / var;
        let lls = self.all_logliks(&can, self.state.sigma2, self.state.sigma_c2);
        let log_ratio = match &lls {
            Some(v) => v.iter().sum::<f64>() - self.total() + prior_diff,
            None => f64::NEG_INFINITY,
        };
        let rec = self.record(can, log_ratio);
        if rec.accepted {
            self.state.a.clone_from(&rec.candidate);
            self.logliks = lls.unwrap();
        }
        self.stats.a.record(rec.accepted);
        self.window.a.record(rec.accepted);
        if self.adapting {
            self.a_window.push(self.state.a.clone());
        }
        rec
    }

    /// Truncated-normal random walk on `σ²` (`which_c = false`) or `σ_c²`.
    pub fn step_variance(&mut self, which_c: bool) -> MoveRecord<f64> {
        let (cur, tau2) = if which_c {
            (self.state.sigma_c2, self.prop.tau2_sigma_c)
        } else {
            (self.state.sigma2, self.prop.tau2_sigma)
        };
        let tau = tau2.sqrt();
        let can = sample_positive_normal(cur, tau, &mut self.rng);
        let (log_ratio, lls) = self.variance_log_ratio(which_c, cur, can, tau);
        let rec = self.record(can, log_ratio);
        if rec.accepted {
            if which_c {
                self.state.sigma_c2 = can;
            } else {
                self.state.sigma2 = can;
            }
            self.logliks = lls.unwrap();
        }
        let counter = if which_c {
            (&mut self.stats.sigma_c2, &mut self.window.sigma_c2)
        } else {
            (&mut self.stats.sigma2, &mut self.window.sigma2)
        };
        counter.0.record(rec.accepted);
        counter.1.record(rec.accepted);
        rec
    }

    /// Log acceptance ratio of a variance move, with the candidate's likelihoods.
    pub fn variance_log_ratio(
        &self,
        which_c: bool,
        cur: f64,
        can: f64,
        tau: f64,
    ) -> (f64, Option<Vec<f64>>) {
        if !(can > 0.0) {
            return (f64::NEG_INFINITY, None);
        }
        let prior = if which_c {
            self.config.sigma_c2_prior
        } else {
            self.config.sigma2_prior
        };
        let (s2, sc2) = if which_c {
            (self.state.sigma2, can)
        } else {
            (can, self.state.sigma_c2)
        };
        let Some(lls) = self.all_logliks(&self.state.a, s2, sc2) else {
            return (f64::NEG_INFINITY, None);
        };
        let correction = normal_cdf(cur / tau).ln() - normal_cdf(can / tau).ln();
        let r = lls.iter().sum::<f64>() - self.total() + prior.ln_pdf(can) - prior.ln_pdf(cur)
            + correction;
        (r, Some(lls))
    }

    /// Uniform-window update of `α_i`.
    pub fn step_alpha(&mut self, i: usize) -> Result<MoveRecord<f64>> {
        let cur = self.state.phases[i]
            .alpha()
            .ok_or_else(|| Error::arg("alpha updates need parametric phases"))?;
        let delta = self.prop.delta;
        let can = cur + self.rng.random_range(-delta..delta);
        Ok(self.apply_alpha(i, can))
    }

    /// Evaluates and accepts or rejects a given `α_i` candidate.
    pub fn apply_alpha(&mut self, i: usize, can: f64) -> MoveRecord<f64> {
        let mut new = None;
        let log_ratio = match PhaseFunction::parametric(can) {
            Ok(g) => match self.phase_loglik(i, &g) {
                Some((d, ll)) => {
                    let r = ll - self.logliks[i];
                    new = Some((g, d, ll));
                    r
                }
                None => f64::NEG_INFINITY,
            },
            Err(_) => f64::NEG_INFINITY,
        };
        let rec = self.record(can, log_ratio);
        if rec.accepted {
            self.commit_phase(i, new.unwrap());
        }
        self.stats.phases.record(rec.accepted);
        self.window.phases.record(rec.accepted);
        rec
    }

    fn phase_loglik(&self, i: usize, g: &PhaseFunction) -> Option<(WarpedDesign, f64)> {
        let d = warped_design(&self.bases.fixed, &self.bases.random, g, &self.bases.grid).ok()?;
        let ll = self
            .likelihood
            .loglik(&self.data[i], &self.state.a, self.state.sigma2, self.state.sigma_c2, &d)
            .ok()?;
        ll.is_finite().then_some((d, ll))
    }

    fn commit_phase(&mut self, i: usize, (g, d, ll): (PhaseFunction, WarpedDesign, f64)) {
        self.state.phases[i] = g;
        self.designs[i] = d;
        self.logliks[i] = ll;
    }

    /// Right-composition update `γ_can = γ_cur ∘ γ̃` with Dirichlet increments for `γ̃`.
    pub fn step_gamma(&mut self, i: usize) -> Result<MoveRecord<PhaseFunction>> {
        let conc: Vec<f64> = PhaseIncrements::spacings(&self.knots)
            .iter()
            .map(|s| self.prop.alpha_prop * s)
            .collect();
        let deltas = sample_dirichlet(&conc, &mut self.rng);
        let tilde = from_increments(&PhaseIncrements {
            deltas,
            knots: Arc::clone(&self.knots),
        });
        let cur = &self.state.phases[i];
        let can = tilde.and_then(|t| {
            let values = t.values().unwrap().iter().map(|&v| cur.value_at(v)).collect();
            PhaseFunction::piecewise_linear(Arc::clone(&self.knots), values)
        });
        Ok(match can {
            Ok(can) => self.apply_gamma(i, can),
            Err(_) => {
                let rec = self.record(self.state.phases[i].clone(), f64::NEG_INFINITY);
                self.stats.phases.record(false);
                self.window.phases.record(false);
                rec
            }
        })
    }

    /// Proposal log-ratio `ln q(cur | can) − ln q(can | cur)` for the composition move.
    pub fn gamma_proposal_log_ratio(
        &self,
        cur: &PhaseFunction,
        can: &PhaseFunction,
    ) -> Result<f64> {
        gamma_proposal_log_ratio(cur, can, &self.knots, self.prop.alpha_prop)
    }

    /// Evaluates and accepts or rejects a given piecewise-linear candidate for `γ_i`.
    pub fn apply_gamma(&mut self, i: usize, can: PhaseFunction) -> MoveRecord<PhaseFunction> {
        let mut new = None;
        let log_ratio = (|| {
            let cur = &self.state.phases[i];
            let inc_cur = to_increments(cur, Arc::clone(&self.knots)).ok()?;
            let inc_can = to_increments(&can, Arc::clone(&self.knots)).ok()?;
            let prior = dirichlet_ln_pdf(&inc_can.deltas, &self.prior_conc)
                - dirichlet_ln_pdf(&inc_cur.deltas, &self.prior_conc);
            let q = self.gamma_proposal_log_ratio(cur, &can).ok()?;
            let (d, ll) = self.phase_loglik(i, &can)?;
            let r = ll - self.logliks[i] + prior + q;
            new = Some((can.clone(), d, ll));
            Some(r)
        })()
        .unwrap_or(f64::NEG_INFINITY);
        let rec = self.record(can, log_ratio);
        if rec.accepted {
            self.commit_phase(i, new.unwrap());
        }
        self.stats.phases.record(rec.accepted);
        self.window.phases.record(rec.accepted);
        rec
    }

    /// One full sweep in the fixed block order.
    pub fn sweep(&mut self) -> Result<()> {
        if self.blocks.a {
            self.step_a();
        }
        if self.blocks.sigma2 {
            self.step_variance(false);
        }
        if self.blocks.sigma_c2 {
            self.step_variance(true);
        }
        if self.blocks.phases {
            for i in 0..self.data.len() {
                match self.config.phase_prior {
                    PhasePrior::Parametric => {
                        self.step_alpha(i)?;
                    }
                    PhasePrior::Dirichlet => {
                        self.step_gamma(i)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies one adaptation from the current window and clears it.
    pub fn adapt_now(&mut self) -> Result<()> {
        self.prop = adapt(
            &self.prop,
            &self.window,
            &self.a_window,
            self.config.phase_knot_count,
        );
        self.a_factor = lower_factor(&self.prop.sigma_a)?;
        self.window = AcceptanceStats::default();
        self.a_window.clear();
        Ok(())
    }

    /// Runs the schedule and collects the kept draws.
    pub fn run(mut self, chain: &ChainConfig) -> Result<PosteriorDraws> {
        chain.validate()?;
        let kept = chain.kept();
        let n_t = self.prop.adapt_interval;
        let mut draws = PosteriorDraws {
            iterations: Vec::with_capacity(kept),
            a: Vec::with_capacity(kept),
            sigma2: Vec::with_capacity(kept),
            sigma_c2: Vec::with_capacity(kept),
            phases: Vec::with_capacity(kept),
            acceptance: AcceptanceStats::default(),
            acceptance_post_burn: AcceptanceStats::default(),
            proposal: self.prop.clone(),
            seed: chain.seed,
        };
        let mut burn_stats = AcceptanceStats::default();
        let at = |iteration: usize| move |e: Error| Error::Chain {
            iteration,
            source: Box::new(e),
        };
        for j in 1..=chain.total {
            if j < chain.burn_in && j % n_t == 0 {
                self.adapt_now().map_err(at(j))?;
            }
            self.adapting = j < chain.burn_in;
            if j == chain.burn_in + 1 {
                burn_stats = self.stats;
                self.a_window = Vec::new();
            }
            self.sweep().map_err(at(j))?;
            if j > chain.burn_in && (j - chain.burn_in).is_multiple_of(chain.thin) {
                draws.iterations.push(j);
                draws.a.push(self.state.a.clone());
                draws.sigma2.push(self.state.sigma2);
                draws.sigma_c2.push(self.state.sigma_c2);
                draws.phases.push(self.state.phases.clone());
            }
        }
        if chain.total <= chain.burn_in {
            burn_stats = self.stats;
        }
        draws.acceptance = self.stats;
        draws.acceptance_post_burn = self.stats.since(&burn_stats);
        draws.proposal = self.prop;
        Ok(draws)
    }
}

/// `ln q(cur | can) − ln q(can | cur)` for `γ_can = γ_cur ∘ γ̃`, `γ̃ ~ Dirichlet(α_prop · spacings)`.
pub fn gamma_proposal_log_ratio(
    cur: &PhaseFunction,
    can: &PhaseFunction,
    knots: &Arc<[f64]>,
    alpha_prop: f64,
) -> Result<f64> {
    let conc: Vec<f64> = PhaseIncrements::spacings(knots)
        .iter()
        .map(|s| alpha_prop * s)
        .collect();
    let inc_cur = to_increments(cur, Arc::clone(knots))?;
    let inc_can = to_increments(can, Arc::clone(knots))?;
    // Forward warp γ̃ = γ_cur⁻¹ ∘ γ_can and reverse warp γ̃' = γ_can⁻¹ ∘ γ_cur on the knots.
    let cur_inv = cur.exact_inverse()?;
    let can_inv = can.exact_inverse()?;
    let forward = warp_increments(&cur_inv, can, knots)?;
    let reverse = warp_increments(&can_inv, cur, knots)?;
    Ok(dirichlet_ln_pdf(&reverse, &conc) + jacobian_logdet(can, &inc_cur)?
        - dirichlet_ln_pdf(&forward, &conc)
        - jacobian_logdet(cur, &inc_can)?)
}

/// Increments on `knots` of `outer ∘ inner`.
fn warp_increments(
    outer: &PhaseFunction,
    inner: &PhaseFunction,
    knots: &[f64],
) -> Result<Vec<f64>> {
    let vals: Vec<f64> = knots
        .iter()
        .map(|&t| outer.value_at(inner.value_at(t)))
        .collect();
    let k = knots.len() - 1;
    let mut deltas: Vec<f64> = vals.windows(2).take(k - 1).map(|w| w[1] - w[0]).collect();
    let used: f64 = deltas.iter().sum();
    deltas.push(1.0 - used);
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::DegeneratePhase("proposal warp is not increasing".into()));
    }
    Ok(deltas)
}

/// Alignment rounds used to build the starting template.
const INIT_ALIGN_ROUNDS: usize = 10;

/// A data-driven starting point.
///
/// The template is the alignment-based centered mean, projected onto the fixed
/// basis to give `a`. Each phase is the warp of that template closest to its
/// observation, restricted to the prior's family. Both variances start at half
/// the mean squared residual left after warping.
pub fn initial_state(
    data: &[FunctionSample],
    bases: &ModelBases,
    config: &ModelConfig,
) -> Result<ModelState> {
    if data.is_empty() {
        return Err(Error::arg("dataset is empty"));
    }
    let grid = &bases.grid;
    for f in data {
        f.check_grid(grid)?;
    }
    let family = match config.phase_prior {
        PhasePrior::Parametric => AlignFamily::Pm1Grid,
        PhasePrior::Dirichlet => AlignFamily::PiecewiseCd,
    };
    let template = centered_mean(data, grid, INIT_ALIGN_ROUNDS, family)?.mean;
    let a = (0..config.fixed_count)
        .map(|k| crate::grid::inner_product(&template, &bases.fixed.function(k), grid))
        .collect::<Result<Vec<f64>>>()?;
    let mu = bases.fixed.expand(&a)?;
    let knots = config.phase_knots()?;
    let mut phases = Vec::with_capacity(data.len());
    let mut spread = 0.0;
    for f in data {
        let (g, _) = align_to_template(&mu, f, grid, family)?;
        let g = match config.phase_prior {
            PhasePrior::Parametric => g,
            // Resample onto the prior's knots; fall back to the identity if
            // that leaves an increment too small for the Dirichlet density.
            PhasePrior::Dirichlet => {
                let mut v = g.values_at(&knots);
                v[0] = 0.0;
                *v.last_mut().unwrap() = 1.0;
                PhaseFunction::piecewise_linear(knots.clone(), v)
                    .ok()
                    .filter(|p| to_increments(p, knots.clone()).is_ok())
                    .unwrap_or(config.identity_phase()?)
            }
        };
        let fit = act_norm_preserving(&mu, &g, grid)?;
        spread += f
            .values
            .iter()
            .zip(&fit.values)
            .map(|(v, m)| (v - m).powi(2))
            .sum::<f64>();
        phases.push(g);
    }
    let var = (spread / (data.len() * grid.len()) as f64).max(1e-6);
    Ok(ModelState {
        a,
        sigma2: 0.5 * var,
        sigma_c2: 0.5 * var,
        phases,
    })
}

/// Runs one chain from [`initial_state`] with the marginal likelihood.
pub fn run_chain(
    data: &[FunctionSample],
    bases: &ModelBases,
    config: &ModelConfig,
    prop: Option<ProposalConfig>,
    chain: &ChainConfig,
) -> Result<PosteriorDraws> {
    let state = initial_state(data, bases, config)?;
    let prop = prop.unwrap_or_else(|| ProposalConfig::for_state(&state));
    run_chain_from(data, bases, config, MarginalLikelihood, state, prop, chain)
}

/// Runs one chain from an explicit state with any likelihood.
pub fn run_chain_from<L: Likelihood>(
    data: &[FunctionSample],
    bases: &ModelBases,
    config: &ModelConfig,
    likelihood: L,
    state: ModelState,
    prop: ProposalConfig,
    chain: &ChainConfig,
) -> Result<PosteriorDraws> {
    chain.validate()?;
    Chain::new(
        data,
        bases,
        config,
        likelihood,
        state,
        prop,
        chain.seed,
        chain.blocks,
    )?
    .run(chain)
}
