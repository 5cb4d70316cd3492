//! Bayesian size-and-shape functional mixed-effects model.
//!
//! Functions observed on a common grid are modeled as a fixed effect `μ` and a
//! smooth random effect `v_i`, both moved by an observation-specific phase
//! `γ_i` through the norm-preserving action `(f ∘ γ) √γ̇`. The random effect is
//! integrated out and the remaining parameters are sampled with an adaptive
//! Metropolis-Hastings chain.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod dist;
pub mod error;
pub mod fpca;
pub mod grid;
pub mod mcmc;
pub mod model;
pub mod phase;
pub mod posterior;
pub mod simulate;

pub use basis::{BasisKind, OrthonormalBasis};
pub use error::{Error, Result};
pub use mcmc::{ChainConfig, PosteriorDraws, ProposalConfig};
pub use model::{ModelBases, ModelConfig, ModelState, PhasePrior};
pub use grid::{FunctionSample, TimeGrid};
pub use phase::{PhaseFunction, PhaseIncrements};
