//! With a constant likelihood the sampler must return the prior.

mod common;

use common::ks_pvalue;
use sizeshape::basis::BasisKind;
use sizeshape::dist::normal_cdf;
use sizeshape::mcmc::{run_chain_from, ChainConfig, FlatLikelihood, ProposalConfig};
use sizeshape::model::{build_bases, InvGamma, ModelConfig, ModelState, PhasePrior};
use sizeshape::phase::to_increments;
use sizeshape::{FunctionSample, TimeGrid};
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::function::gamma::gamma_ur;

const THIN: usize = 20;
const KEPT: usize = 5_000;

fn flat_chain(prior: PhasePrior, knots: usize, seed: u64) -> (ModelConfig, sizeshape::PosteriorDraws) {
    let grid = TimeGrid::uniform(10).unwrap();
    let ig = InvGamma { shape: 3.0, scale: 2.0 };
    let config = ModelConfig {
        fixed_count: 3,
        random_count: 2,
        phase_prior: prior,
        phase_knot_count: knots,
        sigma2_prior: ig,
        sigma_c2_prior: ig,
        random_kind: BasisKind::ModifiedFourier,
        ..ModelConfig::default()
    };
    let bases = build_bases(&config, &grid).unwrap();
    let data = vec![FunctionSample::zeros(10); 2];
    let state = ModelState {
        a: vec![0.0; 3],
        sigma2: 1.0,
        sigma_c2: 1.0,
        phases: vec![config.identity_phase().unwrap(); 2],
    };
    let chain = ChainConfig::new(20_000 + KEPT * THIN, 20_000, THIN, seed);
    let draws = run_chain_from(&data, &bases, &config, FlatLikelihood, state, ProposalConfig::new(3), &chain).unwrap();
    assert_eq!(draws.len(), KEPT);
    (config, draws)
}

#[test]
fn parametric_chain_returns_prior() {
    let (_, d) = flat_chain(PhasePrior::Parametric, 5, 11);
    for k in 0..3 {
        let xs: Vec<f64> = d.a.iter().map(|a| a[k]).collect();
        let p = ks_pvalue(&xs, |x| normal_cdf(x / 100.0));
        assert!(p > 1e-3, "a_{k}: p = {p}");
    }
    let ig = |x: f64| if x <= 0.0 { 0.0 } else { gamma_ur(3.0, 2.0 / x) };
    assert!(ks_pvalue(&d.sigma2, ig) > 1e-3);
    assert!(ks_pvalue(&d.sigma_c2, ig) > 1e-3);
    for i in 0..2 {
        let xs: Vec<f64> = d.phases.iter().map(|p| p[i].alpha().unwrap()).collect();
        let p = ks_pvalue(&xs, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
        assert!(p > 1e-3, "alpha_{i}: p = {p}");
    }
}

#[test]
fn dirichlet_chain_returns_prior() {
    let (config, d) = flat_chain(PhasePrior::Dirichlet, 4, 12);
    let k = 3;
    let conc = 30.0 / k as f64;
    let beta = Beta::new(conc, 30.0 - conc).unwrap();
    for i in 0..2 {
        for j in 0..k {
            let xs: Vec<f64> = d
                .phases
                .iter()
                .map(|p| to_increments(&p[i], config.phase_knots().unwrap()).unwrap().deltas[j])
                .collect();
            let p = ks_pvalue(&xs, |x| beta.cdf(x));
            assert!(p > 1e-3, "obs {i} increment {j}: p = {p}");
        }
    }
}
