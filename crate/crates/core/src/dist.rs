//! Log-densities and samplers shared by the priors, proposals and simulators.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln N(x; mean, var)`.
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// Inverse-gamma log-density with density `∝ x^{-shape-1} exp(-scale / x)`.
pub fn inv_gamma_ln_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Log-density of `MVN(0, var · I)`.
pub fn iso_normal_ln_pdf(x: &[f64], var: f64) -> f64 {
    let ss: f64 = x.iter().map(|v| v * v).sum();
    -0.5 * (x.len() as f64 * (2.0 * PI * var).ln() + ss / var)
}

/// Dirichlet log-density; `-∞` off the open simplex.
pub fn dirichlet_ln_pdf(x: &[f64], concentration: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), concentration.len());
    if x.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let total: f64 = concentration.iter().sum();
    let mut lp = ln_gamma(total);
    for (&v, &c) in x.iter().zip(concentration) {
        lp += (c - 1.0) * v.ln() - ln_gamma(c);
    }
    lp
}

/// Dirichlet draw by normalizing independent Gamma(c_j, 1) variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = concentration
        .iter()
        .map(|&c| {
            Gamma::new(c, 1.0)
                .expect("Dirichlet concentrations are validated positive")
                .sample(rng)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= total);
    draws
}

/// `N(mean, sd²)` truncated to `(0, ∞)`, by rejection from the untruncated normal.
pub fn sample_positive_normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if x > 0.0 {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        // statrs' erfc is accurate to roughly 1e-11 here.
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-10);
        assert!((normal_cdf(2.0) - 0.977_249_868_051_820_8).abs() < 1e-10);
        assert!((normal_cdf(1.0) / normal_cdf(2.0) - 0.860_931_0).abs() < 1e-6);
    }

    #[test]
    fn inverse_gamma_matches_gamma_change_of_variables() {
        // If y ~ Gamma(a, rate b) then x = 1/y ~ IG(a, b): p_x(x) = p_y(1/x) / x².
        let (a, b) = (3.0f64, 2.0f64);
        for x in [0.1, 0.7, 2.5] {
            let y: f64 = 1.0 / x;
            let ln_py = a * b.ln() - ln_gamma(a) + (a - 1.0) * y.ln() - b * y;
            assert!((inv_gamma_ln_pdf(x, a, b) - (ln_py - 2.0 * x.ln())).abs() < 1e-12);
        }
        assert_eq!(inv_gamma_ln_pdf(-1.0, a, b), f64::NEG_INFINITY);
    }

    #[test]
    fn dirichlet_two_components_is_beta() {
        // Dirichlet(a, b) on (x, 1 - x) is Beta(a, b).
        let (a, b) = (2.5, 4.0);
        let x: f64 = 0.3;
        let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let expect = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta;
        assert!((dirichlet_ln_pdf(&[x, 1.0 - x], &[a, b]) - expect).abs() < 1e-12);
        assert_eq!(dirichlet_ln_pdf(&[0.0, 1.0], &[a, b]), f64::NEG_INFINITY);
    }

    #[test]
    fn dirichlet_draws_are_on_simplex_and_reproducible() {
        let conc = [7.5, 7.5, 7.5, 7.5];
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = sample_dirichlet(&conc, &mut r1);
        let b = sample_dirichlet(&conc, &mut r2);
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn truncated_normal_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(sample_positive_normal(0.05, 1.0, &mut rng) > 0.0);
        }
    }
}
