//! The four subcommands. Each one computes everything in memory first and
//! then commits its output files together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use sizeshape::fpca::{align_to_template, centered_mean, fpca_basis, residual_sweep};
use sizeshape::mcmc::{initial_state, run_chain_from, AcceptanceStats, Counter, MarginalLikelihood};
use sizeshape::model::build_bases;
use sizeshape::phase::act_norm_preserving;
use sizeshape::posterior::{center_mu, delta_mu, delta_mu_aligned, pointwise_summary, variance_means};
use sizeshape::simulate::{cross_sectional_mean, generate_from_model, generate_value_warped, Generator};
use sizeshape::{FunctionSample, PhaseFunction, PosteriorDraws, ProposalConfig, TimeGrid};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{columns_csv, dataset_csv, draws_csv, fmt, read_dataset, read_draws, Staged};

/// Flags shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub chains: usize,
}

impl Options {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            seed: None,
            out: out.into(),
            chains: 1,
        }
    }

    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }
}

/// Serialized phase parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseRecord {
    Parametric { alpha: f64 },
    PiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
}

impl PhaseRecord {
    pub fn from_phase(g: &PhaseFunction) -> Self {
        match (g.alpha(), g.knots(), g.values()) {
            (Some(alpha), _, _) => PhaseRecord::Parametric { alpha },
            (None, Some(k), Some(v)) => PhaseRecord::PiecewiseLinear {
                knots: k.to_vec(),
                values: v.to_vec(),
            },
            _ => unreachable!("a phase is either parametric or piecewise linear"),
        }
    }

    pub fn to_phase(&self) -> sizeshape::Result<PhaseFunction> {
        match self {
            PhaseRecord::Parametric { alpha } => PhaseFunction::parametric(*alpha),
            PhaseRecord::PiecewiseLinear { knots, values } => {
                PhaseFunction::piecewise_linear(knots.as_slice().into(), values.clone())
            }
        }
    }
}

/// Generating parameters written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub generator: String,
    pub sigma2: f64,
    pub sigma_c2: f64,
    /// Fixed-effect coefficients; absent for value-warped data.
    pub a: Option<Vec<f64>>,
    pub phases: Vec<PhaseRecord>,
    pub random_coefficients: Vec<Vec<f64>>,
    pub t: Vec<f64>,
    /// The fixed effect sampled at `t`.
    pub mu: Vec<f64>,
}

pub fn read_truth(path: &Path) -> CliResult<Truth> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn json_text(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory JSON serialization");
    s.push('\n');
    s
}

/// `simulate`: writes `dataset.csv` and `truth.json`.
pub fn cmd_simulate(opts: &Options) -> CliResult<Vec<PathBuf>> {
    let config = opts.load()?;
    let spec = config.sim_spec()?;
    let model = config.model()?;
    let grid = TimeGrid::uniform(spec.t)?;
    let (data, truth) = match spec.generator {
        Generator::ValueWarped { mu } => {
            let s = generate_value_warped(&spec, &grid)?;
            let truth = Truth {
                seed: spec.seed,
                generator: format!("value_warped_mu{mu}"),
                sigma2: spec.sigma2,
                sigma_c2: spec.sigma_c2,
                a: None,
                phases: s.phases.iter().map(PhaseRecord::from_phase).collect(),
                random_coefficients: s.random_coefficients,
                t: grid.points().to_vec(),
                mu: s.mu.values,
            };
            (s.data, truth)
        }
        _ => {
            let s = generate_from_model(&spec, &model)?;
            let truth = Truth {
                seed: spec.seed,
                generator: "model".into(),
                sigma2: s.truth.sigma2,
                sigma_c2: s.truth.sigma_c2,
                a: Some(s.truth.a.clone()),
                phases: s.truth.phases.iter().map(PhaseRecord::from_phase).collect(),
                random_coefficients: s.random_coefficients,
                t: grid.points().to_vec(),
                mu: s.mu.values,
            };
            (s.data, truth)
        }
    };
    log::info!("simulated {} curves on {} points", data.len(), grid.len());
    let mut staged = Staged::default();
    staged.add(opts.out.join("dataset.csv"), dataset_csv(grid.points(), &data));
    staged.add(opts.out.join("truth.json"), json_text(&truth));
    staged.commit()
}

fn counter_json(c: &Counter) -> serde_json::Value {
    json!({ "proposed": c.proposed, "accepted": c.accepted, "rate": c.rate() })
}

fn acceptance_json(s: &AcceptanceStats) -> serde_json::Value {
    json!({
        "a": counter_json(&s.a),
        "sigma2": counter_json(&s.sigma2),
        "sigma_c2": counter_json(&s.sigma_c2),
        "phases": counter_json(&s.phases),
    })
}

fn proposal_json(p: &ProposalConfig) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = p
        .sigma_a
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    json!({
        "sigma_a": rows,
        "a_scale": p.a_scale,
        "tau2_sigma": p.tau2_sigma,
        "tau2_sigma_c": p.tau2_sigma_c,
        "delta": p.delta,
        "alpha_prop": p.alpha_prop,
        "adapt_interval": p.adapt_interval,
        "target_scalar": p.target_scalar,
        "target_vector": p.target_vector,
    })
}

fn suffix(chains: usize, k: usize) -> String {
    if chains > 1 {
        format!("_chain{}", k + 1)
    } else {
        String::new()
    }
}

/// `fit`: writes `draws.csv`, `acceptance.json` and `proposal.json`, with a
/// `_chainK` suffix per chain when `--chains` exceeds one. Chain `k` uses seed
/// `seed + k`.
pub fn cmd_fit(opts: &Options) -> CliResult<Vec<PathBuf>> {
    if opts.chains == 0 {
        return Err(CliError::validation("--chains must be at least 1"));
    }
    let config = opts.load()?;
    let model = config.model()?;
    let chain = config.chain()?;
    let dataset = read_dataset(&config.path("data")?)?;
    let bases = build_bases(&model, &dataset.grid)?;
    let state = initial_state(&dataset.data, &bases, &model)?;
    let mut prop = ProposalConfig::for_state(&state);
    if let Some(n) = config.adapt_interval() {
        prop.adapt_interval = n;
    }
    prop.validate(model.fixed_count)?;
    log::info!(
        "fitting {} curves, {} iterations ({} burn-in, thin {}), {} chain(s)",
        dataset.data.len(),
        chain.total,
        chain.burn_in,
        chain.thin,
        opts.chains
    );
    let results: Vec<sizeshape::Result<PosteriorDraws>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..opts.chains)
            .map(|k| {
                let mut chain = chain.clone();
                chain.seed = chain.seed.wrapping_add(k as u64);
                let (data, bases, model, state, prop) = (&dataset.data, &bases, &model, state.clone(), prop.clone());
                s.spawn(move || run_chain_from(data, bases, model, MarginalLikelihood, state, prop, &chain))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    let mut staged = Staged::default();
    for (k, draws) in results.into_iter().enumerate() {
        let draws = draws?;
        let sfx = suffix(opts.chains, k);
        staged.add(opts.out.join(format!("draws{sfx}.csv")), draws_csv(&draws, &model));
        staged.add(
            opts.out.join(format!("acceptance{sfx}.json")),
            json_text(&json!({
                "seed": draws.seed,
                "overall": acceptance_json(&draws.acceptance),
                "post_burn_in": acceptance_json(&draws.acceptance_post_burn),
            })),
        );
        staged.add(
            opts.out.join(format!("proposal{sfx}.json")),
            json_text(&proposal_json(&draws.proposal)),
        );
    }
    staged.commit()
}

/// `summarize`: centered-μ band, `γ̄`, variance draws, traces and, given a
/// truth file, `Δ_μ` in `delta.json`.
pub fn cmd_summarize(
    opts: &Options,
    draws_path: Option<&Path>,
    truth_path: Option<&Path>,
) -> CliResult<Vec<PathBuf>> {
    let config = opts.load()?;
    let model = config.model()?;
    let dataset = read_dataset(&config.path("data")?)?;
    let draws_path = match draws_path {
        Some(p) => p.to_path_buf(),
        None => config.path("draws")?,
    };
    let truth_path = truth_path.map(Path::to_path_buf).or_else(|| config.optional_path("truth"));
    let draws = read_draws(&draws_path, &model, dataset.data.len())?;
    let bases = build_bases(&model, &dataset.grid)?;
    let grid = &dataset.grid;
    let centered = center_mu(&draws, &bases.fixed, grid)?;
    let summary = pointwise_summary(&centered)?;
    let times = &dataset.times;

    let mut staged = Staged::default();
    staged.add(
        opts.out.join("mu_summary.csv"),
        columns_csv(
            times,
            &["mean".into(), "q2.5".into(), "q97.5".into()],
            &[&summary.mean.values, &summary.lower.values, &summary.upper.values],
        ),
    );
    let gbar = grid
        .points()
        .iter()
        .map(|&t| centered.gamma_bar.eval(t))
        .collect::<sizeshape::Result<Vec<f64>>>()?;
    staged.add(
        opts.out.join("gamma_bar.csv"),
        columns_csv(times, &["gamma_bar".into()], &[&gbar]),
    );
    for (name, values) in [("sigma2", &draws.sigma2), ("sigma_c2", &draws.sigma_c2)] {
        let mut text = format!("{name}\n");
        for v in values {
            text.push_str(&fmt(*v));
            text.push('\n');
        }
        staged.add(opts.out.join(format!("{name}_draws.csv")), text);
    }
    let mut trace = String::from("iteration");
    for k in 1..=model.fixed_count {
        trace.push_str(&format!(",a_{k}"));
    }
    trace.push_str(",sigma2,sigma_c2\n");
    for j in 0..draws.len() {
        trace.push_str(&draws.iterations[j].to_string());
        for v in &draws.a[j] {
            trace.push(',');
            trace.push_str(&fmt(*v));
        }
        trace.push_str(&format!(",{},{}\n", fmt(draws.sigma2[j]), fmt(draws.sigma_c2[j])));
    }
    staged.add(opts.out.join("trace.csv"), trace);

    if let Some(path) = truth_path {
        let truth = read_truth(&path)?;
        if truth.mu.len() != grid.len() {
            return Err(CliError::validation(format!(
                "{}: truth has {} points, dataset has {}",
                path.display(),
                truth.mu.len(),
                grid.len()
            )));
        }
        let mu = FunctionSample::new(truth.mu.clone());
        let raw = delta_mu(&summary.mean, &mu, grid)?;
        let (aligned, alpha) = delta_mu_aligned(&summary.mean, &mu, grid)?;
        let naive = delta_mu(&cross_sectional_mean(&dataset.data)?, &mu, grid)?;
        let (s2, sc2) = variance_means(&draws)?;
        staged.add(
            opts.out.join("delta.json"),
            json_text(&json!({
                "delta_mu": raw,
                "delta_mu_aligned": aligned,
                "aligned_alpha": alpha,
                "delta_mu_cross_sectional": naive,
                "sigma2_mean": s2,
                "sigma_c2_mean": sc2,
                "sigma2_true": truth.sigma2,
                "sigma_c2_true": truth.sigma_c2,
            })),
        );
    }
    staged.commit()
}

/// `fpca`: centered mean, FPCA basis, energy table and the projection
/// residual sweep.
pub fn cmd_fpca(opts: &Options) -> CliResult<Vec<PathBuf>> {
    let config = opts.load()?;
    let dataset = read_dataset(&config.path("data")?)?;
    let grid = &dataset.grid;
    let family = config.family()?;
    let centered = centered_mean(&dataset.data, grid, config.fpca_iters(), family)?;
    log::info!("centered mean after {} round(s)", centered.rounds);
    let aligned = dataset
        .data
        .iter()
        .map(|f| {
            let (g, _) = align_to_template(f, &centered.mean, grid, family)?;
            act_norm_preserving(f, &g, grid)
        })
        .collect::<sizeshape::Result<Vec<_>>>()?;
    let k = config.fpca_components();
    let basis = fpca_basis(&aligned, grid, &centered.mean, k)?;
    let sweep = residual_sweep(&dataset.data, grid, config.sweep_basis()?, config.sweep_max(), family)?;

    let mut staged = Staged::default();
    staged.add(
        opts.out.join("fpca_mean.csv"),
        columns_csv(&dataset.times, &["mean".into()], &[&centered.mean.values]),
    );
    let names: Vec<String> = (1..=k).map(|c| format!("pc_{c}")).collect();
    let cols: Vec<Vec<f64>> = basis
        .components
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    staged.add(opts.out.join("fpca_basis.csv"), columns_csv(&dataset.times, &names, &col_refs));
    let total: f64 = basis.singular_values.iter().sum();
    let mut energy = String::from("component,singular_value,fraction,cumulative\n");
    for ((c, s), cum) in basis.singular_values.iter().enumerate().zip(basis.energy_fractions()) {
        let frac = if total > 0.0 { s / total } else { 0.0 };
        energy.push_str(&format!("{},{},{},{}\n", c + 1, fmt(*s), fmt(frac), fmt(cum)));
    }
    staged.add(opts.out.join("fpca_energy.csv"), energy);
    let mut text = String::from("basis_count,plain,phase_optimized\n");
    for r in &sweep {
        text.push_str(&format!("{},{},{}\n", r.count, fmt(r.plain), fmt(r.optimized)));
    }
    staged.add(opts.out.join("residual_sweep.csv"), text);
    staged.commit()
}
