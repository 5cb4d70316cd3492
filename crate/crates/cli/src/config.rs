//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must appear
//! in [`KEYS`]; unknown or repeated keys are rejected with their line number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sizeshape::fpca::AlignFamily;
use sizeshape::model::InvGamma;
use sizeshape::simulate::{Generator, SimSpec};
use sizeshape::{BasisKind, ChainConfig, ModelConfig, PhasePrior};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Count,
    Seed,
    Real,
    Text,
}

/// Accepted keys and their value types.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed"),
    ("data", "text"),
    ("draws", "text"),
    ("truth", "text"),
    ("fixed_count", "count"),
    ("random_count", "count"),
    ("fixed_basis", "text"),
    ("random_basis", "text"),
    ("phase_prior", "text"),
    ("phase_knots", "count"),
    ("theta", "real"),
    ("prior_var_a", "real"),
    ("sigma2_shape", "real"),
    ("sigma2_scale", "real"),
    ("sigma_c2_shape", "real"),
    ("sigma_c2_scale", "real"),
    ("iterations", "count"),
    ("burn_in", "count"),
    ("thin", "count"),
    ("adapt_interval", "count"),
    ("sim_n", "count"),
    ("sim_t", "count"),
    ("sim_generator", "text"),
    ("sim_mu", "count"),
    ("sim_sigma2", "real"),
    ("sim_sigma_c2", "real"),
    ("fpca_iters", "count"),
    ("fpca_family", "text"),
    ("fpca_components", "count"),
    ("sweep_max", "count"),
    ("sweep_basis", "text"),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, t)| match *t {
        "count" => Kind::Count,
        "seed" => Kind::Seed,
        "real" => Kind::Real,
        _ => Kind::Text,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Count(usize),
    Seed(u64),
    Real(f64),
    Text(String),
}

/// Parsed configuration plus the directory relative paths resolve against.
#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    values: BTreeMap<String, (usize, Value)>,
    base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CliError::validation(format!("config line {line_no}: {msg}"));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let kind = kind_of(key).ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if value.is_empty() {
                return Err(err(format!("empty value for `{key}`")));
            }
            let parsed = match kind {
                Kind::Count => value
                    .parse()
                    .map(Value::Count)
                    .map_err(|_| err(format!("`{key}` needs a non-negative integer, found `{value}`")))?,
                Kind::Seed => value
                    .parse()
                    .map(Value::Seed)
                    .map_err(|_| err(format!("`{key}` needs an unsigned 64-bit integer, found `{value}`")))?,
                Kind::Real => match value.parse::<f64>() {
                    Ok(x) if x.is_finite() => Value::Real(x),
                    _ => return Err(err(format!("`{key}` needs a finite number, found `{value}`"))),
                },
                Kind::Text => Value::Text(value.to_string()),
            };
            if let Some((first, _)) = values.insert(key.to_string(), (line_no, parsed)) {
                return Err(err(format!("`{key}` already set on line {first}")));
            }
        }
        let config = Self {
            values,
            base_dir: base_dir.to_path_buf(),
        };
        config.check_choices()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Overrides the seed, as `--seed` does.
    pub fn set_seed(&mut self, seed: u64) {
        self.values.insert("seed".into(), (0, Value::Seed(seed)));
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key).map(|(_, v)| v)
    }

    fn missing(key: &str) -> CliError {
        CliError::validation(format!("missing required key `{key}`"))
    }

    fn count_or(&self, key: &str, default: usize) -> usize {
        match self.get(key) {
            Some(Value::Count(v)) => *v,
            _ => default,
        }
    }

    fn count(&self, key: &str) -> CliResult<usize> {
        match self.get(key) {
            Some(Value::Count(v)) => Ok(*v),
            _ => Err(Self::missing(key)),
        }
    }

    fn real_or(&self, key: &str, default: f64) -> f64 {
        match self.get(key) {
            Some(Value::Real(v)) => *v,
            _ => default,
        }
    }

    fn real(&self, key: &str) -> CliResult<f64> {
        match self.get(key) {
            Some(Value::Real(v)) => Ok(*v),
            _ => Err(Self::missing(key)),
        }
    }

    fn text(&self, key: &str) -> Option<&str> {
        match self.get(key) {
            Some(Value::Text(v)) => Some(v),
            _ => None,
        }
    }

    pub fn seed(&self) -> CliResult<u64> {
        match self.get("seed") {
            Some(Value::Seed(v)) => Ok(*v),
            _ => Err(Self::missing("seed")),
        }
    }

    /// A path-valued key resolved against the config file's directory.
    pub fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.optional_path(key).ok_or_else(|| Self::missing(key))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.text(key).map(|p| self.base_dir.join(p))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    fn check_choices(&self) -> CliResult<()> {
        for key in ["fixed_basis", "random_basis", "sweep_basis"] {
            self.basis(key, BasisKind::BSpline)?;
        }
        self.phase_prior()?;
        self.family()?;
        if let Some(g) = self.text("sim_generator") {
            if g != "model" && g != "value_warped" {
                return Err(self.choice_error("sim_generator", "model, value_warped"));
            }
        }
        Ok(())
    }

    fn choice_error(&self, key: &str, allowed: &str) -> CliError {
        let line = self.values.get(key).map_or(0, |(l, _)| *l);
        CliError::validation(format!(
            "config line {line}: `{key}` must be one of {allowed}"
        ))
    }

    fn basis(&self, key: &str, default: BasisKind) -> CliResult<BasisKind> {
        match self.text(key) {
            None => Ok(default),
            Some("fourier") => Ok(BasisKind::ModifiedFourier),
            Some("bspline") => Ok(BasisKind::BSpline),
            Some(_) => Err(self.choice_error(key, "fourier, bspline")),
        }
    }

    fn phase_prior(&self) -> CliResult<PhasePrior> {
        match self.text("phase_prior") {
            None | Some("pm1") => Ok(PhasePrior::Parametric),
            Some("pm2") => Ok(PhasePrior::Dirichlet),
            Some(_) => Err(self.choice_error("phase_prior", "pm1, pm2")),
        }
    }

    pub fn family(&self) -> CliResult<AlignFamily> {
        match self.text("fpca_family") {
            None | Some("piecewise") => Ok(AlignFamily::PiecewiseCd),
            Some("pm1") => Ok(AlignFamily::Pm1Grid),
            Some(_) => Err(self.choice_error("fpca_family", "pm1, piecewise")),
        }
    }

    pub fn model(&self) -> CliResult<ModelConfig> {
        let d = ModelConfig::default();
        let config = ModelConfig {
            fixed_count: self.count_or("fixed_count", d.fixed_count),
            random_count: self.count_or("random_count", d.random_count),
            fixed_kind: self.basis("fixed_basis", d.fixed_kind)?,
            random_kind: self.basis("random_basis", d.random_kind)?,
            phase_prior: self.phase_prior()?,
            phase_knot_count: self.count_or("phase_knots", d.phase_knot_count),
            theta: self.real_or("theta", d.theta),
            prior_var_a: self.real_or("prior_var_a", d.prior_var_a),
            sigma2_prior: InvGamma {
                shape: self.real_or("sigma2_shape", d.sigma2_prior.shape),
                scale: self.real_or("sigma2_scale", d.sigma2_prior.scale),
            },
            sigma_c2_prior: InvGamma {
                shape: self.real_or("sigma_c2_shape", d.sigma_c2_prior.shape),
                scale: self.real_or("sigma_c2_scale", d.sigma_c2_prior.scale),
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn chain(&self) -> CliResult<ChainConfig> {
        let chain = ChainConfig::new(
            self.count("iterations")?,
            self.count("burn_in")?,
            self.count_or("thin", 1),
            self.seed()?,
        );
        chain.validate()?;
        Ok(chain)
    }

    pub fn adapt_interval(&self) -> Option<usize> {
        match self.get("adapt_interval") {
            Some(Value::Count(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn sim_spec(&self) -> CliResult<SimSpec> {
        let generator = match self.text("sim_generator") {
            None => return Err(Self::missing("sim_generator")),
            Some("model") => match self.phase_prior()? {
                PhasePrior::Parametric => Generator::ModelParametric,
                PhasePrior::Dirichlet => Generator::ModelDirichlet,
            },
            Some(_) => {
                let mu = self.count("sim_mu")?;
                let mu = u8::try_from(mu)
                    .map_err(|_| CliError::validation(format!("sim_mu {mu} is out of range")))?;
                Generator::ValueWarped { mu }
            }
        };
        let spec = SimSpec {
            n: self.count("sim_n")?,
            t: self.count("sim_t")?,
            generator,
            sigma2: self.real("sim_sigma2")?,
            sigma_c2: self.real("sim_sigma_c2")?,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fpca_iters(&self) -> usize {
        self.count_or("fpca_iters", 10)
    }

    pub fn fpca_components(&self) -> usize {
        self.count_or("fpca_components", 3)
    }

    pub fn sweep_max(&self) -> usize {
        self.count_or("sweep_max", 30)
    }

    pub fn sweep_basis(&self) -> CliResult<BasisKind> {
        self.basis("sweep_basis", BasisKind::ModifiedFourier)
    }
}
