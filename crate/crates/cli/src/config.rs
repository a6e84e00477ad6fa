use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tt_bermudan::market::{equidistant_dates, BlackScholesModel, Payoff, PayoffKind};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub payoff: PayoffConfig,
    pub dates: DatesConfig,
    pub method: MethodConfig,
    pub samples: SamplesConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub s0: f64,
    pub rate: f64,
    #[serde(default)]
    pub dividend: f64,
    pub volatility: f64,
    #[serde(default)]
    pub correlation: f64,
    pub maturity: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PayoffName {
    BasketPut,
    MaxCall,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    pub kind: PayoffName,
    pub strike: f64,
    /// Defaults to `1/d` for the basket put and `1` for the max-call.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatesConfig {
    /// Number of time steps; exercise dates are `t_0 = 0, …, t_steps = T`.
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Primal,
    Dual,
    Both,
}

impl Method {
    pub fn primal(self) -> bool {
        matches!(self, Self::Primal | Self::Both)
    }

    pub fn dual(self) -> bool {
        matches!(self, Self::Dual | Self::Both)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: Method,
    pub degree: usize,
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
    #[serde(default)]
    pub sorted: bool,
    #[serde(default = "default_dual_rank")]
    pub dual_rank: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_cg_iterations")]
    pub cg_max_iterations: usize,
}

fn default_max_rank() -> usize {
    6
}

fn default_dual_rank() -> usize {
    4
}

fn default_eta() -> f64 {
    50.0
}

fn default_cg_iterations() -> usize {
    200
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesConfig {
    pub paths: usize,
    pub resim_paths: usize,
    #[serde(default = "default_dual_paths")]
    pub dual_paths: usize,
    pub train_seed: u64,
    pub resim_seed: u64,
}

fn default_dual_paths() -> usize {
    20_000
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub degrees: Vec<usize>,
    /// Dimensions to sweep; defaults to `model.dim`.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse { source, .. } => CliError::Parse {
                path: path.to_owned(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Parse {
            path: PathBuf::from("<inline>"),
            source: Box::new(e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Dimensions covered by a sweep, or just the model dimension.
    pub fn dims(&self) -> Vec<usize> {
        self.sweep
            .as_ref()
            .and_then(|s| s.dims.clone())
            .unwrap_or_else(|| vec![self.model.dim])
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(CliError::Invalid(msg));
        if self.samples.train_seed == self.samples.resim_seed {
            return invalid("samples.resim_seed must differ from samples.train_seed".into());
        }
        if self.samples.paths == 0 || self.samples.resim_paths == 0 {
            return invalid("samples.paths and samples.resim_paths must be positive".into());
        }
        if self.method.kind.dual() && self.samples.dual_paths < 10 {
            return invalid("samples.dual_paths must be at least 10".into());
        }
        if self.method.max_rank == 0 || self.method.dual_rank == 0 {
            return invalid("ranks must be at least 1".into());
        }
        if self.method.degree == 0 && self.method.kind.primal() {
            return invalid("method.degree must be at least 1 for the primal method".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.dims.is_some() && self.payoff.weights.is_some() {
                return invalid("payoff.weights cannot be combined with sweep.dims".into());
            }
            if self.method.kind.primal() && sweep.degrees.contains(&0) {
                return invalid("sweep.degrees must be at least 1 for the primal method".into());
            }
        }
        equidistant_dates(self.model.maturity, self.dates.steps)?;
        for d in self.dims() {
            self.model_for(d)?;
            self.payoff_for(d)?;
        }
        Ok(())
    }

    pub fn model_for(&self, d: usize) -> Result<BlackScholesModel> {
        let m = &self.model;
        Ok(BlackScholesModel::symmetric(
            d,
            m.s0,
            m.rate,
            m.dividend,
            m.volatility,
            m.correlation,
            m.maturity,
        )?)
    }

    pub fn payoff_for(&self, d: usize) -> Result<Payoff> {
        let p = &self.payoff;
        let payoff = match (&p.weights, p.kind) {
            (Some(w), PayoffName::BasketPut) => Payoff::new(PayoffKind::BasketPut, p.strike, w.clone())?,
            (Some(w), PayoffName::MaxCall) => Payoff::new(PayoffKind::MaxCall, p.strike, w.clone())?,
            (None, PayoffName::BasketPut) => Payoff::basket_put(p.strike, d)?,
            (None, PayoffName::MaxCall) => Payoff::max_call(p.strike, d)?,
        };
        if payoff.dim() != d {
            return Err(CliError::Invalid(format!(
                "payoff.weights has {} entries for {d} assets",
                payoff.dim()
            )));
        }
        Ok(payoff)
    }
}
