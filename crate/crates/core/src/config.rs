//! Run configuration, read from TOML. Currency figures are in millions,
//! rates are fractions, durations and dates are in years.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alm::{AssetFamily, AssetSpec, GeneratorInput, LiabilitySpec, RevenueSpec};
use crate::econ::{EconCoefficients, EconState};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub stages: Vec<f64>,
    pub branching: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Debt weight against realised profits.
    pub alpha: f64,
    /// Penalty on the initial deposit.
    pub beta: f64,
    /// Funding ratio scaling the liability benchmark.
    pub phi: f64,
    /// Mean-semideviation weight.
    pub kappa: f64,
    /// Allowed duration mismatch in years.
    pub delta_bar: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Maximum equity share of the risky portfolio.
    pub equity_cap: f64,
    pub cost_buy: f64,
    pub cost_sell: f64,
    pub t_lambda: usize,
    pub big_m: f64,
    pub w_floor: f64,
    /// Initial risky holdings; empty means none.
    #[serde(default)]
    pub initial_holdings: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    /// Relative tolerance for new cuts and solution changes.
    pub tol: f64,
    /// Absolute tolerance of the SSD separation.
    pub ssd_tol: f64,
    pub max_iterations: usize,
    /// Event-cut loop budget per node, as a multiple of the child count.
    pub event_loop_factor: usize,
    pub worst_case_init: bool,
    /// Largest extensive form the oracle will build.
    pub oracle_max_vars: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            ssd_tol: 1e-7,
            max_iterations: 100,
            event_loop_factor: 50,
            worst_case_init: true,
            oracle_max_vars: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeSection,
    pub model: ModelParams,
    #[serde(default)]
    pub solver: SolverParams,
    pub econ: EconCoefficients,
    pub initial_state: EconState,
    #[serde(default)]
    pub small_cap: Option<String>,
    pub assets: Vec<AssetSpec>,
    pub revenue: RevenueSpec,
    pub liabilities: Vec<LiabilitySpec>,
}

pub const BASE_SMALL: &str = include_str!("../configs/base_small.toml");
pub const BASE_PAPER: &str = include_str!("../configs/base_paper.toml");
pub const STRESSED: &str = include_str!("../configs/stressed.toml");

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Shipped configurations by name.
    pub fn preset(name: &str) -> Option<Self> {
        let text = match name {
            "base_small" => BASE_SMALL,
            "base_paper" => BASE_PAPER,
            "stressed" => STRESSED,
            _ => return None,
        };
        Some(Self::from_toml(text).expect("shipped configs are valid"))
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn initial_holdings(&self) -> Vec<f64> {
        if self.model.initial_holdings.is_empty() {
            vec![0.0; self.assets.len()]
        } else {
            self.model.initial_holdings.clone()
        }
    }

    pub fn durations(&self) -> Vec<f64> {
        self.assets.iter().map(|a| a.duration_or_zero()).collect()
    }

    pub fn is_equity(&self) -> Vec<bool> {
        self.assets.iter().map(|a| a.family == AssetFamily::Equity).collect()
    }

    pub fn generator_input(&self) -> GeneratorInput<'_> {
        GeneratorInput {
            stages: &self.tree.stages,
            branching: &self.tree.branching,
            seed: self.tree.seed,
            econ: &self.econ,
            init: &self.initial_state,
            assets: &self.assets,
            small_cap: self.small_cap.as_deref(),
            liabilities: &self.liabilities,
            revenue: &self.revenue,
            t_lambda: self.model.t_lambda,
        }
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let m = &self.model;
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.tree.stages.len() >= 2, "tree.stages needs at least two dates");
        need(
            self.tree.branching.len() + 1 == self.tree.stages.len(),
            "tree.branching needs one count per stage transition",
        );
        need(self.tree.branching.iter().all(|&b| b >= 1), "tree.branching counts must be at least 1");
        need((0.0..=1.0).contains(&m.alpha), "model.alpha must lie in [0, 1]");
        need(m.beta >= 0.0, "model.beta must be non-negative");
        need(m.phi >= 0.0, "model.phi must be non-negative");
        need((0.0..=1.0).contains(&m.kappa), "model.kappa must lie in [0, 1]");
        need(m.delta_bar >= 0.0, "model.delta_bar must be non-negative");
        need(
            0.0 <= m.theta_min && m.theta_min <= m.theta_max && m.theta_max <= 1.0,
            "model requires 0 <= theta_min <= theta_max <= 1",
        );
        need((0.0..=1.0).contains(&m.equity_cap), "model.equity_cap must lie in [0, 1]");
        need(m.cost_buy >= 0.0 && m.cost_sell >= 0.0 && m.cost_sell < 1.0, "transaction costs must lie in [0, 1)");
        need(m.big_m > 0.0, "model.big_m must be positive");
        need(
            m.initial_holdings.is_empty() || m.initial_holdings.len() == self.assets.len(),
            "model.initial_holdings needs one entry per asset",
        );
        need(m.initial_holdings.iter().all(|&x| x >= 0.0), "initial holdings must be non-negative");
        need(!self.assets.is_empty(), "at least one risky asset is required");
        need(self.solver.tol > 0.0 && self.solver.ssd_tol > 0.0, "solver tolerances must be positive");
        need(self.solver.max_iterations >= 1, "solver.max_iterations must be at least 1");
        need(self.solver.event_loop_factor >= 1, "solver.event_loop_factor must be at least 1");
        need(self.revenue.c0 >= 0.0 && self.revenue.sigma >= 0.0, "revenue needs c0 >= 0 and sigma >= 0");
        need(
            self.liabilities.iter().all(|l| l.l0 >= 0.0 && l.sigma >= 0.0),
            "liabilities need l0 >= 0 and sigma >= 0",
        );
        need(self.econ.inflation.sigma_pi >= 0.0, "econ.inflation.sigma_pi must be non-negative");
        for a in &self.assets {
            if let Err(e) = a.validate() {
                errs.push(e.to_string());
            }
        }
        if let Some(sc) = &self.small_cap {
            if !self.assets.iter().any(|a| &a.name == sc) {
                errs.push(format!("small_cap {sc} is not in the asset list"));
            }
        } else if self.assets.iter().any(|a| a.family == AssetFamily::Corporate) {
            errs.push("corporate assets need small_cap to name an equity".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Set a scalar parameter by name, as used by sweeps.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), ConfigError> {
        let m = &mut self.model;
        match name {
            "phi" => m.phi = value,
            "kappa" => m.kappa = value,
            "alpha" => m.alpha = value,
            "beta" => m.beta = value,
            "delta_bar" => m.delta_bar = value,
            "theta_min" => m.theta_min = value,
            "theta_max" => m.theta_max = value,
            "equity_cap" => m.equity_cap = value,
            "seed" => self.tree.seed = value as u64,
            "liability_mu" => self.liabilities.iter_mut().for_each(|l| l.mu = value),
            "liability_sigma" => self.liabilities.iter_mut().for_each(|l| l.sigma = value),
            other => return Err(ConfigError::UnknownParam(other.to_string())),
        }
        self.validate()
    }
}
