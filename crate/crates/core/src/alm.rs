//! ALM coefficients on a scenario tree: asset returns from monthly
//! regressions, gain-loss coefficients, liability and revenue cash flows, and
//! discounted liability values with their durations.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::econ::{self, CurveState, EconCoefficients, EconDiagnostics, EconError, EconState, Stream, MONTH};
use crate::tree::{NodeCoefficients, ScenarioTree, TreeError, TreeTopology};

#[derive(Debug, Error)]
pub enum AlmError {
    #[error("asset {asset}: {msg}")]
    Asset { asset: String, msg: String },
    #[error("liability valuation: {0}")]
    Valuation(String),
    #[error(transparent)]
    Econ(#[from] EconError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetFamily {
    Treasury,
    Corporate,
    Equity,
    Currency,
    Cash,
}

impl AssetFamily {
    pub fn is_fixed_income(self) -> bool {
        matches!(self, Self::Treasury | Self::Corporate)
    }

    fn n_coeffs(self) -> usize {
        match self {
            Self::Treasury | Self::Currency => 4,
            Self::Corporate | Self::Equity => 5,
            Self::Cash => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub name: String,
    pub family: AssetFamily,
    /// Constant duration in years; fixed income only.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub resid_std: f64,
}

impl AssetSpec {
    pub fn validate(&self) -> Result<(), AlmError> {
        let err = |msg: &str| {
            Err(AlmError::Asset {
                asset: self.name.clone(),
                msg: msg.into(),
            })
        };
        if self.coeffs.len() != self.family.n_coeffs() {
            return err(&format!(
                "{:?} regression needs {} coefficients, got {}",
                self.family,
                self.family.n_coeffs(),
                self.coeffs.len()
            ));
        }
        if self.family.is_fixed_income() && !self.duration.map_or(false, |d| d > 0.0) {
            return err("fixed-income assets need a positive duration");
        }
        if !(self.resid_std >= 0.0) {
            return err("residual std must be non-negative");
        }
        Ok(())
    }

    pub fn duration_or_zero(&self) -> f64 {
        if self.family.is_fixed_income() {
            self.duration.unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

pub const RETURN_FLOOR: f64 = -0.99;

/// One monthly return. `prev` is the previous month's state and `now` the
/// current one; `small_cap` is this month's small-cap equity return.
pub fn asset_return_step(
    asset: &AssetSpec,
    prev_return: f64,
    prev: &EconState,
    now: &EconState,
    small_cap: Option<f64>,
    noise: f64,
    dt: f64,
) -> Result<f64, AlmError> {
    let b = &asset.coeffs;
    let need = asset.family.n_coeffs();
    if b.len() < need {
        return Err(AlmError::Asset {
            asset: asset.name.clone(),
            msg: format!("expected {need} coefficients"),
        });
    }
    let r = match asset.family {
        AssetFamily::Cash => return Ok(now.curve.yield_at(0.25) * dt),
        AssetFamily::Treasury => {
            let d = asset.duration_or_zero();
            b[0] + b[1] * prev_return + b[2] * prev.curve.yield_at(d) + b[3] * now.pi
        }
        AssetFamily::Corporate => {
            let sc = small_cap.ok_or_else(|| AlmError::Asset {
                asset: asset.name.clone(),
                msg: "corporate model needs the small-cap return".into(),
            })?;
            let d = asset.duration_or_zero();
            b[0] + b[1] * prev_return + b[2] * prev.curve.yield_at(d) + b[3] * now.s_ig + b[4] * sc
        }
        AssetFamily::Equity => {
            let f = now.curve.yield_at(10.0) - now.curve.yield_at(1.0);
            b[0] + b[1] * prev_return + b[2] * now.curve.yield_at(1.0) + b[3] * now.pi + b[4] * f
        }
        AssetFamily::Currency => b[0] + b[1] * prev_return + b[2] * now.curve.yield_at(0.25) + b[3] * now.pi,
    };
    Ok((r + asset.resid_std * noise).max(RETURN_FLOOR))
}

pub fn compound_stage_return(monthly: &[f64]) -> f64 {
    monthly.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

/// g_t = (1/t) Σ_{h<=t} (Π_{s<=h} (1 + r_s) - 1) over stage returns; 0 for an empty path.
pub fn gain_loss(stage_returns: &[f64]) -> f64 {
    if stage_returns.is_empty() {
        return 0.0;
    }
    let mut growth = 1.0;
    let mut total = 0.0;
    for r in stage_returns {
        growth *= 1.0 + r;
        total += growth - 1.0;
    }
    total / stage_returns.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiabilitySpec {
    pub name: String,
    /// Annual outflow level at time 0, in millions.
    pub l0: f64,
    /// Mean annual growth.
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueSpec {
    pub c0: f64,
    pub mu: f64,
    pub sigma: f64,
}

pub const GROWTH_FLOOR: f64 = 0.01;

/// Monthly growth factor of an annual geometric process, floored at 0.01.
pub fn growth_factor(mu: f64, sigma: f64, noise: f64, dt: f64) -> (f64, bool) {
    let f = (1.0 + mu).powf(dt) + sigma * dt.sqrt() * noise;
    if f < GROWTH_FLOOR {
        (GROWTH_FLOOR, true)
    } else {
        (f, false)
    }
}

/// Levels at months 1..=months starting from `level` at month 0.
pub fn liability_forward(
    level: f64,
    mu: f64,
    sigma: f64,
    months: usize,
    rng: &mut ChaCha8Rng,
    floors: &mut usize,
) -> Vec<f64> {
    let mut cur = level;
    (0..months)
        .map(|_| {
            let (f, hit) = growth_factor(mu, sigma, econ::normal(rng), MONTH);
            *floors += hit as usize;
            cur *= f;
            cur
        })
        .collect()
}

/// Discounted value and duration numerator of annual cash flows
/// `flows[k]` paid `k` years ahead, discounted on `curve`.
pub fn discounted_flows(flows: &[f64], curve: &CurveState) -> (f64, f64) {
    let mut value = 0.0;
    let mut numer = 0.0;
    for (k, &cf) in flows.iter().enumerate() {
        let tau = k as f64;
        let df = (-curve.yield_at(tau) * tau).exp();
        value += df * cf;
        numer += tau * df * cf;
    }
    (value, numer)
}

pub fn duration_from(value: f64, numer: f64) -> Result<f64, AlmError> {
    if value > 0.0 {
        Ok(numer / value)
    } else if numer.abs() > 0.0 {
        Err(AlmError::Valuation("zero value with a nonzero duration numerator".into()))
    } else {
        Ok(0.0)
    }
}

/// Everything needed to generate a coefficient tree.
#[derive(Clone, Debug)]
pub struct GeneratorInput<'a> {
    pub stages: &'a [f64],
    pub branching: &'a [usize],
    pub seed: u64,
    pub econ: &'a EconCoefficients,
    pub init: &'a EconState,
    pub assets: &'a [AssetSpec],
    pub small_cap: Option<&'a str>,
    pub liabilities: &'a [LiabilitySpec],
    pub revenue: &'a RevenueSpec,
    /// Liability valuation horizon, whole years.
    pub t_lambda: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDiagnostics {
    pub econ: EconDiagnostics,
    pub return_floors: usize,
    pub growth_floors: usize,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub tree: ScenarioTree,
    pub econ_states: Vec<EconState>,
    pub diagnostics: GeneratorDiagnostics,
}

#[derive(Clone)]
struct PathEnd {
    last_returns: Vec<f64>,
    levels: Vec<f64>,
    revenue: f64,
}

struct NodeSim {
    stage_returns: Vec<f64>,
    /// Monthly outflow levels per class over (a(n), n].
    outflow_levels: Vec<Vec<f64>>,
    revenue_levels: Vec<f64>,
    end: PathEnd,
    return_floors: usize,
    growth_floors: usize,
}

fn simulate_node(
    input: &GeneratorInput,
    econ_path: &[EconState],
    econ_start: &EconState,
    start: &PathEnd,
    rng_assets: &mut ChaCha8Rng,
    rng_liab: &mut ChaCha8Rng,
    small_cap_idx: Option<usize>,
) -> Result<NodeSim, AlmError> {
    let n_assets = input.assets.len();
    let months = econ_path.len();
    let mut growth = vec![1.0; n_assets];
    let mut last = start.last_returns.clone();
    let mut return_floors = 0;
    let mut order: Vec<usize> = (0..n_assets).filter(|&i| input.assets[i].family == AssetFamily::Equity).collect();
    order.extend((0..n_assets).filter(|&i| input.assets[i].family != AssetFamily::Equity));
    for h in 0..months {
        let prev = if h == 0 { econ_start } else { &econ_path[h - 1] };
        let now = &econ_path[h];
        let noises: Vec<f64> = (0..n_assets).map(|_| econ::normal(rng_assets)).collect();
        let mut this_month = vec![0.0; n_assets];
        for &i in &order {
            let sc = small_cap_idx.map(|k| this_month[k]);
            let r = asset_return_step(&input.assets[i], last[i], prev, now, sc, noises[i], MONTH)?;
            return_floors += (r == RETURN_FLOOR) as usize;
            this_month[i] = r;
            growth[i] *= 1.0 + r;
        }
        last = this_month;
    }
    let mut growth_floors = 0;
    let outflow_levels: Vec<Vec<f64>> = input
        .liabilities
        .iter()
        .zip(&start.levels)
        .map(|(spec, &lvl)| liability_forward(lvl, spec.mu, spec.sigma, months, rng_liab, &mut growth_floors))
        .collect();
    let rev = input.revenue;
    let revenue_levels = liability_forward(start.revenue, rev.mu, rev.sigma, months, rng_liab, &mut growth_floors);
    let end = PathEnd {
        last_returns: last,
        levels: outflow_levels.iter().map(|v| *v.last().unwrap()).collect(),
        revenue: *revenue_levels.last().unwrap(),
    };
    Ok(NodeSim {
        stage_returns: growth.iter().map(|g| g - 1.0).collect(),
        outflow_levels,
        revenue_levels,
        end,
        return_floors,
        growth_floors,
    })
}

/// Simulate the economy, asset returns and liabilities on a fresh tree.
pub fn generate_tree(input: &GeneratorInput) -> Result<Generated, AlmError> {
    for a in input.assets {
        a.validate()?;
        if a.family == AssetFamily::Cash {
            return Err(AlmError::Asset {
                asset: a.name.clone(),
                msg: "cash is implicit and must not be listed".into(),
            });
        }
    }
    let small_cap_idx = match input.small_cap {
        Some(name) => Some(input.assets.iter().position(|a| a.name == name).ok_or_else(|| AlmError::Asset {
            asset: name.to_string(),
            msg: "small-cap reference is not in the asset list".into(),
        })?),
        None => None,
    };
    if let Some(k) = small_cap_idx {
        if input.assets[k].family != AssetFamily::Equity {
            return Err(AlmError::Asset {
                asset: input.assets[k].name.clone(),
                msg: "small-cap reference must be an equity".into(),
            });
        }
    }
    let topo = TreeTopology::build(input.stages, input.branching)?;
    let econ_tree = econ::simulate_econ_tree(&topo, input.econ, input.init, input.seed)?;
    let n = topo.num_nodes();
    let n_assets = input.assets.len();
    let n_liab = input.liabilities.len();

    let mut ends: Vec<Option<PathEnd>> = vec![None; n];
    ends[0] = Some(PathEnd {
        last_returns: vec![0.0; n_assets],
        levels: input.liabilities.iter().map(|l| l.l0).collect(),
        revenue: input.revenue.c0,
    });
    let mut stage_returns = vec![vec![0.0; n_assets]; n];
    let mut outflow_levels: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n_liab]; n];
    let mut revenue_levels: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut diagnostics = GeneratorDiagnostics {
        econ: econ_tree.diagnostics,
        ..Default::default()
    };
    for t in 1..=topo.horizon() {
        let sims: Vec<Result<NodeSim, AlmError>> = topo
            .stage_nodes(t)
            .into_par_iter()
            .map(|id| {
                let a = topo.ancestor(id).unwrap();
                let mut ra = econ::node_rng(input.seed, id, Stream::Assets);
                let mut rl = econ::node_rng(input.seed, id, Stream::Liabilities);
                simulate_node(
                    input,
                    &econ_tree.monthly[id],
                    &econ_tree.states[a],
                    ends[a].as_ref().unwrap(),
                    &mut ra,
                    &mut rl,
                    small_cap_idx,
                )
            })
            .collect();
        for (id, sim) in topo.stage_nodes(t).zip(sims) {
            let sim = sim?;
            diagnostics.return_floors += sim.return_floors;
            diagnostics.growth_floors += sim.growth_floors;
            stage_returns[id] = sim.stage_returns;
            outflow_levels[id] = sim.outflow_levels;
            revenue_levels[id] = sim.revenue_levels;
            ends[id] = Some(sim.end);
        }
    }

    // Per-leaf monthly outflow levels from month 1 to the end of the extension.
    let horizon_months = (topo.stage_dates()[topo.horizon()] * 12.0).round() as usize;
    let ext_months = input.t_lambda * 12;
    let leaf_paths: Vec<(Vec<Vec<f64>>, usize)> = topo
        .leaves()
        .into_par_iter()
        .map(|leaf| {
            let path = topo.path(leaf);
            let mut levels: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon_months + ext_months); n_liab];
            for &node in &path[1..] {
                for j in 0..n_liab {
                    levels[j].extend_from_slice(&outflow_levels[node][j]);
                }
            }
            let mut rng = econ::node_rng(input.seed, leaf, Stream::Extension);
            let mut floors = 0;
            let end = ends[leaf].as_ref().unwrap();
            for (j, spec) in input.liabilities.iter().enumerate() {
                let ext = liability_forward(end.levels[j], spec.mu, spec.sigma, ext_months, &mut rng, &mut floors);
                levels[j].extend(ext);
            }
            (levels, floors)
        })
        .collect();
    for (_, f) in &leaf_paths {
        diagnostics.growth_floors += f;
    }
    let leaf0 = topo.leaves().start;

    let coeffs: Vec<Result<NodeCoefficients, AlmError>> = (0..n)
        .into_par_iter()
        .map(|id| {
            let st = &econ_tree.states[id];
            let stage = topo.stage_of(id);
            let mut c = NodeCoefficients::zeros(n_assets, n_liab);
            c.r[0] = if stage < topo.horizon() {
                st.curve.yield_at(0.25) * topo.gap_years(stage)
            } else {
                0.0
            };
            c.r[1..].copy_from_slice(&stage_returns[id]);
            let path = topo.path(id);
            for i in 0..n_assets {
                let rs: Vec<f64> = path[1..].iter().map(|&m| stage_returns[m][i]).collect();
                c.g[i] = gain_loss(&rs);
            }
            for j in 0..n_liab {
                c.outflows[j] = outflow_levels[id][j].iter().sum::<f64>() * MONTH;
            }
            c.revenue = revenue_levels[id].iter().sum::<f64>() * MONTH;
            c.r_minus = econ::borrow_rate(st);
            let node_month = (topo.stage_dates()[stage] * 12.0).round() as usize;
            let p_n = topo.prob(id);
            for j in 0..n_liab {
                let mut value = 0.0;
                let mut numer = 0.0;
                for leaf in topo.leaves_under(id) {
                    let levels = &leaf_paths[leaf - leaf0].0[j];
                    let flows: Vec<f64> = (0..=input.t_lambda)
                        .map(|k| annual_accrual(levels, node_month + 12 * k))
                        .collect();
                    let (v, nu) = discounted_flows(&flows, &st.curve);
                    let w = topo.prob(leaf) / p_n;
                    value += w * v;
                    numer += w * nu;
                }
                c.lambda[j] = value;
                c.delta_lambda[j] = duration_from(value, numer)?;
            }
            Ok(c)
        })
        .collect();
    let coeffs = coeffs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let econ_states = econ_tree.states.clone();
    let extras: Vec<Vec<f64>> = econ_states
        .iter()
        .map(|s| vec![s.curve.b1, s.curve.b2, s.curve.b3, s.curve.gamma, s.pi, s.s_ig])
        .collect();
    let names = ["b1", "b2", "b3", "gamma", "pi", "sIG"].iter().map(|s| s.to_string()).collect();
    let tree = ScenarioTree::new(topo, coeffs, n_assets, n_liab)?.with_extras(names, extras)?;
    Ok(Generated {
        tree,
        econ_states,
        diagnostics,
    })
}

/// Outflow accrued over the year ending at `end_month`; `levels[k]` is the
/// annual level during month k + 1.
fn annual_accrual(levels: &[f64], end_month: usize) -> f64 {
    let start = end_month.saturating_sub(12);
    let end = end_month.min(levels.len());
    if end <= start {
        return 0.0;
    }
    levels[start..end].iter().sum::<f64>() * MONTH
}
