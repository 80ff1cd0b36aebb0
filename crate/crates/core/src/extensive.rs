//! Deterministic equivalent of the whole tree as one LP, used as an oracle.
//!
//! Second-order dominance is written in shortfall form at each atom of the
//! benchmark and the nested mean-semideviation as an epigraph per node:
//! `θ_n = Σ p V + κ Σ p z`, `z_m >= V_m - Σ p V`, `z >= 0`, with
//! `V_m = cost_m + θ_m`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::decomposer::{DecomposeError, Decomposer, RunStatus};
use crate::dominance::DiscreteDistribution;
use crate::lp::{self, LinearModel, LpError, Sense, SolverOptions, Status, VarId};
use crate::tree::ScenarioTree;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("extensive form needs {needed} variables, limit is {limit}")]
    TooLarge { needed: usize, limit: usize },
    #[error("tree and config disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
}

/// Variable ids of one node inside the extensive model.
#[derive(Clone, Debug, Default)]
pub struct NodeVars {
    pub x: Vec<VarId>,
    pub xp: Vec<VarId>,
    pub xm: Vec<VarId>,
    pub b: Option<VarId>,
    pub bp: Option<VarId>,
    pub bm: Option<VarId>,
    pub k0: Option<VarId>,
    /// Nested risk value of the subtree below the node; absent at leaves.
    pub theta: Option<VarId>,
    /// Stage cost plus `theta`.
    pub value: Option<VarId>,
}

pub struct ExtensiveModel {
    pub model: LinearModel,
    pub nodes: Vec<NodeVars>,
    pub ssd_rows: usize,
}

/// Rough variable count, used to refuse oversized trees before building.
pub fn estimate_vars(tree: &ScenarioTree) -> usize {
    let topo = &tree.topology;
    let n = tree.n_assets;
    let nodes = topo.num_nodes();
    let per_node = 3 * n + 1 + 6;
    let last = topo.horizon() - 1;
    let ssd: usize = topo.stage_nodes(last).map(|k| topo.children(k).len().pow(2)).sum();
    nodes * per_node + ssd
}

pub fn build_extensive(tree: &ScenarioTree, cfg: &RunConfig) -> Result<ExtensiveModel, OracleError> {
    if tree.n_assets != cfg.n_assets() {
        return Err(OracleError::Mismatch(format!(
            "tree has {} assets, config {}",
            tree.n_assets,
            cfg.n_assets()
        )));
    }
    let needed = estimate_vars(tree);
    let limit = cfg.solver.oracle_max_vars;
    if needed > limit {
        return Err(OracleError::TooLarge { needed, limit });
    }
    let topo = &tree.topology;
    let prm = &cfg.model;
    let n = tree.n_assets;
    let horizon = topo.horizon();
    let durations = cfg.durations();
    let equity = cfg.is_equity();
    let holdings = cfg.initial_holdings();
    let inf = f64::INFINITY;
    let mut lp = LinearModel::new();
    let mut vars: Vec<NodeVars> = Vec::with_capacity(topo.num_nodes());

    for id in 0..topo.num_nodes() {
        let t = topo.stage_of(id);
        let leaf = t == horizon;
        let mut nv = NodeVars {
            x: (0..=n).map(|i| lp.add_var(format!("x{i}_{id}"), 0.0, inf, 0.0)).collect(),
            ..Default::default()
        };
        if !leaf {
            nv.xp = (1..=n).map(|i| lp.add_var(format!("xp{i}_{id}"), 0.0, inf, 0.0)).collect();
            nv.xm = (1..=n).map(|i| lp.add_var(format!("xm{i}_{id}"), 0.0, inf, 0.0)).collect();
            nv.theta = Some(lp.add_var(format!("theta_{id}"), -inf, inf, if t == 0 { 1.0 } else { 0.0 }));
        }
        if t == 0 {
            nv.k0 = Some(lp.add_var("K0", 0.0, inf, prm.beta));
        } else {
            nv.b = Some(lp.add_var(format!("b_{id}"), 0.0, inf, 0.0));
            nv.bm = Some(lp.add_var(format!("bm_{id}"), 0.0, inf, 0.0));
            if !leaf {
                nv.bp = Some(lp.add_var(format!("bp_{id}"), 0.0, inf, 0.0));
            }
            nv.value = Some(lp.add_var(format!("V_{id}"), -inf, inf, 0.0));
        }
        vars.push(nv);
    }

    for id in 0..topo.num_nodes() {
        let t = topo.stage_of(id);
        let leaf = t == horizon;
        let c = tree.coeff(id);
        let nv = vars[id].clone();
        if t == 0 {
            for i in 1..=n {
                lp.add_row(
                    format!("reb{i}_{id}"),
                    vec![(nv.x[i], 1.0), (nv.xp[i - 1], -1.0), (nv.xm[i - 1], 1.0)],
                    Sense::Eq,
                    holdings[i - 1],
                );
                lp.add_row(format!("sell{i}_{id}"), vec![(nv.xm[i - 1], 1.0)], Sense::Le, holdings[i - 1]);
            }
            let mut cash = vec![(nv.x[0], 1.0), (nv.k0.unwrap(), -1.0)];
            for i in 0..n {
                cash.push((nv.xm[i], -(1.0 - prm.cost_sell)));
                cash.push((nv.xp[i], 1.0 + prm.cost_buy));
            }
            lp.add_row(format!("cash_{id}"), cash, Sense::Eq, 0.0);
        } else {
            let a = topo.ancestor(id).unwrap();
            let av = &vars[a];
            let ca = tree.coeff(a);
            for i in 1..=n {
                let grow = 1.0 + c.r[i];
                let mut row = vec![(nv.x[i], 1.0), (av.x[i], -grow)];
                if !leaf {
                    row.push((nv.xp[i - 1], -1.0));
                    row.push((nv.xm[i - 1], 1.0));
                    lp.add_row(format!("sell{i}_{id}"), vec![(nv.xm[i - 1], 1.0), (av.x[i], -grow)], Sense::Le, 0.0);
                }
                lp.add_row(format!("reb{i}_{id}"), row, Sense::Eq, 0.0);
            }
            let mut cash = vec![(nv.x[0], 1.0), (av.x[0], -(1.0 + ca.r[0])), (nv.bm.unwrap(), 1.0)];
            if let Some(ab) = av.b {
                cash.push((ab, ca.r_minus * topo.gap_years(t - 1)));
            }
            if !leaf {
                cash.push((nv.bp.unwrap(), -1.0));
                for i in 0..n {
                    cash.push((nv.xm[i], -(1.0 - prm.cost_sell)));
                    cash.push((nv.xp[i], 1.0 + prm.cost_buy));
                }
            }
            lp.add_row(format!("cash_{id}"), cash, Sense::Eq, c.revenue - c.total_outflow());
            let mut debt = vec![(nv.b.unwrap(), 1.0), (nv.bm.unwrap(), 1.0)];
            if let Some(ab) = av.b {
                debt.push((ab, -1.0));
            }
            if let Some(bp) = nv.bp {
                debt.push((bp, -1.0));
            }
            lp.add_row(format!("debt_{id}"), debt, Sense::Eq, 0.0);

            // V = α b - (1 - α) Σ g x⁻ + θ.
            let mut val = vec![(nv.value.unwrap(), 1.0), (nv.b.unwrap(), -prm.alpha)];
            for i in 0..nv.xm.len() {
                val.push((nv.xm[i], (1.0 - prm.alpha) * c.g[i]));
            }
            if let Some(th) = nv.theta {
                val.push((th, -1.0));
            }
            lp.add_row(format!("value_{id}"), val, Sense::Eq, 0.0);
        }

        if leaf {
            continue;
        }
        // Portfolio limits.
        let risky = &nv.x[1..];
        for i in 0..n {
            if prm.theta_min > 0.0 {
                let mut row = vec![(risky[i], 1.0)];
                row.extend(risky.iter().map(|&v| (v, -prm.theta_min)));
                lp.add_row(format!("divlo{}_{id}", i + 1), row, Sense::Ge, 0.0);
            }
            if prm.theta_max < 1.0 {
                let mut row = vec![(risky[i], 1.0)];
                row.extend(risky.iter().map(|&v| (v, -prm.theta_max)));
                lp.add_row(format!("divhi{}_{id}", i + 1), row, Sense::Le, 0.0);
            }
        }
        if prm.equity_cap < 1.0 && equity.iter().any(|&e| e) {
            let mut row: Vec<(VarId, f64)> = (0..n).filter(|&k| equity[k]).map(|k| (risky[k], 1.0)).collect();
            row.extend(risky.iter().map(|&v| (v, -prm.equity_cap)));
            lp.add_row(format!("equity_{id}"), row, Sense::Le, 0.0);
        }
        let lam = c.total_liability();
        let dd = c.liability_dollar_duration();
        let dur: Vec<(VarId, f64)> = (0..n).filter(|&k| durations[k] != 0.0).map(|k| (risky[k], durations[k])).collect();
        lp.add_row(format!("durlo_{id}"), dur.clone(), Sense::Ge, dd - lam * prm.delta_bar);
        lp.add_row(format!("durhi_{id}"), dur, Sense::Le, dd + lam * prm.delta_bar);

        // Nested risk epigraph over the children.
        let kids = topo.children(id);
        let probs: Vec<f64> = kids.iter().map(|&k| topo.conditional_prob(k)).collect();
        let theta = nv.theta.unwrap();
        let mut def = vec![(theta, 1.0)];
        for (j, &m) in kids.iter().enumerate() {
            let vm = vars[m].value.unwrap();
            def.push((vm, -probs[j]));
            let z = lp.add_var(format!("z{j}_{id}"), 0.0, inf, 0.0);
            def.push((z, -prm.kappa * probs[j]));
            let mut row = vec![(z, 1.0), (vm, -1.0)];
            for (k, &q) in kids.iter().enumerate() {
                row.push((vars[q].value.unwrap(), probs[k]));
            }
            lp.add_row(format!("semi{j}_{id}"), merge(row), Sense::Ge, 0.0);
        }
        lp.add_row(format!("risk_{id}"), def, Sense::Eq, 0.0);
    }

    // Shortfall rows at the last-but-one stage.
    let mut ssd_rows = 0;
    if prm.phi > 0.0 {
        for id in topo.stage_nodes(horizon - 1) {
            let kids = topo.children(id);
            let probs: Vec<f64> = kids.iter().map(|&k| topo.conditional_prob(k)).collect();
            let bench: Vec<f64> = kids.iter().map(|&k| prm.phi * tree.coeff(k).total_liability()).collect();
            let dist = DiscreteDistribution::new(&bench, &probs).expect("conditional probabilities form a distribution");
            let c = tree.coeff(id);
            let nv = &vars[id];
            for (k, &eta) in dist.values().iter().enumerate() {
                let mut sum = Vec::with_capacity(kids.len());
                for (j, &m) in kids.iter().enumerate() {
                    let s = lp.add_var(format!("s{k}_{j}_{id}"), 0.0, inf, 0.0);
                    let cm = tree.coeff(m);
                    // s + X_m >= η.
                    let mut row = vec![(s, 1.0), (nv.x[0], 1.0 + c.r[0])];
                    for i in 1..=n {
                        row.push((nv.x[i], 1.0 + cm.r[i]));
                    }
                    lp.add_row(format!("short{k}_{j}_{id}"), row, Sense::Ge, eta);
                    sum.push((s, probs[j]));
                }
                lp.add_row(format!("ssd{k}_{id}"), sum, Sense::Le, dist.integrated_cdf(eta));
                ssd_rows += 1;
            }
        }
    }
    Ok(ExtensiveModel {
        model: lp,
        nodes: vars,
        ssd_rows,
    })
}

fn merge(mut coeffs: Vec<(VarId, f64)>) -> Vec<(VarId, f64)> {
    coeffs.sort_by_key(|&(v, _)| v);
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(coeffs.len());
    for (v, a) in coeffs {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += a,
            _ => out.push((v, a)),
        }
    }
    out
}

/// Root decisions of a solve: holdings (cash first) followed by K_0.
pub type RootDecision = Vec<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct ExtensiveSolution {
    pub feasible: bool,
    /// NaN when infeasible.
    pub objective: f64,
    pub root: RootDecision,
    /// Holdings per node, cash first.
    pub x: Vec<Vec<f64>>,
    /// Stage cost per node: `β K_0` at the root, `α b - (1 - α) Σ g x⁻` elsewhere.
    pub stage_cost: Vec<f64>,
    /// Epigraph value of the nested risk below each non-leaf node.
    pub theta: Vec<Option<f64>>,
}

pub fn solve_extensive(tree: &ScenarioTree, cfg: &RunConfig) -> Result<ExtensiveSolution, OracleError> {
    let ext = build_extensive(tree, cfg)?;
    let sol = lp::solve(&ext.model, &SolverOptions::default())?;
    match sol.status {
        Status::Optimal => {
            let x: Vec<Vec<f64>> = ext.nodes.iter().map(|nv| nv.x.iter().map(|&v| sol.x[v]).collect()).collect();
            let mut root = x[0].clone();
            let k0 = sol.x[ext.nodes[0].k0.unwrap()];
            root.push(k0);
            let m = &cfg.model;
            let stage_cost = ext
                .nodes
                .iter()
                .enumerate()
                .map(|(id, nv)| match nv.b {
                    None => m.beta * k0,
                    Some(b) => {
                        let g = &tree.coeff(id).g;
                        let profit: f64 = nv.xm.iter().zip(g).map(|(&v, gi)| gi * sol.x[v]).sum();
                        m.alpha * sol.x[b] - (1.0 - m.alpha) * profit
                    }
                })
                .collect();
            let theta = ext.nodes.iter().map(|nv| nv.theta.map(|v| sol.x[v])).collect();
            Ok(ExtensiveSolution {
                feasible: true,
                objective: sol.objective,
                root,
                x,
                stage_cost,
                theta,
            })
        }
        Status::Infeasible => Ok(ExtensiveSolution {
            feasible: false,
            objective: f64::NAN,
            root: Vec::new(),
            x: Vec::new(),
            stage_cost: Vec::new(),
            theta: Vec::new(),
        }),
        Status::Unbounded => Err(OracleError::Lp(LpError::NumericFailure("extensive form is unbounded".into()))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub extensive_feasible: bool,
    pub decomposer_feasible: bool,
    pub extensive_objective: Option<f64>,
    pub decomposer_objective: Option<f64>,
    /// |a - b| / max(|a|, 1e-12) for the extensive objective a; set when both are feasible.
    pub relative_gap: Option<f64>,
    /// Largest absolute difference in root holdings and K_0.
    pub root_deviation: Option<f64>,
    pub decomposer_iterations: usize,
}

impl OracleReport {
    pub fn agrees(&self, gap_tol: f64) -> bool {
        self.extensive_feasible == self.decomposer_feasible && self.relative_gap.map_or(true, |g| g <= gap_tol)
    }
}

pub fn oracle_compare(tree: &ScenarioTree, cfg: &RunConfig) -> Result<OracleReport, OracleError> {
    let ext = solve_extensive(tree, cfg)?;
    let dec = Decomposer::new(tree, cfg)?.run()?;
    let dec_ok = dec.status == RunStatus::Optimal;
    let (gap, dev) = match (ext.feasible, dec_ok, dec.objective) {
        (true, true, Some(obj)) => {
            let mut root = dec.nodes[0].x.clone();
            root.push(dec.nodes[0].k0);
            let dev = root.iter().zip(&ext.root).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (Some((ext.objective - obj).abs() / ext.objective.abs().max(1e-12)), Some(dev))
        }
        _ => (None, None),
    };
    Ok(OracleReport {
        extensive_feasible: ext.feasible,
        decomposer_feasible: dec_ok,
        extensive_objective: ext.feasible.then_some(ext.objective),
        decomposer_objective: dec.objective.filter(|_| dec_ok),
        relative_gap: gap,
        root_deviation: dev,
        decomposer_iterations: dec.iterations,
    })
}
