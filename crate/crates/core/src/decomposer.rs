//! Nested multicut decomposition over the scenario tree.
//!
//! Every node owns a small LP whose right-hand side is affine in the state of
//! its ancestor, `s = (x_0, x_1, .., x_I, b)`. Solving a node yields a value
//! and, through the duals, a supporting hyperplane of its cost-to-go in `s`;
//! that hyperplane becomes an objective cut in the ancestor's LP. Infeasible
//! nodes return a feasibility cut built from the phase-one certificate. Risk
//! cuts approximate the mean-semideviation of the children's values and event
//! cuts impose second-order dominance over the scaled liabilities at the
//! last-but-one stage.
//!
//! One outer iteration is a backward sweep (leaves to root) followed by a
//! forward sweep (stage 1 to leaves). A node is solved only when flagged:
//! its ancestor's state changed or a child produced a new cut. The method
//! stops when no node is flagged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dominance::{separation_oracle, DiscreteDistribution};
use crate::lp::{self, LinearModel, LpError, RowId, Sense, SolverOptions, Status, VarId};
use crate::risk;
use crate::tree::{ScenarioTree, TreeError, TreeTopology};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("tree and config disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("subproblem at node {0} is unbounded")]
    Unbounded(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    Interior,
    LastButOne,
    Leaf,
}

/// `v_child >= intercept + gradient · s` on the owner's own state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCut {
    /// Position of the child among the owner's children.
    pub child: usize,
    pub gradient: Vec<f64>,
    pub intercept: f64,
    pub iteration: usize,
}

impl ObjectiveCut {
    pub fn value(&self, s: &[f64]) -> f64 {
        self.intercept + dot(&self.gradient, s)
    }
}

/// `gradient · s <= rhs` on the owner's own state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCut {
    pub child: usize,
    pub gradient: Vec<f64>,
    pub rhs: f64,
    pub iteration: usize,
}

/// `w >= Σ p_m μ_m v_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCutRecord {
    pub mu: Vec<f64>,
    pub iteration: usize,
}

/// `Σ_{m in S} p_m X_m >= L(P(S))` for the benchmark's Lorenz function `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventCut {
    pub children: Vec<usize>,
    pub prob: f64,
    pub lorenz: f64,
    pub iteration: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutPools {
    pub objective: Vec<ObjectiveCut>,
    pub feasibility: Vec<FeasibilityCut>,
    pub risk: Vec<RiskCutRecord>,
    pub events: Vec<EventCut>,
}

/// Decisions and diagnostics of one solved node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSolution {
    pub id: usize,
    pub stage: usize,
    pub kind: NodeKind,
    /// Holdings after rebalancing, cash first.
    pub x: Vec<f64>,
    pub x_plus: Vec<f64>,
    pub x_minus: Vec<f64>,
    pub b: f64,
    pub b_plus: f64,
    pub b_minus: f64,
    pub k0: f64,
    /// Cost-to-go estimates of the children.
    pub v: Vec<f64>,
    pub w: f64,
    /// Optimal value of the node LP.
    pub objective: f64,
    pub event_cuts: usize,
    pub active_event_cuts: usize,
}

impl NodeSolution {
    pub fn state(&self) -> Vec<f64> {
        let mut s = self.x.clone();
        s.push(self.b);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    /// Converged with some child value at `-M` or risk value at `w̲`: the
    /// model is unbounded or the floors are too tight.
    Unbounded,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutCounts {
    pub objective: usize,
    pub feasibility: usize,
    pub risk: usize,
    pub event: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub nodes_solved: usize,
    pub cuts: CutCounts,
    /// Root objective after the iteration; absent when the root was infeasible.
    pub root_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    /// Root objective; absent when the root was never solved.
    pub objective: Option<f64>,
    pub k0: Option<f64>,
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
    pub nodes: Vec<NodeSolution>,
    pub cuts: CutCounts,
    /// Largest inner-loop length of a node solve divided by its child count.
    pub max_inner_ratio: f64,
    /// Node solves whose event loop hit its iteration budget.
    pub event_budget_hits: usize,
    pub init_from_worst_case: bool,
    /// Final cut pools per node; not part of the saved solution.
    #[serde(skip, default)]
    pub pools: Vec<CutPools>,
}

impl RunResult {
    pub fn objective_cuts_per_iteration(&self) -> Vec<usize> {
        self.log.iter().map(|r| r.cuts.objective).collect()
    }
}

/// Variable ids of one node LP.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    pub x: Vec<VarId>,
    pub xp: Vec<VarId>,
    pub xm: Vec<VarId>,
    pub b: Option<VarId>,
    pub bp: Option<VarId>,
    pub bm: Option<VarId>,
    pub k0: Option<VarId>,
    pub v: Vec<VarId>,
    pub w: Option<VarId>,
}

/// A node LP with the dependence of its rhs on the ancestor state.
#[derive(Clone, Debug)]
pub struct NodeLp {
    pub model: LinearModel,
    pub layout: Layout,
    /// `(row, state index, coefficient)`: `d rhs_row / d s_k`.
    pub deps: Vec<(RowId, usize, f64)>,
    pub event_rows: Vec<RowId>,
}

impl NodeLp {
    fn sensitivity(&self, duals: &[f64], dim: usize) -> Vec<f64> {
        let mut g = vec![0.0; dim];
        for &(r, k, c) in &self.deps {
            g[k] += duals[r] * c;
        }
        g
    }
}

enum Outcome {
    Solved {
        solution: NodeSolution,
        gradient: Vec<f64>,
        new_risk: Vec<Vec<f64>>,
        new_events: Vec<EventCut>,
        inner: usize,
        budget_hit: bool,
    },
    Infeasible {
        phase_one: f64,
        gradient: Vec<f64>,
    },
}

struct NodeState {
    state: Vec<f64>,
    solution: Option<NodeSolution>,
    pools: CutPools,
    flagged: bool,
}

#[derive(Default)]
struct SweepStats {
    solved: usize,
    cuts: CutCounts,
    root_infeasible: bool,
    max_inner_ratio: f64,
    budget_hits: usize,
}

pub struct Decomposer<'a> {
    tree: &'a ScenarioTree,
    cfg: &'a RunConfig,
    durations: Vec<f64>,
    equity: Vec<bool>,
    holdings: Vec<f64>,
    lp_opts: SolverOptions,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Decomposer<'a> {
    pub fn new(tree: &'a ScenarioTree, cfg: &'a RunConfig) -> Result<Self, DecomposeError> {
        if tree.n_assets != cfg.n_assets() {
            return Err(DecomposeError::Mismatch(format!(
                "tree has {} assets, config {}",
                tree.n_assets,
                cfg.n_assets()
            )));
        }
        if tree.topology.horizon() == 0 {
            return Err(DecomposeError::Mismatch("tree needs at least one stage after the root".into()));
        }
        Ok(Self {
            tree,
            cfg,
            durations: cfg.durations(),
            equity: cfg.is_equity(),
            holdings: cfg.initial_holdings(),
            lp_opts: SolverOptions::default(),
        })
    }

    fn topo(&self) -> &TreeTopology {
        &self.tree.topology
    }

    fn n_assets(&self) -> usize {
        self.tree.n_assets
    }

    fn state_dim(&self) -> usize {
        self.n_assets() + 2
    }

    pub fn kind(&self, id: usize) -> NodeKind {
        let topo = self.topo();
        let t = topo.stage_of(id);
        if t == 0 {
            NodeKind::Root
        } else if t == topo.horizon() {
            NodeKind::Leaf
        } else if t + 1 == topo.horizon() {
            NodeKind::LastButOne
        } else {
            NodeKind::Interior
        }
    }

    fn has_events(&self, id: usize) -> bool {
        self.cfg.model.phi > 0.0 && self.topo().stage_of(id) + 1 == self.topo().horizon()
    }

    /// Benchmark φΛ over the children of `id`.
    pub fn benchmark(&self, id: usize) -> DiscreteDistribution {
        let kids = self.topo().children(id);
        let vals: Vec<f64> = kids
            .iter()
            .map(|&m| self.cfg.model.phi * self.tree.coeff(m).total_liability())
            .collect();
        let probs: Vec<f64> = kids.iter().map(|&m| self.topo().conditional_prob(m)).collect();
        DiscreteDistribution::new(&vals, &probs).expect("conditional probabilities form a distribution")
    }

    /// Portfolio values carried into each child.
    pub fn child_values(&self, id: usize, x: &[f64]) -> Vec<f64> {
        self.tree.carried_values(id, x)
    }

    /// The LP of node `id` given the ancestor state (ignored at the root).
    pub fn build_node_lp(&self, id: usize, anc: &[f64], pools: &CutPools) -> NodeLp {
        let topo = self.topo();
        let m = &self.cfg.model;
        let n = self.n_assets();
        let kind = self.kind(id);
        let c = self.tree.coeff(id);
        let stage = topo.stage_of(id);
        let mut lp = LinearModel::new();
        let mut lay = Layout::default();
        let mut deps = Vec::new();
        let inf = f64::INFINITY;

        lay.x = (0..=n).map(|i| lp.add_var(format!("x{i}_{id}"), 0.0, inf, 0.0)).collect();
        if kind != NodeKind::Leaf {
            lay.xp = (1..=n).map(|i| lp.add_var(format!("xp{i}_{id}"), 0.0, inf, 0.0)).collect();
            lay.xm = (1..=n)
                .map(|i| {
                    let cost = if kind == NodeKind::Root { 0.0 } else { -(1.0 - m.alpha) * c.g[i - 1] };
                    lp.add_var(format!("xm{i}_{id}"), 0.0, inf, cost)
                })
                .collect();
        }
        if kind == NodeKind::Root {
            lay.k0 = Some(lp.add_var("K0", 0.0, inf, m.beta));
        } else {
            lay.b = Some(lp.add_var(format!("b_{id}"), 0.0, inf, m.alpha));
            if kind != NodeKind::Leaf {
                lay.bp = Some(lp.add_var(format!("bp_{id}"), 0.0, inf, 0.0));
            }
            lay.bm = Some(lp.add_var(format!("bm_{id}"), 0.0, inf, 0.0));
        }

        // Balance rows.
        match kind {
            NodeKind::Root => {
                for i in 1..=n {
                    let (xp, xm) = (lay.xp[i - 1], lay.xm[i - 1]);
                    lp.add_row(
                        format!("reb{i}_{id}"),
                        vec![(lay.x[i], 1.0), (xp, -1.0), (xm, 1.0)],
                        Sense::Eq,
                        self.holdings[i - 1],
                    );
                    lp.add_row(format!("sell{i}_{id}"), vec![(xm, 1.0)], Sense::Le, self.holdings[i - 1]);
                }
                let mut cash = vec![(lay.x[0], 1.0), (lay.k0.unwrap(), -1.0)];
                for i in 0..n {
                    cash.push((lay.xm[i], -(1.0 - m.cost_sell)));
                    cash.push((lay.xp[i], 1.0 + m.cost_buy));
                }
                lp.add_row(format!("cash_{id}"), cash, Sense::Eq, 0.0);
            }
            _ => {
                let a = topo.ancestor(id).unwrap();
                let ca = self.tree.coeff(a);
                let gap = topo.gap_years(stage - 1);
                let debt_rate = ca.r_minus * gap;
                let b_idx = n + 1;
                for i in 1..=n {
                    let grow = 1.0 + c.r[i];
                    let coeffs = if kind == NodeKind::Leaf {
                        vec![(lay.x[i], 1.0)]
                    } else {
                        vec![(lay.x[i], 1.0), (lay.xp[i - 1], -1.0), (lay.xm[i - 1], 1.0)]
                    };
                    let r = lp.add_row(format!("reb{i}_{id}"), coeffs, Sense::Eq, grow * anc[i]);
                    deps.push((r, i, grow));
                    if kind != NodeKind::Leaf {
                        let r = lp.add_row(format!("sell{i}_{id}"), vec![(lay.xm[i - 1], 1.0)], Sense::Le, grow * anc[i]);
                        deps.push((r, i, grow));
                    }
                }
                let mut cash = vec![(lay.x[0], 1.0), (lay.bm.unwrap(), 1.0)];
                if kind != NodeKind::Leaf {
                    cash.push((lay.bp.unwrap(), -1.0));
                    for i in 0..n {
                        cash.push((lay.xm[i], -(1.0 - m.cost_sell)));
                        cash.push((lay.xp[i], 1.0 + m.cost_buy));
                    }
                }
                let net = c.revenue - c.total_outflow();
                let rhs = (1.0 + ca.r[0]) * anc[0] - debt_rate * anc[b_idx] + net;
                let r = lp.add_row(format!("cash_{id}"), cash, Sense::Eq, rhs);
                deps.push((r, 0, 1.0 + ca.r[0]));
                deps.push((r, b_idx, -debt_rate));
                let mut debt = vec![(lay.b.unwrap(), 1.0), (lay.bm.unwrap(), 1.0)];
                if let Some(bp) = lay.bp {
                    debt.push((bp, -1.0));
                }
                let r = lp.add_row(format!("debt_{id}"), debt, Sense::Eq, anc[b_idx]);
                deps.push((r, b_idx, 1.0));
            }
        }

        if kind != NodeKind::Leaf {
            self.portfolio_rows(&mut lp, &lay, id);
            let kids = topo.children(id);
            let probs: Vec<f64> = kids.iter().map(|&k| topo.conditional_prob(k)).collect();
            lay.v = (0..kids.len())
                .map(|j| lp.add_var(format!("v{j}_{id}"), -m.big_m, inf, 0.0))
                .collect();
            let w = lp.add_var(format!("w_{id}"), m.w_floor, inf, 1.0);
            lay.w = Some(w);
            let svars = self.state_vars(&lay);
            for (k, cut) in pools.objective.iter().enumerate() {
                let mut coeffs = vec![(lay.v[cut.child], 1.0)];
                for &(var, k) in &svars {
                    if cut.gradient[k] != 0.0 {
                        coeffs.push((var, -cut.gradient[k]));
                    }
                }
                lp.add_row(format!("ocut{k}_{id}"), coeffs, Sense::Ge, cut.intercept);
            }
            for (k, cut) in pools.feasibility.iter().enumerate() {
                let coeffs = svars
                    .iter()
                    .filter(|&&(_, k)| cut.gradient[k] != 0.0)
                    .map(|&(var, k)| (var, cut.gradient[k]))
                    .collect();
                lp.add_row(format!("fcut{k}_{id}"), coeffs, Sense::Le, cut.rhs);
            }
            let mut risk_cuts = vec![vec![1.0; kids.len()]];
            risk_cuts.extend(pools.risk.iter().map(|r| r.mu.clone()));
            for (k, mu) in risk_cuts.iter().enumerate() {
                let mut coeffs = vec![(w, 1.0)];
                for j in 0..kids.len() {
                    coeffs.push((lay.v[j], -probs[j] * mu[j]));
                }
                lp.add_row(format!("rcut{k}_{id}"), coeffs, Sense::Ge, 0.0);
            }
        }

        let mut event_rows = Vec::new();
        if self.has_events(id) {
            let kids = topo.children(id);
            let all = EventCut {
                children: (0..kids.len()).collect(),
                prob: 1.0,
                lorenz: self.benchmark(id).mean(),
                iteration: 0,
            };
            for (k, ev) in std::iter::once(&all).chain(&pools.events).enumerate() {
                let mut coeffs = vec![(lay.x[0], 0.0)];
                for &j in &ev.children {
                    let p = topo.conditional_prob(kids[j]);
                    let cm = self.tree.coeff(kids[j]);
                    coeffs[0].1 += p * (1.0 + c.r[0]);
                    for i in 1..=n {
                        coeffs.push((lay.x[i], p * (1.0 + cm.r[i])));
                    }
                }
                event_rows.push(lp.add_row(format!("ecut{k}_{id}"), merge(coeffs), Sense::Ge, ev.lorenz));
            }
        }
        NodeLp {
            model: lp,
            layout: lay,
            deps,
            event_rows,
        }
    }

    /// Diversification, equity and duration rows.
    fn portfolio_rows(&self, lp: &mut LinearModel, lay: &Layout, id: usize) {
        let m = &self.cfg.model;
        let n = self.n_assets();
        let c = self.tree.coeff(id);
        let risky = &lay.x[1..];
        for i in 0..n {
            if m.theta_min > 0.0 {
                let coeffs = (0..n)
                    .map(|k| (risky[k], if k == i { 1.0 - m.theta_min } else { -m.theta_min }))
                    .collect();
                lp.add_row(format!("divlo{}_{id}", i + 1), coeffs, Sense::Ge, 0.0);
            }
            if m.theta_max < 1.0 {
                let coeffs = (0..n)
                    .map(|k| (risky[k], if k == i { 1.0 - m.theta_max } else { -m.theta_max }))
                    .collect();
                lp.add_row(format!("divhi{}_{id}", i + 1), coeffs, Sense::Le, 0.0);
            }
        }
        if m.equity_cap < 1.0 && self.equity.iter().any(|&e| e) {
            let coeffs = (0..n)
                .map(|k| (risky[k], if self.equity[k] { 1.0 - m.equity_cap } else { -m.equity_cap }))
                .collect();
            lp.add_row(format!("equity_{id}"), coeffs, Sense::Le, 0.0);
        }
        let lam = c.total_liability();
        let dd = c.liability_dollar_duration();
        let coeffs: Vec<(VarId, f64)> = (0..n)
            .filter(|&k| self.durations[k] != 0.0)
            .map(|k| (risky[k], self.durations[k]))
            .collect();
        lp.add_row(format!("durlo_{id}"), coeffs.clone(), Sense::Ge, dd - lam * m.delta_bar);
        lp.add_row(format!("durhi_{id}"), coeffs, Sense::Le, dd + lam * m.delta_bar);
    }

    /// Variables forming the node's own state, with their state index.
    fn state_vars(&self, lay: &Layout) -> Vec<(VarId, usize)> {
        let mut out: Vec<(VarId, usize)> = lay.x.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        // The root carries no debt, so cut coefficients on that coordinate drop out.
        if let Some(b) = lay.b {
            out.push((b, self.n_assets() + 1));
        }
        out
    }

    fn extract(&self, id: usize, nlp: &NodeLp, sol: &lp::Solution) -> NodeSolution {
        let lay = &nlp.layout;
        let val = |v: Option<VarId>| v.map_or(0.0, |v| sol.x[v]);
        let active = nlp
            .event_rows
            .iter()
            .filter(|&&r| nlp.model.row_activity(r, &sol.x) - nlp.model.row(r).rhs < 1e-6)
            .count();
        NodeSolution {
            id,
            stage: self.topo().stage_of(id),
            kind: self.kind(id),
            x: lay.x.iter().map(|&v| sol.x[v]).collect(),
            x_plus: lay.xp.iter().map(|&v| sol.x[v]).collect(),
            x_minus: lay.xm.iter().map(|&v| sol.x[v]).collect(),
            b: val(lay.b),
            b_plus: val(lay.bp),
            b_minus: val(lay.bm),
            k0: val(lay.k0),
            v: lay.v.iter().map(|&v| sol.x[v]).collect(),
            w: val(lay.w),
            objective: sol.objective,
            event_cuts: nlp.event_rows.len(),
            active_event_cuts: active,
        }
    }

    /// Solve one node, looping over risk and event cuts until neither is violated.
    fn solve_node(&self, id: usize, anc: &[f64], pools: &CutPools, iteration: usize) -> Result<Outcome, DecomposeError> {
        let topo = self.topo();
        let kids = topo.children(id);
        let probs: Vec<f64> = kids.iter().map(|&k| topo.conditional_prob(k)).collect();
        let kappa = self.cfg.model.kappa;
        let budget = self.cfg.solver.event_loop_factor * kids.len().max(1);
        let mut local = pools.clone();
        let mut new_risk = Vec::new();
        let mut new_events = Vec::new();
        let bench = self.has_events(id).then(|| self.benchmark(id));
        let mut inner = 0;
        loop {
            inner += 1;
            let nlp = self.build_node_lp(id, anc, &local);
            let sol = lp::solve(&nlp.model, &self.lp_opts)?;
            match sol.status {
                Status::Unbounded => return Err(DecomposeError::Unbounded(id)),
                Status::Infeasible => {
                    let cert = sol.certificate.expect("infeasible solves carry a certificate");
                    return Ok(Outcome::Infeasible {
                        phase_one: cert.phase_one_value,
                        gradient: nlp.sensitivity(&cert.duals, self.state_dim()),
                    });
                }
                Status::Optimal => {}
            }
            let solution = self.extract(id, &nlp, &sol);
            let mut added = false;
            if !kids.is_empty() {
                let rho = risk::mean_semideviation(&solution.v, &probs, kappa);
                if rho > solution.w + 1e-9 * (1.0 + rho.abs()) {
                    let mu = risk::risk_cut(&solution.v, &probs, kappa).mu;
                    local.risk.push(RiskCutRecord { mu: mu.clone(), iteration });
                    new_risk.push(mu);
                    added = true;
                }
            }
            if let Some(bench) = &bench {
                let xs = self.child_values(id, &solution.x);
                let sep = separation_oracle(&xs, &probs, bench);
                if sep.delta > self.cfg.solver.ssd_tol {
                    let ev = EventCut {
                        lorenz: bench.lorenz(sep.event_prob),
                        children: sep.event,
                        prob: sep.event_prob,
                        iteration,
                    };
                    local.events.push(ev.clone());
                    new_events.push(ev);
                    added = true;
                }
            }
            let budget_hit = added && inner >= budget;
            if !added || budget_hit {
                return Ok(Outcome::Solved {
                    gradient: nlp.sensitivity(&sol.duals, self.state_dim()),
                    solution,
                    new_risk,
                    new_events,
                    inner,
                    budget_hit,
                });
            }
        }
    }

    /// All-cash guess large enough to cover every liability along any path.
    pub fn fallback_states(&self) -> Vec<Vec<f64>> {
        let topo = self.topo();
        let mut cover = 0.0;
        for t in 1..=topo.horizon() {
            cover += topo
                .stage_nodes(t)
                .map(|k| self.tree.coeff(k).total_outflow())
                .fold(0.0, f64::max);
        }
        cover += (0..topo.num_nodes())
            .map(|k| self.tree.coeff(k).total_liability())
            .fold(0.0, f64::max);
        let mut s = vec![0.0; self.state_dim()];
        s[0] = cover;
        vec![s; topo.num_nodes()]
    }

    /// Solve the single scenario with the largest liabilities and broadcast
    /// its stage decisions to every node of the same stage.
    pub fn worst_case_states(&self) -> Result<Option<Vec<Vec<f64>>>, DecomposeError> {
        let topo = self.topo();
        let worst = topo
            .leaves()
            .max_by(|&a, &b| {
                let la: f64 = topo.path(a).iter().map(|&k| self.tree.coeff(k).total_liability()).sum();
                let lb: f64 = topo.path(b).iter().map(|&k| self.tree.coeff(k).total_liability()).sum();
                la.total_cmp(&lb).then(b.cmp(&a))
            })
            .unwrap();
        let path = topo.path(worst);
        let chain_topo = TreeTopology::build(topo.stage_dates(), &vec![1; topo.horizon()])?;
        let coeffs = path.iter().map(|&k| self.tree.coeff(k).clone()).collect();
        let chain = ScenarioTree::new(chain_topo, coeffs, self.tree.n_assets, self.tree.n_liabilities)?;
        let mut cfg = self.cfg.clone();
        cfg.solver.worst_case_init = false;
        let inner = Decomposer::new(&chain, &cfg)?;
        let res = inner.run()?;
        if res.status != RunStatus::Optimal {
            return Ok(None);
        }
        Ok(Some(
            (0..topo.num_nodes())
                .map(|k| res.nodes[topo.stage_of(k)].state())
                .collect(),
        ))
    }

    pub fn run(&self) -> Result<RunResult, DecomposeError> {
        let (init, from_worst) = if self.cfg.solver.worst_case_init {
            match self.worst_case_states()? {
                Some(s) => (s, true),
                None => (self.fallback_states(), false),
            }
        } else {
            (self.fallback_states(), false)
        };
        self.run_from(init, from_worst)
    }

    pub fn run_from(&self, init: Vec<Vec<f64>>, from_worst: bool) -> Result<RunResult, DecomposeError> {
        let topo = self.topo();
        let horizon = topo.horizon();
        let mut nodes: Vec<NodeState> = init
            .into_iter()
            .map(|state| NodeState {
                state,
                solution: None,
                pools: CutPools::default(),
                flagged: true,
            })
            .collect();
        let mut log = Vec::new();
        let mut totals = CutCounts::default();
        let mut max_ratio: f64 = 0.0;
        let mut budget_hits = 0;
        let mut status = RunStatus::IterationLimit;
        let mut iterations = 0;
        for it in 1..=self.cfg.solver.max_iterations {
            iterations = it;
            let mut stats = SweepStats::default();
            for t in (0..=horizon).rev() {
                self.sweep(t, it, &mut nodes, &mut stats)?;
                if stats.root_infeasible {
                    break;
                }
            }
            if !stats.root_infeasible {
                for t in 1..=horizon {
                    self.sweep(t, it, &mut nodes, &mut stats)?;
                }
            }
            totals.objective += stats.cuts.objective;
            totals.feasibility += stats.cuts.feasibility;
            totals.risk += stats.cuts.risk;
            totals.event += stats.cuts.event;
            max_ratio = max_ratio.max(stats.max_inner_ratio);
            budget_hits += stats.budget_hits;
            log.push(IterationRecord {
                iteration: it,
                nodes_solved: stats.solved,
                cuts: stats.cuts,
                root_bound: if stats.root_infeasible { None } else { nodes[0].solution.as_ref().map(|s| s.objective) },
            });
            if stats.root_infeasible {
                status = RunStatus::Infeasible;
                break;
            }
            if nodes.iter().all(|n| !n.flagged) {
                status = RunStatus::Optimal;
                break;
            }
        }
        if status == RunStatus::Optimal && nodes.iter().any(|n| n.solution.as_ref().is_some_and(|s| self.at_floor(s))) {
            status = RunStatus::Unbounded;
        }
        let root = nodes[0].solution.clone();
        let solutions: Vec<NodeSolution> = if status == RunStatus::Infeasible {
            Vec::new()
        } else {
            nodes.iter().filter_map(|n| n.solution.clone()).collect()
        };
        Ok(RunResult {
            status,
            objective: root.as_ref().map(|r| r.objective),
            k0: root.as_ref().map(|r| r.k0),
            iterations,
            log,
            nodes: solutions,
            cuts: totals,
            max_inner_ratio: max_ratio,
            event_budget_hits: budget_hits,
            init_from_worst_case: from_worst,
            pools: nodes.into_iter().map(|n| n.pools).collect(),
        })
    }

    fn at_floor(&self, s: &NodeSolution) -> bool {
        let m = &self.cfg.model;
        let tol = self.cfg.solver.tol;
        let near = |x: f64, floor: f64| x <= floor + tol * (1.0 + floor.abs());
        s.v.iter().any(|&v| near(v, -m.big_m)) || (s.kind != NodeKind::Leaf && near(s.w, m.w_floor))
    }

    fn sweep(&self, t: usize, it: usize, nodes: &mut [NodeState], stats: &mut SweepStats) -> Result<(), DecomposeError> {
        let topo = self.topo();
        let tol = self.cfg.solver.tol;
        let ids: Vec<usize> = topo.stage_nodes(t).filter(|&k| nodes[k].flagged).collect();
        let shared: &[NodeState] = nodes;
        let outcomes: Vec<Result<Outcome, DecomposeError>> = ids
            .par_iter()
            .map(|&id| {
                let anc = match topo.ancestor(id) {
                    Some(a) => shared[a].state.as_slice(),
                    None => &[],
                };
                self.solve_node(id, anc, &shared[id].pools, it)
            })
            .collect();
        for (&id, out) in ids.iter().zip(outcomes) {
            nodes[id].flagged = false;
            stats.solved += 1;
            let anc = topo.ancestor(id);
            let child_pos = anc.map(|a| topo.children(a).iter().position(|&k| k == id).unwrap());
            match out? {
                Outcome::Infeasible { phase_one, gradient } => {
                    let Some(a) = anc else {
                        stats.root_infeasible = true;
                        return Ok(());
                    };
                    let rhs = dot(&gradient, &nodes[a].state) - phase_one;
                    nodes[a].pools.feasibility.push(FeasibilityCut {
                        child: child_pos.unwrap(),
                        gradient,
                        rhs,
                        iteration: it,
                    });
                    nodes[a].flagged = true;
                    stats.cuts.feasibility += 1;
                }
                Outcome::Solved {
                    solution,
                    gradient,
                    new_risk,
                    new_events,
                    inner,
                    budget_hit,
                } => {
                    let n_kids = topo.children(id).len().max(1);
                    stats.max_inner_ratio = stats.max_inner_ratio.max(inner as f64 / n_kids as f64);
                    stats.budget_hits += budget_hit as usize;
                    stats.cuts.risk += new_risk.len();
                    stats.cuts.event += new_events.len();
                    let node = &mut nodes[id];
                    node.pools.risk.extend(new_risk.into_iter().map(|mu| RiskCutRecord { mu, iteration: it }));
                    node.pools.events.extend(new_events);
                    let state = solution.state();
                    let changed = node.solution.is_none()
                        || state.iter().zip(&node.state).any(|(a, b)| (a - b).abs() > tol * (1.0 + b.abs()));
                    if changed {
                        node.state = state;
                        for &k in topo.children(id) {
                            nodes[k].flagged = true;
                        }
                    }
                    let value = solution.objective;
                    nodes[id].solution = Some(solution);
                    if let Some(a) = anc {
                        let pos = child_pos.unwrap();
                        let s = &nodes[a].state;
                        let model = nodes[a]
                            .pools
                            .objective
                            .iter()
                            .filter(|c| c.child == pos)
                            .map(|c| c.value(s))
                            .fold(-self.cfg.model.big_m, f64::max);
                        if value > model + tol * (1.0 + value.abs()) {
                            let intercept = value - dot(&gradient, s);
                            nodes[a].pools.objective.push(ObjectiveCut {
                                child: pos,
                                gradient,
                                intercept,
                                iteration: it,
                            });
                            nodes[a].flagged = true;
                            stats.cuts.objective += 1;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sum coefficients of repeated variables.
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
