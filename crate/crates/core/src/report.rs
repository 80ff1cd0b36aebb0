//! Tables, CDF exports and checks derived from a saved solve.
//!
//! Everything here is a pure function of a [`SolutionFile`] and its tree, so
//! re-running a report on stored artifacts reproduces it exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::decomposer::{CutCounts, CutPools, DecomposeError, Decomposer, NodeSolution, RunResult, RunStatus};
use crate::dominance::{cdf_points, integrated_cdf_points, ssd_dominates, DiscreteDistribution};
use crate::extensive::{oracle_compare, OracleError, OracleReport};
use crate::tree::{ScenarioTree, TreeError};

/// Slack below which a constraint counts as active.
pub const ACTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run has no policy to report (status {0:?})")]
    NoPolicy(RunStatus),
    #[error("solution does not match the tree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("solution file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A solve as stored on disk: inputs, the run, and a φ = 0 companion run
/// used for the with/without-dominance comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub config: RunConfig,
    /// The tree in its text form.
    pub tree: String,
    pub result: RunResult,
    pub baseline: Option<RunResult>,
}

impl SolutionFile {
    pub fn solve(tree: &ScenarioTree, cfg: &RunConfig) -> Result<Self, DecomposeError> {
        let result = Decomposer::new(tree, cfg)?.run()?;
        let baseline = if cfg.model.phi > 0.0 {
            let mut free = cfg.clone();
            free.model.phi = 0.0;
            Some(Decomposer::new(tree, &free)?.run()?)
        } else {
            None
        };
        Ok(Self {
            config: cfg.clone(),
            tree: tree.to_text(),
            result,
            baseline,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn tree(&self) -> Result<ScenarioTree, ReportError> {
        Ok(ScenarioTree::from_text(&self.tree)?)
    }
}

/// Node decisions indexed by node id.
fn policy<'r>(res: &'r RunResult, tree: &ScenarioTree) -> Result<Vec<&'r NodeSolution>, ReportError> {
    if res.nodes.is_empty() {
        return Err(ReportError::NoPolicy(res.status));
    }
    let n = tree.topology.num_nodes();
    if res.nodes.len() != n || res.nodes.iter().enumerate().any(|(k, s)| s.id != k) {
        return Err(ReportError::Mismatch(format!("{} node solutions for {n} nodes", res.nodes.len())));
    }
    Ok(res.nodes.iter().collect())
}

fn weighted_moments(values: &[(f64, f64)]) -> (f64, f64) {
    let mean: f64 = values.iter().map(|(p, v)| p * v).sum();
    let var: f64 = values.iter().map(|(p, v)| p * (v - mean).powi(2)).sum();
    (mean, var.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub year: f64,
    pub debt_mean: f64,
    pub debt_std: f64,
    /// Realised profits Σ g x⁻ summed along the path to the node.
    pub profit_mean: f64,
    pub profit_std: f64,
    /// Probability-weighted portfolio value over Λ; absent if some Λ is zero.
    pub funding_ratio: Option<f64>,
}

/// Shares (percent) of stage 0..T-1 nodes by asset-minus-liability duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchHistogram {
    pub nodes: usize,
    /// Lower bound -Δ̄ active.
    pub lower_active: f64,
    /// In (-Δ̄, 0].
    pub below_zero: f64,
    /// In (0, Δ̄).
    pub above_zero: f64,
    /// Upper bound Δ̄ active.
    pub upper_active: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub status: RunStatus,
    pub objective: Option<f64>,
    pub k0: Option<f64>,
    pub phi: f64,
    pub fr0: Option<f64>,
    pub fr_terminal: Option<f64>,
    pub stages: Vec<StageRow>,
    pub mismatch: Option<MismatchHistogram>,
    /// Percentage of stage T-1 nodes with an active event cut.
    pub active_ssd_pct: f64,
    pub iterations: usize,
    pub cuts: CutCounts,
    pub notes: Vec<String>,
}

pub fn report_tables(res: &RunResult, tree: &ScenarioTree, cfg: &RunConfig) -> Result<Report, ReportError> {
    let pol = policy(res, tree)?;
    let topo = &tree.topology;
    let horizon = topo.horizon();
    let mut notes = Vec::new();

    let mut profit = vec![0.0; topo.num_nodes()];
    for id in 0..topo.num_nodes() {
        let g = &tree.coeff(id).g;
        let own: f64 = pol[id].x_minus.iter().zip(g).map(|(x, g)| x * g).sum();
        profit[id] = topo.ancestor(id).map_or(0.0, |a| profit[a]) + own;
    }
    let value = |id: usize| pol[id].x.iter().sum::<f64>();
    let lambda = |id: usize| tree.coeff(id).total_liability();

    let mut stages = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let ids: Vec<usize> = topo.stage_nodes(t).collect();
        let debt: Vec<(f64, f64)> = ids.iter().map(|&k| (topo.prob(k), pol[k].b)).collect();
        let prof: Vec<(f64, f64)> = ids.iter().map(|&k| (topo.prob(k), profit[k])).collect();
        let funding_ratio = ids
            .iter()
            .all(|&k| lambda(k) > 0.0)
            .then(|| ids.iter().map(|&k| topo.prob(k) * value(k) / lambda(k)).sum());
        let (debt_mean, debt_std) = weighted_moments(&debt);
        let (profit_mean, profit_std) = weighted_moments(&prof);
        stages.push(StageRow {
            stage: t,
            year: topo.stage_dates()[t],
            debt_mean,
            debt_std,
            profit_mean,
            profit_std,
            funding_ratio,
        });
    }
    let fr0 = stages[0].funding_ratio;
    let fr_terminal = stages[horizon].funding_ratio;
    if stages.iter().any(|s| s.funding_ratio.is_none()) {
        notes.push("funding ratio undefined at stages with a zero liability value".into());
    }

    let durations = cfg.durations();
    let dbar = cfg.model.delta_bar;
    let mut bins = [0usize; 4];
    for id in (0..topo.num_nodes()).filter(|&k| topo.stage_of(k) < horizon && lambda(k) > 0.0) {
        let c = tree.coeff(id);
        let asset_dd: f64 = durations.iter().zip(&pol[id].x[1..]).map(|(d, x)| d * x).sum();
        let gap = asset_dd - c.liability_dollar_duration();
        let band = lambda(id) * dbar;
        let bin = if gap + band <= ACTIVE_TOL {
            0
        } else if band - gap <= ACTIVE_TOL {
            3
        } else if gap <= 0.0 {
            1
        } else {
            2
        };
        bins[bin] += 1;
    }
    let counted: usize = bins.iter().sum();
    let mismatch = if counted == 0 {
        notes.push("duration mismatch report suppressed: no node carries liabilities".into());
        None
    } else {
        let pct = |k: usize| 100.0 * bins[k] as f64 / counted as f64;
        Some(MismatchHistogram {
            nodes: counted,
            lower_active: pct(0),
            below_zero: pct(1),
            above_zero: pct(2),
            upper_active: pct(3),
        })
    };

    let last: Vec<usize> = topo.stage_nodes(horizon - 1).collect();
    let active = last.iter().filter(|&&k| pol[k].active_event_cuts > 0).count();
    let active_ssd_pct = 100.0 * active as f64 / last.len() as f64;

    Ok(Report {
        status: res.status,
        objective: res.objective,
        k0: res.k0,
        phi: cfg.model.phi,
        fr0,
        fr_terminal,
        stages,
        mismatch,
        active_ssd_pct,
        iterations: res.iterations,
        cuts: res.cuts,
        notes,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        let status = serde_json::to_value(self.status).expect("status serialises");
        let rows = [
            ("status", status.as_str().unwrap_or_default().to_string()),
            ("objective", fmt_opt(self.objective)),
            ("k0", fmt_opt(self.k0)),
            ("phi", self.phi.to_string()),
            ("fr0", fmt_opt(self.fr0)),
            ("fr_terminal", fmt_opt(self.fr_terminal)),
            ("active_ssd_pct", self.active_ssd_pct.to_string()),
            ("iterations", self.iterations.to_string()),
            ("objective_cuts", self.cuts.objective.to_string()),
            ("feasibility_cuts", self.cuts.feasibility.to_string()),
            ("risk_cuts", self.cuts.risk.to_string()),
            ("event_cuts", self.cuts.event.to_string()),
        ];
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn stages_csv(&self) -> String {
        let mut out = String::from("stage,year,debt_mean,debt_std,profit_mean,profit_std,funding_ratio\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.stage,
                s.year,
                s.debt_mean,
                s.debt_std,
                s.profit_mean,
                s.profit_std,
                fmt_opt(s.funding_ratio)
            ));
        }
        out
    }

    /// Empty when the mismatch report is suppressed.
    pub fn mismatch_csv(&self) -> String {
        let Some(m) = &self.mismatch else {
            return String::new();
        };
        format!(
            "bin,percent\nlower_active,{}\nbelow_zero,{}\nabove_zero,{}\nupper_active,{}\n",
            m.lower_active, m.below_zero, m.above_zero, m.upper_active
        )
    }
}

/// Distribution over the children of `id` of the value carried by `x`.
pub fn portfolio_distribution(tree: &ScenarioTree, id: usize, x: &[f64]) -> DiscreteDistribution {
    let topo = &tree.topology;
    let probs: Vec<f64> = topo.children(id).iter().map(|&m| topo.conditional_prob(m)).collect();
    DiscreteDistribution::new(&tree.carried_values(id, x), &probs).expect("children carry a distribution")
}

/// φΛ over the children of `id`.
pub fn liability_distribution(tree: &ScenarioTree, id: usize, phi: f64) -> DiscreteDistribution {
    let topo = &tree.topology;
    let kids = topo.children(id);
    let vals: Vec<f64> = kids.iter().map(|&m| phi * tree.coeff(m).total_liability()).collect();
    let probs: Vec<f64> = kids.iter().map(|&m| topo.conditional_prob(m)).collect();
    DiscreteDistribution::new(&vals, &probs).expect("children carry a distribution")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// First- and second-order CDF curves at one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCdf {
    pub node: usize,
    pub curves: Vec<CdfCurve>,
}

impl NodeCdf {
    pub fn curve(&self, name: &str) -> Option<&CdfCurve> {
        self.curves.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in &self.curves {
            for (x, y) in &c.points {
                out.push_str(&format!("{},{},{x},{y}\n", self.node, c.name));
            }
        }
        out
    }
}

pub const CDF_HEADER: &str = "node,curve,x,y\n";

/// Curves for the portfolio, the φ = 0 portfolio when available, and the
/// liability benchmark (scaled by φ, or unscaled when φ = 0).
pub fn export_cdf(file: &SolutionFile, tree: &ScenarioTree, node: usize) -> Result<NodeCdf, ReportError> {
    if tree.topology.is_leaf(node) {
        return Err(ReportError::Mismatch(format!("node {node} is a leaf")));
    }
    let main = policy(&file.result, tree)?;
    let mut dists = vec![("portfolio", portfolio_distribution(tree, node, &main[node].x))];
    if let Some(base) = &file.baseline {
        let base = policy(base, tree)?;
        dists.push(("portfolio_no_ssd", portfolio_distribution(tree, node, &base[node].x)));
    }
    let phi = file.config.model.phi;
    dists.push(("liability", liability_distribution(tree, node, if phi > 0.0 { phi } else { 1.0 })));
    let lo = dists.iter().map(|(_, d)| d.values()[0]).fold(f64::INFINITY, f64::min);
    let hi = dists.iter().map(|(_, d)| *d.values().last().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let margin = 0.05 * (hi - lo) + 1e-3;
    let mut curves = Vec::with_capacity(2 * dists.len());
    for (name, d) in &dists {
        // Align all curves on the same x range.
        let (below, above) = (d.values()[0] - (lo - margin), hi + margin - d.values().last().unwrap());
        let mut f1 = cdf_points(d, 0.0);
        f1[0].0 -= below;
        f1.last_mut().unwrap().0 += above;
        let mut f2 = integrated_cdf_points(d, 0.0);
        f2[0] = (lo - margin, d.integrated_cdf(lo - margin));
        *f2.last_mut().unwrap() = (hi + margin, d.integrated_cdf(hi + margin));
        curves.push(CdfCurve {
            name: format!("{name}_F1"),
            points: f1,
        });
        curves.push(CdfCurve {
            name: format!("{name}_F2"),
            points: f2,
        });
    }
    Ok(NodeCdf { node, curves })
}

/// Curves at every non-leaf node, in long CSV form.
pub fn export_all_cdf(file: &SolutionFile, tree: &ScenarioTree) -> Result<String, ReportError> {
    let mut out = String::from(CDF_HEADER);
    for id in (0..tree.topology.num_nodes()).filter(|&k| !tree.topology.is_leaf(k)) {
        out.push_str(&export_cdf(file, tree, id)?.to_csv());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsdNodeCheck {
    pub node: usize,
    pub stage: usize,
    pub dominates: bool,
    pub violation: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub ssd_tol: f64,
    /// Relative tolerance on recomputed constraint rows.
    pub row_tol: f64,
    pub oracle: bool,
    pub gap_tol: f64,
    pub root_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            ssd_tol: 1e-6,
            row_tol: 1e-6,
            oracle: false,
            gap_tol: 1e-5,
            root_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// Binding dominance at stage T-1.
    pub last_stage: Vec<SsdNodeCheck>,
    /// One-step dominance at earlier non-leaf nodes. Reported only: the model
    /// constrains stage T-1, and earlier portfolios may rely on future revenue.
    pub earlier: Vec<SsdNodeCheck>,
    /// Largest relative violation of any node constraint, recomputed from the policy.
    pub max_row_violation: f64,
    pub oracle: Option<OracleReport>,
    pub failures: Vec<String>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn earlier_dominates(&self) -> bool {
        self.earlier.iter().all(|c| c.dominates)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verification serialises")
    }
}

/// Re-evaluate every node's constraint rows at the stored decisions.
fn max_row_violation(dec: &Decomposer, pol: &[&NodeSolution], tree: &ScenarioTree) -> f64 {
    let topo = &tree.topology;
    let mut worst: f64 = 0.0;
    for id in 0..topo.num_nodes() {
        let anc = topo.ancestor(id).map(|a| pol[a].state()).unwrap_or_default();
        let nlp = dec.build_node_lp(id, &anc, &CutPools::default());
        let s = pol[id];
        let lay = &nlp.layout;
        let mut x = vec![0.0; nlp.model.num_vars()];
        let mut set = |vars: &[usize], vals: &[f64]| vars.iter().zip(vals).for_each(|(&v, &a)| x[v] = a);
        set(&lay.x, &s.x);
        set(&lay.xp, &s.x_plus);
        set(&lay.xm, &s.x_minus);
        set(&lay.v, &s.v);
        for (var, val) in [(lay.b, s.b), (lay.bp, s.b_plus), (lay.bm, s.b_minus), (lay.k0, s.k0), (lay.w, s.w)] {
            if let Some(v) = var {
                x[v] = val;
            }
        }
        for (r, row) in nlp.model.rows().iter().enumerate() {
            let act = nlp.model.row_activity(r, &x);
            let viol = match row.sense {
                crate::lp::Sense::Le => act - row.rhs,
                crate::lp::Sense::Ge => row.rhs - act,
                crate::lp::Sense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(viol / (1.0 + row.rhs.abs()));
        }
    }
    worst
}

pub fn verify(file: &SolutionFile, tree: &ScenarioTree, opts: &VerifyOptions) -> Result<Verification, ReportError> {
    if file.tree()? != *tree {
        return Err(ReportError::Mismatch("solution was computed on a different tree".into()));
    }
    let cfg = &file.config;
    let mut failures = Vec::new();
    let mut last_stage = Vec::new();
    let mut earlier = Vec::new();
    let mut max_viol = 0.0;
    if file.result.status == RunStatus::Optimal {
        let pol = policy(&file.result, tree)?;
        let topo = &tree.topology;
        let last = topo.horizon() - 1;
        if cfg.model.phi > 0.0 {
            for id in (0..topo.num_nodes()).filter(|&k| !topo.is_leaf(k)) {
                let c = ssd_dominates(
                    &portfolio_distribution(tree, id, &pol[id].x),
                    &liability_distribution(tree, id, cfg.model.phi),
                    opts.ssd_tol,
                );
                let check = SsdNodeCheck {
                    node: id,
                    stage: topo.stage_of(id),
                    dominates: c.dominates,
                    violation: c.violation,
                };
                if topo.stage_of(id) == last {
                    last_stage.push(check);
                } else {
                    earlier.push(check);
                }
            }
        }
        let bad: Vec<usize> = last_stage.iter().filter(|c| !c.dominates).map(|c| c.node).collect();
        if !bad.is_empty() {
            failures.push(format!("dominance fails at {} stage T-1 nodes, e.g. node {}", bad.len(), bad[0]));
        }
        let dec = Decomposer::new(tree, cfg)?;
        max_viol = max_row_violation(&dec, &pol, tree);
        if max_viol > opts.row_tol {
            failures.push(format!("policy violates a constraint row by {max_viol:e} (relative)"));
        }
    } else if file.result.status != RunStatus::Infeasible {
        failures.push(format!("solve ended with status {:?}", file.result.status));
    }
    let oracle = if opts.oracle {
        let rep = oracle_compare(tree, cfg)?;
        if !rep.agrees(opts.gap_tol) {
            failures.push(format!("oracle disagrees: {rep:?}"));
        }
        if rep.root_deviation.is_some_and(|d| d > opts.root_tol) {
            failures.push(format!("root decisions deviate from the oracle by {:e}", rep.root_deviation.unwrap()));
        }
        Some(rep)
    } else {
        None
    };
    Ok(Verification {
        last_stage,
        earlier,
        max_row_violation: max_viol,
        oracle,
        failures,
    })
}
