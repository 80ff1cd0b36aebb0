//! Non-recombining scenario trees: topology, node coefficients and a
//! line-oriented text format.
//!
//! Node ids are breadth-first by stage, and children of an earlier node come
//! before children of a later node. The descendants of a node at any deeper
//! stage therefore occupy a contiguous id range.

use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("node {node}: broken ancestor link ({msg})")]
    BrokenAncestor { node: usize, msg: String },
    #[error("line {line}, field {field}: {msg}")]
    Parse { line: usize, field: String, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: usize,
    pub stage: usize,
    pub ancestor: Option<usize>,
    pub children: Vec<usize>,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeTopology {
    stages: Vec<f64>,
    branching: Vec<usize>,
    nodes: Vec<Node>,
    stage_start: Vec<usize>,
    leaf_range: Vec<(usize, usize)>,
}

const PROB_TOL: f64 = 1e-12;

impl TreeTopology {
    /// Uniform tree with `branching[t]` children for every stage-`t` node.
    pub fn build(stages: &[f64], branching: &[usize]) -> Result<Self, TreeError> {
        check_dates(stages)?;
        if branching.len() + 1 != stages.len() {
            return Err(TreeError::Invalid(format!(
                "{} stage dates need {} branching counts, got {}",
                stages.len(),
                stages.len() - 1,
                branching.len()
            )));
        }
        if branching.iter().any(|&b| b == 0) {
            return Err(TreeError::Invalid("branching counts must be at least 1".into()));
        }
        let mut specs = vec![(0usize, None, 1.0)];
        let mut level: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (t, &b) in branching.iter().enumerate() {
            let mut next = Vec::with_capacity(level.len() * b);
            for &(parent, p) in &level {
                for _ in 0..b {
                    let id = specs.len();
                    let q = p / b as f64;
                    specs.push((t + 1, Some(parent), q));
                    next.push((id, q));
                }
            }
            level = next;
        }
        Self::from_nodes(stages, branching, &specs)
    }

    /// Build from `(stage, ancestor, path probability)` records listed in id order.
    pub fn from_nodes(
        stages: &[f64],
        branching: &[usize],
        specs: &[(usize, Option<usize>, f64)],
    ) -> Result<Self, TreeError> {
        check_dates(stages)?;
        if specs.is_empty() {
            return Err(TreeError::Invalid("tree has no nodes".into()));
        }
        let horizon = stages.len() - 1;
        let mut nodes: Vec<Node> = Vec::with_capacity(specs.len());
        for (id, &(stage, ancestor, prob)) in specs.iter().enumerate() {
            if !(prob > 0.0 && prob <= 1.0 + PROB_TOL) {
                return Err(TreeError::Invalid(format!("node {id} has probability {prob}")));
            }
            if stage > horizon {
                return Err(TreeError::Invalid(format!("node {id} has stage {stage} beyond the horizon")));
            }
            match ancestor {
                None if id == 0 && stage == 0 => {}
                None => {
                    return Err(TreeError::BrokenAncestor {
                        node: id,
                        msg: "only the root may lack an ancestor".into(),
                    })
                }
                Some(a) => {
                    if id == 0 {
                        return Err(TreeError::BrokenAncestor {
                            node: 0,
                            msg: "root cannot have an ancestor".into(),
                        });
                    }
                    if a >= id {
                        return Err(TreeError::BrokenAncestor {
                            node: id,
                            msg: format!("ancestor {a} is not listed before this node"),
                        });
                    }
                    if nodes[a].stage + 1 != stage {
                        return Err(TreeError::BrokenAncestor {
                            node: id,
                            msg: format!("ancestor {a} is at stage {}, expected {}", nodes[a].stage, stage - 1),
                        });
                    }
                    if let Some(prev) = nodes.last() {
                        if prev.stage == stage && prev.ancestor.map_or(false, |pa| pa > a) {
                            return Err(TreeError::BrokenAncestor {
                                node: id,
                                msg: "ids are not breadth-first in ancestor order".into(),
                            });
                        }
                    }
                    nodes[a].children.push(id);
                }
            }
            if let Some(prev) = nodes.last() {
                if stage < prev.stage {
                    return Err(TreeError::Invalid(format!("node {id} breaks breadth-first stage order")));
                }
            }
            nodes.push(Node {
                id,
                stage,
                ancestor,
                children: Vec::new(),
                prob,
            });
        }
        let mut stage_start = vec![0usize; horizon + 2];
        for t in 0..=horizon {
            stage_start[t + 1] = stage_start[t] + nodes.iter().filter(|n| n.stage == t).count();
        }
        for t in 0..=horizon {
            if stage_start[t + 1] == stage_start[t] {
                return Err(TreeError::Invalid(format!("stage {t} has no nodes")));
            }
            let total: f64 = nodes[stage_start[t]..stage_start[t + 1]].iter().map(|n| n.prob).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(TreeError::Invalid(format!("stage {t} probabilities sum to {total}")));
            }
        }
        for n in &nodes {
            if n.stage < horizon {
                if n.children.is_empty() {
                    return Err(TreeError::Invalid(format!("node {} at stage {} has no children", n.id, n.stage)));
                }
                let s: f64 = n.children.iter().map(|&c| nodes[c].prob).sum();
                if (s - n.prob).abs() > 1e-11 {
                    return Err(TreeError::Invalid(format!(
                        "children of node {} carry probability {s}, node has {}",
                        n.id, n.prob
                    )));
                }
            }
        }
        let mut leaf_range = vec![(0usize, 0usize); nodes.len()];
        for id in (0..nodes.len()).rev() {
            leaf_range[id] = if nodes[id].children.is_empty() {
                (id, id + 1)
            } else {
                let first = nodes[id].children[0];
                let last = *nodes[id].children.last().unwrap();
                (leaf_range[first].0, leaf_range[last].1)
            };
        }
        Ok(Self {
            stages: stages.to_vec(),
            branching: branching.to_vec(),
            nodes,
            stage_start,
            leaf_range,
        })
    }

    /// Same shape with new conditional probabilities; `conditional[m]` is
    /// p_{a(m),m} and the root entry is ignored.
    pub fn reweighted(&self, conditional: &[f64]) -> Result<Self, TreeError> {
        if conditional.len() != self.nodes.len() {
            return Err(TreeError::Invalid("one conditional probability per node expected".into()));
        }
        let mut probs = vec![1.0; self.nodes.len()];
        for n in &self.nodes[1..] {
            probs[n.id] = probs[n.ancestor.unwrap()] * conditional[n.id];
        }
        let specs: Vec<_> = self.nodes.iter().map(|n| (n.stage, n.ancestor, probs[n.id])).collect();
        Self::from_nodes(&self.stages, &self.branching, &specs)
    }

    pub fn stage_dates(&self) -> &[f64] {
        &self.stages
    }

    pub fn branching(&self) -> &[usize] {
        &self.branching
    }

    /// Index T of the last stage.
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn stage_of(&self, id: usize) -> usize {
        self.nodes[id].stage
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.nodes[id].prob
    }

    pub fn ancestor(&self, id: usize) -> Option<usize> {
        self.nodes[id].ancestor
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// p_{a(m),m}.
    pub fn conditional_prob(&self, m: usize) -> f64 {
        match self.nodes[m].ancestor {
            Some(a) => self.nodes[m].prob / self.nodes[a].prob,
            None => 1.0,
        }
    }

    pub fn stage_nodes(&self, t: usize) -> Range<usize> {
        self.stage_start[t]..self.stage_start[t + 1]
    }

    pub fn leaves(&self) -> Range<usize> {
        self.stage_nodes(self.horizon())
    }

    /// Leaves below `id` (the node itself when it is a leaf).
    pub fn leaves_under(&self, id: usize) -> Range<usize> {
        let (a, b) = self.leaf_range[id];
        a..b
    }

    /// Node ids from the root down to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(a) = self.nodes[cur].ancestor {
            path.push(a);
            cur = a;
        }
        path.reverse();
        path
    }

    /// Stage-`t` ancestor of `id`, with `t` at most the stage of `id`.
    pub fn ancestor_at(&self, id: usize, t: usize) -> usize {
        let mut cur = id;
        while self.nodes[cur].stage > t {
            cur = self.nodes[cur].ancestor.unwrap();
        }
        cur
    }

    /// Date gap in years between stage `t` and `t + 1`.
    pub fn gap_years(&self, t: usize) -> f64 {
        self.stages[t + 1] - self.stages[t]
    }

    /// Date gap in whole months between stage `t` and `t + 1`.
    pub fn gap_months(&self, t: usize) -> usize {
        (self.gap_years(t) * 12.0).round() as usize
    }

    /// One row per leaf, one column per stage: the node on the leaf's root path.
    pub fn nodal_partition_matrix(&self) -> Vec<Vec<usize>> {
        self.leaves().map(|leaf| self.path(leaf)).collect()
    }
}

fn check_dates(stages: &[f64]) -> Result<(), TreeError> {
    if stages.len() < 2 {
        return Err(TreeError::Invalid("at least two stage dates are required".into()));
    }
    if stages[0] != 0.0 {
        return Err(TreeError::Invalid("the first stage date must be 0".into()));
    }
    for w in stages.windows(2) {
        if !(w[1] > w[0]) {
            return Err(TreeError::Invalid("stage dates must be strictly increasing".into()));
        }
    }
    for &d in stages {
        let months = d * 12.0;
        if !d.is_finite() || (months - months.round()).abs() > 1e-9 {
            return Err(TreeError::Invalid(format!("stage date {d} is not on the monthly grid")));
        }
    }
    Ok(())
}

/// Stochastic data attached to one node.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct NodeCoefficients {
    /// Returns over the period ending at the node, cash first. The cash entry
    /// is the accrual over the period starting at the node, fixed here.
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub outflows: Vec<f64>,
    pub revenue: f64,
    pub lambda: Vec<f64>,
    pub delta_lambda: Vec<f64>,
    /// Borrowing rate, per annum.
    pub r_minus: f64,
}

impl NodeCoefficients {
    pub fn zeros(n_assets: usize, n_liabilities: usize) -> Self {
        Self {
            r: vec![0.0; n_assets + 1],
            g: vec![0.0; n_assets],
            outflows: vec![0.0; n_liabilities],
            revenue: 0.0,
            lambda: vec![0.0; n_liabilities],
            delta_lambda: vec![0.0; n_liabilities],
            r_minus: 0.0,
        }
    }

    /// Total liability value Λ.
    pub fn total_liability(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn total_outflow(&self) -> f64 {
        self.outflows.iter().sum()
    }

    /// Σ_j λ_j δ^λ_j.
    pub fn liability_dollar_duration(&self) -> f64 {
        self.lambda.iter().zip(&self.delta_lambda).map(|(l, d)| l * d).sum()
    }

    fn validate(&self, id: usize, n_assets: usize, n_liabilities: usize) -> Result<(), TreeError> {
        let bad = |msg: String| Err(TreeError::Invalid(format!("node {id}: {msg}")));
        if self.r.len() != n_assets + 1
            || self.g.len() != n_assets
            || self.outflows.len() != n_liabilities
            || self.lambda.len() != n_liabilities
            || self.delta_lambda.len() != n_liabilities
        {
            return bad("coefficient vector lengths do not match the asset and liability counts".into());
        }
        if let Some(r) = self.r.iter().find(|&&r| !(r > -1.0) || !r.is_finite()) {
            return bad(format!("return {r} is not above -1"));
        }
        let non_neg = self
            .outflows
            .iter()
            .chain(&self.lambda)
            .chain(&self.delta_lambda)
            .chain(std::iter::once(&self.revenue))
            .all(|v| *v >= 0.0 && v.is_finite());
        if !non_neg {
            return bad("outflows, revenue, liability values and durations must be non-negative".into());
        }
        if !self.g.iter().all(|v| v.is_finite()) || !self.r_minus.is_finite() {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }
}

/// Topology plus one coefficient record per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree {
    pub topology: TreeTopology,
    pub coeffs: Vec<NodeCoefficients>,
    pub n_assets: usize,
    pub n_liabilities: usize,
    /// Optional trailing columns, such as the economic state at each node.
    pub extra_names: Vec<String>,
    pub extras: Vec<Vec<f64>>,
}

impl ScenarioTree {
    pub fn new(
        topology: TreeTopology,
        coeffs: Vec<NodeCoefficients>,
        n_assets: usize,
        n_liabilities: usize,
    ) -> Result<Self, TreeError> {
        if coeffs.len() != topology.num_nodes() {
            return Err(TreeError::Invalid("one coefficient record per node expected".into()));
        }
        for (id, c) in coeffs.iter().enumerate() {
            c.validate(id, n_assets, n_liabilities)?;
        }
        Ok(Self {
            topology,
            coeffs,
            n_assets,
            n_liabilities,
            extra_names: Vec::new(),
            extras: Vec::new(),
        })
    }

    pub fn with_extras(mut self, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, TreeError> {
        if values.len() != self.topology.num_nodes() || values.iter().any(|v| v.len() != names.len()) {
            return Err(TreeError::Invalid("extra columns must cover every node".into()));
        }
        self.extra_names = names;
        self.extras = values;
        Ok(self)
    }

    pub fn coeff(&self, id: usize) -> &NodeCoefficients {
        &self.coeffs[id]
    }

    /// Value carried into each child of `id` by holdings `x` (cash first):
    /// cash accrues at the node's own rate, risky assets at the child's return.
    pub fn carried_values(&self, id: usize, x: &[f64]) -> Vec<f64> {
        let c = self.coeff(id);
        self.topology
            .children(id)
            .iter()
            .map(|&m| {
                let cm = self.coeff(m);
                x[0] * (1.0 + c.r[0]) + (1..x.len()).map(|i| x[i] * (1.0 + cm.r[i])).sum::<f64>()
            })
            .collect()
    }

    /// Text serialization with 17 significant digits.
    pub fn to_text(&self) -> String {
        let topo = &self.topology;
        let csv = |v: &[String]| v.join(",");
        let mut out = String::new();
        let _ = write!(
            out,
            "stages={};branching={};assets={};liabilities={}",
            csv(&topo.stages.iter().map(|d| fmt(*d)).collect::<Vec<_>>()),
            csv(&topo.branching.iter().map(|b| b.to_string()).collect::<Vec<_>>()),
            self.n_assets,
            self.n_liabilities
        );
        if !self.extra_names.is_empty() {
            let _ = write!(out, ";extra={}", self.extra_names.join(","));
        }
        out.push('\n');
        for node in topo.nodes() {
            let c = &self.coeffs[node.id];
            let _ = write!(
                out,
                "{},{},{},{}",
                node.id,
                node.stage,
                node.ancestor.map_or("-".to_string(), |a| a.to_string()),
                fmt(node.prob)
            );
            let fields = c
                .r
                .iter()
                .chain(&c.g)
                .chain(&c.outflows)
                .chain(std::iter::once(&c.revenue))
                .chain(&c.lambda)
                .chain(&c.delta_lambda)
                .chain(std::iter::once(&c.r_minus));
            for v in fields {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            if !self.extras.is_empty() {
                for v in &self.extras[node.id] {
                    out.push(',');
                    out.push_str(&fmt(*v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TreeError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| TreeError::Parse {
            line: 1,
            field: "header".into(),
            msg: "empty input".into(),
        })?;
        let mut stages = None;
        let mut branching = None;
        let mut n_assets = None;
        let mut n_liabilities = None;
        let mut extra_names = Vec::new();
        for part in header.split(';') {
            let (key, value) = part.split_once('=').ok_or_else(|| TreeError::Parse {
                line: 1,
                field: part.to_string(),
                msg: "expected key=value".into(),
            })?;
            let perr = |msg: String| TreeError::Parse {
                line: 1,
                field: key.to_string(),
                msg,
            };
            match key.trim() {
                "stages" => {
                    stages = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().parse::<f64>().map_err(|e| perr(e.to_string())))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                "branching" => {
                    branching = Some(
                        value
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.trim().parse::<usize>().map_err(|e| perr(e.to_string())))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                "assets" => n_assets = Some(value.trim().parse::<usize>().map_err(|e| perr(e.to_string()))?),
                "liabilities" => {
                    n_liabilities = Some(value.trim().parse::<usize>().map_err(|e| perr(e.to_string()))?)
                }
                "extra" => extra_names = value.split(',').map(|s| s.trim().to_string()).collect(),
                other => return Err(perr(format!("unknown header key {other}"))),
            }
        }
        let missing = |f: &str| TreeError::Parse {
            line: 1,
            field: f.into(),
            msg: "missing from header".into(),
        };
        let stages = stages.ok_or_else(|| missing("stages"))?;
        let branching = branching.ok_or_else(|| missing("branching"))?;
        let n_assets = n_assets.unwrap_or(0);
        let n_liabilities = n_liabilities.unwrap_or(0);
        let n_fields = 4 + (n_assets + 1) + n_assets + n_liabilities + 1 + 2 * n_liabilities + 1 + extra_names.len();

        let mut specs = Vec::new();
        let mut coeffs = Vec::new();
        let mut extras = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
            if fields.len() != n_fields {
                return Err(TreeError::Parse {
                    line: lineno,
                    field: "row".into(),
                    msg: format!("expected {n_fields} fields, found {}", fields.len()),
                });
            }
            let names = field_names(n_assets, n_liabilities, &extra_names);
            let num = |k: usize| -> Result<f64, TreeError> {
                fields[k].parse::<f64>().map_err(|e| TreeError::Parse {
                    line: lineno,
                    field: names[k].clone(),
                    msg: e.to_string(),
                })
            };
            let id: usize = fields[0].parse().map_err(|_| TreeError::Parse {
                line: lineno,
                field: "id".into(),
                msg: format!("bad node id {:?}", fields[0]),
            })?;
            if id != specs.len() {
                return Err(TreeError::Parse {
                    line: lineno,
                    field: "id".into(),
                    msg: format!("expected node id {}, found {id}", specs.len()),
                });
            }
            let stage: usize = fields[1].parse().map_err(|_| TreeError::Parse {
                line: lineno,
                field: "stage".into(),
                msg: format!("bad stage {:?}", fields[1]),
            })?;
            let ancestor = if fields[2] == "-" {
                None
            } else {
                Some(fields[2].parse::<usize>().map_err(|_| TreeError::BrokenAncestor {
                    node: id,
                    msg: format!("unreadable ancestor {:?}", fields[2]),
                })?)
            };
            let p = num(3)?;
            specs.push((stage, ancestor, p));
            let mut k = 4;
            let mut take = |count: usize| -> Result<Vec<f64>, TreeError> {
                let v = (k..k + count).map(num).collect::<Result<Vec<_>, _>>()?;
                k += count;
                Ok(v)
            };
            let r = take(n_assets + 1)?;
            let g = take(n_assets)?;
            let outflows = take(n_liabilities)?;
            let revenue = take(1)?[0];
            let lambda = take(n_liabilities)?;
            let delta_lambda = take(n_liabilities)?;
            let r_minus = take(1)?[0];
            let extra = take(extra_names.len())?;
            coeffs.push(NodeCoefficients {
                r,
                g,
                outflows,
                revenue,
                lambda,
                delta_lambda,
                r_minus,
            });
            extras.push(extra);
        }
        let topology = TreeTopology::from_nodes(&stages, &branching, &specs)?;
        let tree = ScenarioTree::new(topology, coeffs, n_assets, n_liabilities)?;
        if extra_names.is_empty() {
            Ok(tree)
        } else {
            tree.with_extras(extra_names, extras)
        }
    }
}

fn field_names(n_assets: usize, n_liabilities: usize, extra: &[String]) -> Vec<String> {
    let mut names: Vec<String> = ["id", "stage", "ancestor", "p"].iter().map(|s| s.to_string()).collect();
    names.extend((0..=n_assets).map(|i| format!("r_{i}")));
    names.extend((1..=n_assets).map(|i| format!("g_{i}")));
    names.extend((1..=n_liabilities).map(|j| format!("L_{j}")));
    names.push("c".into());
    names.extend((1..=n_liabilities).map(|j| format!("lambda_{j}")));
    names.extend((1..=n_liabilities).map(|j| format!("deltaLambda_{j}")));
    names.push("rMinus".into());
    names.extend(extra.iter().cloned());
    names
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}
