//! Stochastic orders on finite distributions.
//!
//! Second-order dominance is checked through Lorenz functions at breakpoints:
//! both Lorenz functions are piecewise linear, so comparing them at the union
//! of their breakpoints is exact. The shortfall form `E[(η - Z)+]` is kept as
//! an independent code path.

use thiserror::Error;

use crate::tree::TreeTopology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DominanceError {
    #[error("distribution needs at least one atom")]
    Empty,
    #[error("values and probabilities differ in length")]
    LengthMismatch,
    #[error("non-finite value or probability")]
    NonFinite,
    #[error("negative probability {0}")]
    NegativeProb(f64),
    #[error("probabilities sum to {0}")]
    BadTotal(f64),
    #[error("probability level {0} outside (0, 1]")]
    BadLevel(f64),
    #[error("order k must be at least 1, got {0}")]
    BadOrder(usize),
}

/// Canonical finite distribution: values strictly increasing, positive masses.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(values: &[f64], probs: &[f64]) -> Result<Self, DominanceError> {
        if values.len() != probs.len() {
            return Err(DominanceError::LengthMismatch);
        }
        if values.is_empty() {
            return Err(DominanceError::Empty);
        }
        let mut pairs = Vec::with_capacity(values.len());
        let mut total = 0.0;
        for (&v, &p) in values.iter().zip(probs) {
            if !v.is_finite() || !p.is_finite() {
                return Err(DominanceError::NonFinite);
            }
            if p < 0.0 {
                return Err(DominanceError::NegativeProb(p));
            }
            total += p;
            if p > 0.0 {
                pairs.push((v, p));
            }
        }
        if (total - 1.0).abs() > 1e-9 || pairs.is_empty() {
            return Err(DominanceError::BadTotal(total));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            if values.last() == Some(&v) {
                *probs.last_mut().unwrap() += p;
            } else {
                values.push(v);
                probs.push(p);
            }
        }
        Ok(Self { values, probs })
    }

    pub fn uniform(values: &[f64]) -> Result<Self, DominanceError> {
        let p = 1.0 / values.len().max(1) as f64;
        Self::new(values, &vec![p; values.len()])
    }

    pub fn degenerate(value: f64) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// P(Z <= eta).
    pub fn cdf(&self, eta: f64) -> f64 {
        let mut s = 0.0;
        for (&v, &p) in self.values.iter().zip(&self.probs) {
            if v <= eta {
                s += p;
            } else {
                break;
            }
        }
        s.min(1.0)
    }

    /// P(Z > eta).
    pub fn survival(&self, eta: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(v, _)| **v > eta)
            .map(|(_, p)| p)
            .sum()
    }

    /// inf{η : F(η) >= p}.
    pub fn quantile(&self, p: f64) -> Result<f64, DominanceError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DominanceError::BadLevel(p));
        }
        let mut cum = 0.0;
        for (&v, &q) in self.values.iter().zip(&self.probs) {
            cum += q;
            if cum >= p - 1e-14 {
                return Ok(v);
            }
        }
        Ok(*self.values.last().unwrap())
    }

    /// F^(2)(η) = E[(η - Z)+].
    pub fn integrated_cdf(&self, eta: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(&v, &p)| p * (eta - v).max(0.0))
            .sum()
    }

    /// F^(k)(η) = E[(η - Z)+^(k-1)] / (k-1)!, the (k-1)-fold integral of the CDF.
    pub fn integrated_cdf_k(&self, eta: f64, k: usize) -> Result<f64, DominanceError> {
        match k {
            0 => Err(DominanceError::BadOrder(0)),
            1 => Ok(self.cdf(eta)),
            _ => {
                let fact: f64 = (1..k).map(|i| i as f64).product();
                Ok(self
                    .values
                    .iter()
                    .zip(&self.probs)
                    .map(|(&v, &p)| {
                        let gap = eta - v;
                        if gap > 0.0 {
                            p * gap.powi(k as i32 - 1)
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
                    / fact)
            }
        }
    }

    /// Cumulative quantile L(p) = ∫_0^p F^{-1}(t) dt, for p in [0, 1].
    pub fn lorenz(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let mut cum_p = 0.0;
        let mut cum_m = 0.0;
        for (&v, &q) in self.values.iter().zip(&self.probs) {
            if p <= cum_p + q {
                return cum_m + (p - cum_p) * v;
            }
            cum_p += q;
            cum_m += q * v;
        }
        cum_m
    }

    /// Cumulative probabilities at which the Lorenz function changes slope,
    /// including 0 and 1.
    pub fn lorenz_breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.probs.len() + 1);
        out.push(0.0);
        let mut cum = 0.0;
        for &q in &self.probs {
            cum += q;
            out.push(cum.min(1.0));
        }
        *out.last_mut().unwrap() = 1.0;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsdCheck {
    pub dominates: bool,
    /// max_p (L_y(p) - L_x(p)); non-positive when x dominates y exactly.
    pub violation: f64,
}

/// Second-order dominance of `x` over `y` via Lorenz functions.
pub fn ssd_dominates(x: &DiscreteDistribution, y: &DiscreteDistribution, tol: f64) -> SsdCheck {
    let mut ps = x.lorenz_breakpoints();
    ps.extend(y.lorenz_breakpoints());
    let violation = ps
        .iter()
        .map(|&p| y.lorenz(p) - x.lorenz(p))
        .fold(f64::NEG_INFINITY, f64::max);
    SsdCheck {
        dominates: violation <= tol,
        violation,
    }
}

/// Second-order dominance via shortfalls at every atom of both distributions.
pub fn shortfall_dominates(x: &DiscreteDistribution, y: &DiscreteDistribution, tol: f64) -> SsdCheck {
    let violation = x
        .values()
        .iter()
        .chain(y.values())
        .map(|&eta| x.integrated_cdf(eta) - y.integrated_cdf(eta))
        .fold(f64::NEG_INFINITY, f64::max);
    SsdCheck {
        dominates: violation <= tol,
        violation,
    }
}

/// First-order dominance: F_x <= F_y everywhere.
pub fn fsd_dominates(x: &DiscreteDistribution, y: &DiscreteDistribution, tol: f64) -> bool {
    x.values()
        .iter()
        .chain(y.values())
        .all(|&eta| x.cdf(eta) <= y.cdf(eta) + tol)
}

/// Largest gap between L(p) and max_η (pη - F^(2)(η)) over the given levels,
/// with η ranging over the atoms.
pub fn conjugacy_check(d: &DiscreteDistribution, levels: &[f64]) -> f64 {
    let f2: Vec<f64> = d.values().iter().map(|&v| d.integrated_cdf(v)).collect();
    levels
        .iter()
        .map(|&p| {
            let conj = d
                .values()
                .iter()
                .zip(&f2)
                .map(|(&eta, &f)| p * eta - f)
                .fold(f64::NEG_INFINITY, f64::max);
            (d.lorenz(p) - conj).abs()
        })
        .fold(0.0, f64::max)
}

/// Most violated lower-set constraint of a child-indexed outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Separation {
    /// Conditional-mean shortfall on the event; `<= 0` means no violation.
    pub delta: f64,
    /// Child indices (positions in the input) forming the event {X <= η}.
    pub event: Vec<usize>,
    pub eta: f64,
    pub event_prob: f64,
    /// L_benchmark(P(S)) / P(S).
    pub target: f64,
}

/// Scan the lower sets {X <= η} for η over the realised values of `x`.
pub fn separation_oracle(x: &[f64], probs: &[f64], benchmark: &DiscreteDistribution) -> Separation {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut best: Option<Separation> = None;
    let mut cum_p = 0.0;
    let mut cum_v = 0.0;
    let mut k = 0;
    while k < order.len() {
        let eta = x[order[k]];
        while k < order.len() && x[order[k]] == eta {
            cum_p += probs[order[k]];
            cum_v += probs[order[k]] * x[order[k]];
            k += 1;
        }
        if cum_p <= 0.0 {
            continue;
        }
        let target = benchmark.lorenz(cum_p) / cum_p;
        let delta = target - cum_v / cum_p;
        if best.as_ref().map_or(true, |b| delta > b.delta) {
            best = Some(Separation {
                delta,
                event: order[..k].to_vec(),
                eta,
                event_prob: cum_p,
                target,
            });
        }
    }
    let mut sep = best.unwrap_or(Separation {
        delta: f64::NEG_INFINITY,
        event: Vec::new(),
        eta: f64::NAN,
        event_prob: 0.0,
        target: 0.0,
    });
    sep.event.sort_unstable();
    sep
}

/// A real value attached to every node of a tree; the root value is unused.
#[derive(Clone, Debug)]
pub struct SequentialProcess<'a> {
    pub topology: &'a TreeTopology,
    pub values: Vec<f64>,
    future: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<'a> SequentialProcess<'a> {
    pub fn new(topology: &'a TreeTopology, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), topology.num_nodes(), "one value per node");
        let n = topology.num_nodes();
        let mut future = vec![0.0; n];
        for id in (0..n).rev() {
            future[id] = topology
                .children(id)
                .iter()
                .map(|&c| topology.conditional_prob(c) * (values[c] + future[c]))
                .sum();
        }
        let mut cumulative = vec![0.0; n];
        for id in 1..n {
            let a = topology.ancestor(id).unwrap();
            cumulative[id] = cumulative[a] + values[id];
        }
        Self {
            topology,
            values,
            future,
            cumulative,
        }
    }

    /// x_t at the node: X_1 + ... + X_t along the root path.
    pub fn cumulative(&self, id: usize) -> f64 {
        self.cumulative[id]
    }

    /// Realisation at child `m` of the projected future value seen from its
    /// ancestor: X_m plus the conditional expectation of all later values.
    pub fn future_value(&self, m: usize) -> f64 {
        self.values[m] + self.future[m]
    }

    /// Distribution over the children of `n` of the projected future value.
    pub fn project_future_value(&self, n: usize) -> DiscreteDistribution {
        let kids = self.topology.children(n);
        let vals: Vec<f64> = kids.iter().map(|&m| self.future_value(m)).collect();
        let probs: Vec<f64> = kids.iter().map(|&m| self.topology.conditional_prob(m)).collect();
        DiscreteDistribution::new(&vals, &probs).expect("children carry a probability distribution")
    }

    /// Expectation of the projected future value at `n`.
    pub fn expected_future_value(&self, n: usize) -> f64 {
        self.future[n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeCheck {
    pub node: usize,
    pub stage: usize,
    pub dominates: bool,
    pub violation: f64,
}

fn node_check(x: &SequentialProcess, y: &SequentialProcess, n: usize, tol: f64) -> NodeCheck {
    let topo = x.topology;
    let sigma = x.cumulative(n) - y.cumulative(n);
    let kids = topo.children(n);
    let probs: Vec<f64> = kids.iter().map(|&m| topo.conditional_prob(m)).collect();
    let xv: Vec<f64> = kids.iter().map(|&m| sigma + x.future_value(m)).collect();
    let yv: Vec<f64> = kids.iter().map(|&m| y.future_value(m)).collect();
    let dx = DiscreteDistribution::new(&xv, &probs).expect("valid child distribution");
    let dy = DiscreteDistribution::new(&yv, &probs).expect("valid child distribution");
    let c = ssd_dominates(&dx, &dy, tol);
    NodeCheck {
        node: n,
        stage: topo.stage_of(n),
        dominates: c.dominates,
        violation: c.violation,
    }
}

/// σ_t + X_{t+1}|ξ_[t] against Y_{t+1}|ξ_[t] at every non-leaf node.
pub fn check_sequential_ssd(x: &SequentialProcess, y: &SequentialProcess, tol: f64) -> Vec<NodeCheck> {
    let topo = x.topology;
    (0..topo.num_nodes())
        .filter(|&n| !topo.is_leaf(n))
        .map(|n| node_check(x, y, n, tol))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SufficiencyReport {
    pub premise: bool,
    pub conclusion: bool,
    pub premise_checks: Vec<NodeCheck>,
    pub conclusion_checks: Vec<NodeCheck>,
}

/// Evaluates the last-but-one-stage premise and the dynamic order at every
/// earlier stage separately.
pub fn last_stage_sufficiency(x: &SequentialProcess, y: &SequentialProcess, tol: f64) -> SufficiencyReport {
    let topo = x.topology;
    let last = topo.horizon() - 1;
    let checks = check_sequential_ssd(x, y, tol);
    let (premise_checks, conclusion_checks): (Vec<_>, Vec<_>) = checks.into_iter().partition(|c| c.stage == last);
    SufficiencyReport {
        premise: premise_checks.iter().all(|c| c.dominates),
        conclusion: conclusion_checks.iter().all(|c| c.dominates),
        premise_checks,
        conclusion_checks,
    }
}

/// Two-column CSV of the piecewise-linear function through `points`.
pub fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (a, v) in points {
        out.push_str(&format!("{a},{v}\n"));
    }
    out
}

/// Corner points of the step CDF, padded by `margin` on both sides.
pub fn cdf_points(d: &DiscreteDistribution, margin: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![(d.values()[0] - margin, 0.0)];
    let mut cum = 0.0;
    for (&v, &p) in d.values().iter().zip(d.probs()) {
        pts.push((v, cum));
        cum += p;
        pts.push((v, cum.min(1.0)));
    }
    pts.push((d.values().last().unwrap() + margin, 1.0));
    pts
}

/// Breakpoints of F^(2), padded by `margin` on both sides.
pub fn integrated_cdf_points(d: &DiscreteDistribution, margin: f64) -> Vec<(f64, f64)> {
    let lo = d.values()[0] - margin;
    let hi = d.values().last().unwrap() + margin;
    std::iter::once(lo)
        .chain(d.values().iter().copied())
        .chain(std::iter::once(hi))
        .map(|eta| (eta, d.integrated_cdf(eta)))
        .collect()
}
