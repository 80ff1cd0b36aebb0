//! Mean-semideviation of order one, ρ(Z) = E[Z] + κ E[(Z - E[Z])+], for costs.

use crate::tree::TreeTopology;

pub fn mean(values: &[f64], probs: &[f64]) -> f64 {
    values.iter().zip(probs).map(|(v, p)| v * p).sum()
}

pub fn mean_semideviation(values: &[f64], probs: &[f64], kappa: f64) -> f64 {
    let m = mean(values, probs);
    let upper: f64 = values.iter().zip(probs).map(|(v, p)| p * (v - m).max(0.0)).sum();
    m + kappa * upper
}

/// Multipliers μ of the dual representation, ρ(v) = Σ p_m μ_m v_m.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskCut {
    pub mu: Vec<f64>,
}

impl RiskCut {
    /// The expectation cut, μ ≡ 1.
    pub fn expectation(n: usize) -> Self {
        Self { mu: vec![1.0; n] }
    }

    pub fn value(&self, values: &[f64], probs: &[f64]) -> f64 {
        values.iter().zip(probs).zip(&self.mu).map(|((v, p), m)| v * p * m).sum()
    }
}

/// Closed-form maximiser over the dual set: h_m = κ·1{v_m >= E[v]}.
pub fn risk_cut(values: &[f64], probs: &[f64], kappa: f64) -> RiskCut {
    let m = mean(values, probs);
    let tie = 1e-14 * (1.0 + m.abs());
    let h: Vec<f64> = values.iter().map(|&v| if v >= m - tie { kappa } else { 0.0 }).collect();
    RiskCut {
        mu: dual_point(&h, probs),
    }
}

/// μ = 1 + h - E[h] for an arbitrary h in [0, κ]^m.
pub fn dual_point(h: &[f64], probs: &[f64]) -> Vec<f64> {
    let eh = mean(h, probs);
    h.iter().map(|x| 1.0 + x - eh).collect()
}

/// Backward recursion of nested mean-semideviations over stage costs.
/// Returns the value at every node; the root entry is the composite value.
pub fn nested_risk_evaluate(topology: &TreeTopology, costs: &[f64], kappa: f64) -> Vec<f64> {
    let n = topology.num_nodes();
    let mut value = vec![0.0; n];
    for id in (0..n).rev() {
        let kids = topology.children(id);
        value[id] = if kids.is_empty() {
            costs[id]
        } else {
            let v: Vec<f64> = kids.iter().map(|&c| value[c]).collect();
            let p: Vec<f64> = kids.iter().map(|&c| topology.conditional_prob(c)).collect();
            costs[id] + mean_semideviation(&v, &p, kappa)
        };
    }
    value
}
