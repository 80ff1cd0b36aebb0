//! Fixtures shared by unit tests.

use crate::alm::generate_tree;
use crate::config::RunConfig;
use crate::tree::{NodeCoefficients, ScenarioTree, TreeTopology};

/// One equity asset, free trading, no risk aversion.
pub fn equity_cfg() -> RunConfig {
    let mut cfg = RunConfig::preset("base_small").unwrap();
    cfg.assets.retain(|a| a.name == "SUAU.AS");
    let m = &mut cfg.model;
    m.theta_max = 1.0;
    m.equity_cap = 1.0;
    m.cost_buy = 0.0;
    m.cost_sell = 0.0;
    m.kappa = 0.0;
    m.phi = 1.0;
    m.alpha = 1.0;
    m.beta = 0.5;
    cfg
}

pub fn hand_tree(stages: &[f64], branching: &[usize], f: impl Fn(usize) -> NodeCoefficients) -> ScenarioTree {
    let topo = TreeTopology::build(stages, branching).unwrap();
    let coeffs = (0..topo.num_nodes()).map(f).collect();
    ScenarioTree::new(topo, coeffs, 1, 1).unwrap()
}

pub fn generated(name: &str, stages: &[f64], branching: &[usize], seed: u64) -> (ScenarioTree, RunConfig) {
    let mut cfg = RunConfig::preset(name).unwrap();
    cfg.tree.stages = stages.to_vec();
    cfg.tree.branching = branching.to_vec();
    cfg.tree.seed = seed;
    let tree = generate_tree(&cfg.generator_input()).unwrap().tree;
    (tree, cfg)
}

