//! Multistage asset-liability management on scenario trees, with
//! second-order stochastic dominance constraints on the funding position and
//! a nested mean-semideviation objective.
//!
//! The pipeline runs [`alm::generate_tree`] to build a [`tree::ScenarioTree`],
//! solves it with [`decomposer::Decomposer`], then checks the result with
//! [`report::verify`] and tabulates it with [`report::report_tables`]. For
//! small trees, [`extensive::oracle_compare`] solves the same model as a
//! single LP.

pub mod alm;
pub mod config;
pub mod decomposer;
pub mod dominance;
pub mod econ;
pub mod extensive;
pub mod lp;
pub mod report;
pub mod risk;
pub mod tree;
#[cfg(test)]
mod testkit;
