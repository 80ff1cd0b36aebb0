//! Core economic model: a three-factor yield curve with a regression decay
//! factor, a square-root inflation process and an autoregressive credit
//! spread, simulated monthly along a scenario tree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::TreeTopology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("{0} is not positive semidefinite")]
    NotPsd(&'static str),
    #[error("invalid economic coefficients: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveState {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub gamma: f64,
}

impl CurveState {
    /// Nelson-Siegel-Svensson yield at term `tau` years; `tau = 0` gives b1 + b2.
    pub fn yield_at(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return self.b1 + self.b2;
        }
        let x = tau / self.gamma;
        let e = (-x).exp();
        self.b1 + self.b2 * e + self.b3 * x * e
    }

    pub fn short_rate(&self) -> f64 {
        self.b1 + self.b2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EconState {
    pub curve: CurveState,
    pub pi: f64,
    pub s_ig: f64,
}

/// r^- = y(1) + s^IG, per annum.
pub fn borrow_rate(state: &EconState) -> f64 {
    state.curve.yield_at(1.0) + state.s_ig
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub a: [f64; 4],
    pub resid_std: f64,
    #[serde(default = "default_gamma_floor")]
    pub floor: f64,
}

fn default_gamma_floor() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationModel {
    pub a_pi: f64,
    pub sigma_pi: f64,
    #[serde(default = "default_target")]
    pub target: f64,
}

fn default_target() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadModel {
    pub c: [f64; 3],
    pub resid_std: f64,
    /// Multiplies c0 and c2; 0.01 when they are quoted in percent.
    #[serde(default = "one")]
    pub unit_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EconCoefficients {
    /// Annualised covariance of the level, slope and curvature innovations.
    pub factor_cov: [[f64; 3]; 3],
    /// Extra multiplier on the per-step covariance `factor_cov * dt`.
    #[serde(default = "one")]
    pub cov_scale: f64,
    pub decay: DecayModel,
    pub inflation: InflationModel,
    pub spread: SpreadModel,
    /// Correlation of the decay, inflation and spread residuals.
    #[serde(default)]
    pub residual_correlation: Option<[[f64; 3]; 3]>,
}

impl EconCoefficients {
    pub fn zero_noise(&self) -> Self {
        let mut c = self.clone();
        c.factor_cov = [[0.0; 3]; 3];
        c.decay.resid_std = 0.0;
        c.inflation.sigma_pi = 0.0;
        c.spread.resid_std = 0.0;
        c
    }
}

/// Decay factor from the regression, with a flag when the floor binds.
pub fn decay_factor(b1: f64, b2: f64, b3: f64, model: &DecayModel, noise: f64) -> (f64, bool) {
    let g = model.a[0] + model.a[1] * b1 + model.a[2] * b2 + model.a[3] * b3 + model.resid_std * noise;
    if g < model.floor {
        (model.floor, true)
    } else {
        (g, false)
    }
}

pub fn step_inflation(pi_prev: f64, dt: f64, model: &InflationModel, noise: f64) -> (f64, bool) {
    let p = pi_prev.max(0.0);
    let next = p + model.a_pi * (model.target - p) * dt + model.sigma_pi * p.sqrt() * dt.sqrt() * noise;
    if next < 0.0 {
        (0.0, true)
    } else {
        (next, false)
    }
}

pub fn step_spread(s_prev: f64, short_rate: f64, model: &SpreadModel, noise: f64) -> (f64, bool) {
    let k = model.unit_scale;
    let next = k * model.c[0] + model.c[1] * s_prev + k * model.c[2] * short_rate + model.resid_std * noise;
    if next < 0.0 {
        (0.0, true)
    } else {
        (next, false)
    }
}

/// Lower-triangular factor of a 3x3 positive semidefinite matrix.
pub fn cholesky3(m: &[[f64; 3]; 3], what: &'static str) -> Result<[[f64; 3]; 3], EconError> {
    let scale = (0..3).map(|i| m[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    for i in 0..3 {
        for j in 0..3 {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * scale {
                return Err(EconError::NotPsd(what));
            }
        }
    }
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d < -1e-12 * scale {
                    return Err(EconError::NotPsd(what));
                }
                l[i][i] = d.max(0.0).sqrt();
            } else if l[j][j] > 1e-15 * scale.sqrt() {
                l[i][j] = (m[i][j] - s) / l[j][j];
            } else if (m[i][j] - s).abs() > 1e-12 * scale {
                return Err(EconError::NotPsd(what));
            }
        }
    }
    Ok(l)
}

fn correlate(l: &[[f64; 3]; 3], z: [f64; 3]) -> [f64; 3] {
    [
        l[0][0] * z[0],
        l[1][0] * z[0] + l[1][1] * z[1],
        l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2],
    ]
}

/// Counts of floor activations during a simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EconDiagnostics {
    pub gamma_floors: usize,
    pub inflation_floors: usize,
    pub spread_floors: usize,
}

impl EconDiagnostics {
    fn add(&mut self, o: &Self) {
        self.gamma_floors += o.gamma_floors;
        self.inflation_floors += o.inflation_floors;
        self.spread_floors += o.spread_floors;
    }
}

/// Random-stream purposes; each (seed, node, purpose) owns a ChaCha stream.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Econ = 0,
    Assets = 1,
    Liabilities = 2,
    Extension = 3,
}

pub fn node_rng(seed: u64, node: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64 * 4 + stream as u64);
    rng
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Prepared innovation factors for monthly stepping.
#[derive(Clone, Debug)]
pub struct EconStepper {
    coeffs: EconCoefficients,
    factor_chol: [[f64; 3]; 3],
    resid_chol: [[f64; 3]; 3],
}

impl EconStepper {
    pub fn new(coeffs: &EconCoefficients, dt: f64) -> Result<Self, EconError> {
        if coeffs.inflation.sigma_pi < 0.0 || coeffs.decay.resid_std < 0.0 || coeffs.spread.resid_std < 0.0 {
            return Err(EconError::Invalid("residual standard deviations must be non-negative".into()));
        }
        if !(coeffs.decay.floor > 0.0) {
            return Err(EconError::Invalid("decay floor must be positive".into()));
        }
        let mut step_cov = coeffs.factor_cov;
        for row in step_cov.iter_mut() {
            for v in row.iter_mut() {
                *v *= coeffs.cov_scale * dt;
            }
        }
        let factor_chol = cholesky3(&step_cov, "factor covariance")?;
        let resid_chol = match &coeffs.residual_correlation {
            Some(c) => cholesky3(c, "residual correlation")?,
            None => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        Ok(Self {
            coeffs: coeffs.clone(),
            factor_chol,
            resid_chol,
        })
    }

    /// One monthly step of all three recursions.
    pub fn step(&self, prev: &EconState, dt: f64, rng: &mut ChaCha8Rng, diag: &mut EconDiagnostics) -> EconState {
        let z = [normal(rng), normal(rng), normal(rng)];
        let e = [normal(rng), normal(rng), normal(rng)];
        let df = correlate(&self.factor_chol, z);
        let er = correlate(&self.resid_chol, e);
        let b1 = prev.curve.b1 + df[0];
        let b2 = prev.curve.b2 + df[1];
        let b3 = prev.curve.b3 + df[2];
        let (gamma, gf) = decay_factor(b1, b2, b3, &self.coeffs.decay, er[0]);
        let (pi, pf) = step_inflation(prev.pi, dt, &self.coeffs.inflation, er[1]);
        let curve = CurveState { b1, b2, b3, gamma };
        let (s_ig, sf) = step_spread(prev.s_ig, curve.short_rate(), &self.coeffs.spread, er[2]);
        diag.gamma_floors += gf as usize;
        diag.inflation_floors += pf as usize;
        diag.spread_floors += sf as usize;
        EconState { curve, pi, s_ig }
    }
}

#[derive(Clone, Debug)]
pub struct EconTree {
    pub states: Vec<EconState>,
    /// Monthly states over (a(n), n]; empty at the root.
    pub monthly: Vec<Vec<EconState>>,
    pub diagnostics: EconDiagnostics,
}

pub const MONTH: f64 = 1.0 / 12.0;

pub fn simulate_econ_tree(
    topology: &TreeTopology,
    coeffs: &EconCoefficients,
    init: &EconState,
    seed: u64,
) -> Result<EconTree, EconError> {
    let stepper = EconStepper::new(coeffs, MONTH)?;
    let n = topology.num_nodes();
    let mut states = vec![*init; n];
    let mut monthly: Vec<Vec<EconState>> = vec![Vec::new(); n];
    let mut diagnostics = EconDiagnostics::default();
    for t in 1..=topology.horizon() {
        let months = topology.gap_months(t - 1);
        let results: Vec<(Vec<EconState>, EconDiagnostics)> = topology
            .stage_nodes(t)
            .into_par_iter()
            .map(|id| {
                let mut rng = node_rng(seed, id, Stream::Econ);
                let mut diag = EconDiagnostics::default();
                let mut cur = states[topology.ancestor(id).unwrap()];
                let mut path = Vec::with_capacity(months);
                for _ in 0..months {
                    cur = stepper.step(&cur, MONTH, &mut rng, &mut diag);
                    path.push(cur);
                }
                (path, diag)
            })
            .collect();
        for (id, (path, diag)) in topology.stage_nodes(t).zip(results) {
            states[id] = *path.last().unwrap();
            monthly[id] = path;
            diagnostics.add(&diag);
        }
    }
    Ok(EconTree {
        states,
        monthly,
        diagnostics,
    })
}
