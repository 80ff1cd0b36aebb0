//! Linear programs: a small modelling layer and a dense two-phase primal simplex.
//!
//! Duals follow the sensitivity convention `y_i = d(optimal value)/d(rhs_i)`.
//! For a minimisation this makes duals of `>=` rows non-negative and duals of
//! `<=` rows non-positive. When phase one ends with a positive residual the
//! solver returns an infeasibility certificate: the phase-one value together
//! with its rhs sensitivities, which is exactly what a feasibility cut needs.

use std::fmt::Write as _;

use thiserror::Error;

pub type VarId = usize;
pub type RowId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    NumericFailure(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LinearModel {
    vars: Vec<Variable>,
    rows: Vec<Constraint>,
    objective_constant: f64,
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            cost,
        });
        self.vars.len() - 1
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> RowId {
        self.rows.push(Constraint {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn set_cost(&mut self, var: VarId, cost: f64) {
        self.vars[var].cost = cost;
    }

    pub fn set_rhs(&mut self, row: RowId, rhs: f64) {
        self.rows[row].rhs = rhs;
    }

    pub fn set_objective_constant(&mut self, c: f64) {
        self.objective_constant = c;
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v]
    }

    pub fn row(&self, r: RowId) -> &Constraint {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.vars.iter().zip(x).map(|(v, xi)| v.cost * xi).sum::<f64>()
    }

    pub fn row_activity(&self, r: RowId, x: &[f64]) -> f64 {
        self.rows[r].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, v) in self.vars.iter().enumerate() {
            worst = worst.max(v.lower - x[j]).max(x[j] - v.upper);
        }
        for (r, row) in self.rows.iter().enumerate() {
            let act = self.row_activity(r, x);
            let viol = match row.sense {
                Sense::Le => act - row.rhs,
                Sense::Ge => row.rhs - act,
                Sense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Dump in CPLEX LP text format.
    pub fn write_lp(&self) -> String {
        let mut out = String::from("Minimize\n obj:");
        let mut any = false;
        for v in &self.vars {
            if v.cost != 0.0 {
                let _ = write!(out, " {:+} {}", v.cost, v.name);
                any = true;
            }
        }
        if self.objective_constant != 0.0 {
            let _ = write!(out, " {:+}", self.objective_constant);
            any = true;
        }
        if !any {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            let _ = write!(out, " {}:", row.name);
            if row.coeffs.is_empty() {
                out.push_str(" 0");
            }
            for &(j, a) in &row.coeffs {
                let _ = write!(out, " {:+} {}", a, self.vars[j].name);
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {} {}", op, row.rhs);
        }
        out.push_str("Bounds\n");
        for v in &self.vars {
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (true, true) => {
                    let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
                }
                (true, false) => {
                    let _ = writeln!(out, " {} >= {}", v.name, v.lower);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {} <= {}", v.name, v.upper);
                }
                (false, false) => {
                    let _ = writeln!(out, " {} free", v.name);
                }
            }
        }
        out.push_str("End\n");
        out
    }

    fn validate(&self) -> Result<(), LpError> {
        for v in &self.vars {
            if v.lower.is_nan() || v.upper.is_nan() || !v.cost.is_finite() {
                return Err(LpError::InvalidModel(format!("variable {} has non-finite data", v.name)));
            }
            if v.lower > v.upper {
                return Err(LpError::InvalidModel(format!("variable {} has lower > upper", v.name)));
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(LpError::InvalidModel(format!("variable {} has an empty domain", v.name)));
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(LpError::InvalidModel(format!("row {} has non-finite rhs", row.name)));
            }
            for &(j, a) in &row.coeffs {
                if j >= self.vars.len() {
                    return Err(LpError::InvalidModel(format!("row {} references unknown variable {j}", row.name)));
                }
                if !a.is_finite() {
                    return Err(LpError::InvalidModel(format!("row {} has a non-finite coefficient", row.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-11,
            degenerate_switch: 50,
            max_iterations: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Phase-one value and its sensitivities with respect to the original rhs.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub phase_one_value: f64,
    pub duals: Vec<f64>,
}

impl Certificate {
    /// True when the multipliers prove that no point in the variable box
    /// satisfies every row.
    pub fn proves_infeasible(&self, model: &LinearModel, tol: f64) -> bool {
        let mut agg = vec![0.0; model.num_vars()];
        let mut rhs = 0.0;
        for (r, row) in model.rows().iter().enumerate() {
            let y = self.duals[r];
            let sign_ok = match row.sense {
                Sense::Le => y <= tol,
                Sense::Ge => y >= -tol,
                Sense::Eq => true,
            };
            if !sign_ok {
                return false;
            }
            rhs += y * row.rhs;
            for &(j, a) in &row.coeffs {
                agg[j] += y * a;
            }
        }
        let mut best = 0.0;
        for (j, v) in model.vars().iter().enumerate() {
            let a = agg[j];
            if a > tol {
                if !v.upper.is_finite() {
                    return false;
                }
                best += a * v.upper;
            } else if a < -tol {
                if !v.lower.is_finite() {
                    return false;
                }
                best += a * v.lower;
            } else if v.lower.is_finite() || v.upper.is_finite() {
                let pick = if v.lower.is_finite() { v.lower } else { v.upper };
                best += a * pick;
            }
        }
        best < rhs - tol
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: Status,
    pub objective: f64,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub certificate: Option<Certificate>,
}

#[derive(Clone, Copy, Debug)]
enum ColMap {
    /// x = offset + x'
    Shift(usize, f64),
    /// x = offset - x'
    Neg(usize, f64),
    /// x = x+ - x-
    Split(usize, usize),
    Fixed(f64),
}

struct Tableau {
    m: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    /// Pivot on (r, c). Row `m` holds the reduced costs.
    fn pivot(&mut self, r: usize, c: usize, nz: &mut Vec<usize>) {
        let w = self.width;
        let p = self.data[r * w + c];
        nz.clear();
        for j in 0..w {
            let v = self.data[r * w + j];
            if v != 0.0 {
                self.data[r * w + j] = v / p;
                nz.push(j);
            }
        }
        self.data[r * w + c] = 1.0;
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let update = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for &j in nz.iter() {
                    row[j] -= f * prow[j];
                }
                row[c] = 0.0;
            }
        };
        for row in before.chunks_exact_mut(w) {
            update(row);
        }
        for row in after.chunks_exact_mut(w) {
            update(row);
        }
        self.basis[r] = c;
    }
}

struct Simplex<'a> {
    tab: Tableau,
    barred: Vec<bool>,
    opts: &'a SolverOptions,
    iterations: usize,
    limit: usize,
    nz: Vec<usize>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn run(&mut self) -> Result<PhaseEnd, LpError> {
        let m = self.tab.m;
        let ncols = self.tab.width - 1;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        loop {
            if self.iterations >= self.limit {
                return Err(LpError::NumericFailure("simplex iteration limit reached".into()));
            }
            // pricing
            let mut enter = None;
            let mut best = -self.opts.optimality_tol;
            for j in 0..ncols {
                if self.barred[j] {
                    continue;
                }
                let d = self.tab.at(m, j);
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                return Ok(PhaseEnd::Optimal);
            };
            // ratio test
            let mut leave: Option<usize> = None;
            let mut min_ratio = f64::INFINITY;
            for i in 0..m {
                let a = self.tab.at(i, c);
                if a > self.opts.pivot_tol {
                    let ratio = self.tab.rhs(i).max(0.0) / a;
                    match leave {
                        None => {
                            leave = Some(i);
                            min_ratio = ratio;
                        }
                        Some(l) => {
                            let eps = 1e-12 * min_ratio.abs().max(1.0);
                            if ratio < min_ratio - eps {
                                leave = Some(i);
                                min_ratio = ratio;
                            } else if ratio <= min_ratio + eps {
                                let prefer = if bland {
                                    self.tab.basis[i] < self.tab.basis[l]
                                } else {
                                    a > self.tab.at(l, c)
                                };
                                if prefer {
                                    leave = Some(i);
                                }
                            }
                        }
                    }
                }
            }
            let Some(r) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            if min_ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > self.opts.degenerate_switch {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.tab.pivot(r, c, &mut self.nz);
            self.iterations += 1;
        }
    }
}

/// Solve `model` to optimality, or report infeasibility or unboundedness.
pub fn solve(model: &LinearModel, opts: &SolverOptions) -> Result<Solution, LpError> {
    model.validate()?;

    // Column transformation to x' >= 0.
    let mut maps = Vec::with_capacity(model.num_vars());
    let mut ncols_struct = 0usize;
    let mut cost_t: Vec<f64> = Vec::new();
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for v in model.vars() {
        let map = if v.lower == v.upper {
            ColMap::Fixed(v.lower)
        } else if v.lower.is_finite() {
            let col = ncols_struct;
            ncols_struct += 1;
            cost_t.push(v.cost);
            if v.upper.is_finite() {
                bound_rows.push((col, v.upper - v.lower));
            }
            ColMap::Shift(col, v.lower)
        } else if v.upper.is_finite() {
            let col = ncols_struct;
            ncols_struct += 1;
            cost_t.push(-v.cost);
            ColMap::Neg(col, v.upper)
        } else {
            let col = ncols_struct;
            ncols_struct += 2;
            cost_t.push(v.cost);
            cost_t.push(-v.cost);
            ColMap::Split(col, col + 1)
        };
        maps.push(map);
    }

    // Transformed rows: (sparse coeffs, sense, rhs).
    let n_orig_rows = model.num_rows();
    let mut trows: Vec<(Vec<(usize, f64)>, Sense, f64)> = Vec::with_capacity(n_orig_rows + bound_rows.len());
    for row in model.rows() {
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
        let mut rhs = row.rhs;
        for &(j, a) in &row.coeffs {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                ColMap::Shift(c, off) => {
                    rhs -= a * off;
                    coeffs.push((c, a));
                }
                ColMap::Neg(c, off) => {
                    rhs -= a * off;
                    coeffs.push((c, -a));
                }
                ColMap::Split(p, n) => {
                    coeffs.push((p, a));
                    coeffs.push((n, -a));
                }
                ColMap::Fixed(val) => rhs -= a * val,
            }
        }
        trows.push((coeffs, row.sense, rhs));
    }
    for &(c, ub) in &bound_rows {
        trows.push((vec![(c, 1.0)], Sense::Le, ub));
    }

    let m = trows.len();
    let n_slack = trows.iter().filter(|r| r.1 != Sense::Eq).count();
    // Decide flips and which rows need artificials.
    let mut flip = vec![1.0; m];
    let mut needs_art = vec![false; m];
    for (i, (_, sense, rhs)) in trows.iter().enumerate() {
        if *rhs < 0.0 {
            flip[i] = -1.0;
        }
        let slack_sign = match sense {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
            Sense::Eq => 0.0,
        } * flip[i];
        needs_art[i] = slack_sign <= 0.0;
    }
    let n_art = needs_art.iter().filter(|&&b| b).count();
    let ncols = ncols_struct + n_slack + n_art;
    let width = ncols + 1;
    let mut data = vec![0.0; (m + 1) * width];
    let mut basis = vec![0usize; m];
    let mut ident = vec![0usize; m];
    let mut is_art = vec![false; ncols];
    let mut slack_col = ncols_struct;
    let mut art_col = ncols_struct + n_slack;
    for (i, (coeffs, sense, rhs)) in trows.iter().enumerate() {
        let f = flip[i];
        let base = i * width;
        for &(c, a) in coeffs {
            data[base + c] += f * a;
        }
        data[base + width - 1] = f * rhs;
        if *sense != Sense::Eq {
            let s = if *sense == Sense::Le { 1.0 } else { -1.0 };
            data[base + slack_col] = f * s;
            if !needs_art[i] {
                basis[i] = slack_col;
                ident[i] = slack_col;
            }
            slack_col += 1;
        }
        if needs_art[i] {
            data[base + art_col] = 1.0;
            basis[i] = art_col;
            ident[i] = art_col;
            is_art[art_col] = true;
            art_col += 1;
        }
    }

    let limit = opts.max_iterations.unwrap_or(200 * (m + ncols) + 1000);
    let mut sx = Simplex {
        tab: Tableau {
            m,
            width,
            data,
            basis,
        },
        barred: vec![false; ncols],
        opts,
        iterations: 0,
        limit,
        nz: Vec::with_capacity(width),
    };

    let b_scale = 1.0 + trows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);

    // Phase one.
    if n_art > 0 {
        let mrow = m * width;
        for j in 0..width {
            sx.tab.data[mrow + j] = 0.0;
        }
        for (j, &art) in is_art.iter().enumerate() {
            if art {
                sx.tab.data[mrow + j] = 1.0;
            }
        }
        for i in 0..m {
            if needs_art[i] {
                for j in 0..width {
                    let v = sx.tab.data[i * width + j];
                    sx.tab.data[mrow + j] -= v;
                }
            }
        }
        match sx.run()? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return Err(LpError::NumericFailure("phase one reported unbounded".into()));
            }
        }
        let phi = -sx.tab.data[mrow + width - 1];
        if phi > opts.feasibility_tol * b_scale {
            let mut duals = vec![0.0; n_orig_rows];
            for (i, d) in duals.iter_mut().enumerate() {
                let col = ident[i];
                let c1 = if is_art[col] { 1.0 } else { 0.0 };
                *d = flip[i] * (c1 - sx.tab.data[mrow + col]);
            }
            return Ok(Solution {
                status: Status::Infeasible,
                objective: f64::NAN,
                x: vec![f64::NAN; model.num_vars()],
                duals: vec![f64::NAN; n_orig_rows],
                iterations: sx.iterations,
                certificate: Some(Certificate {
                    phase_one_value: phi,
                    duals,
                }),
            });
        }
        // Drive artificials out of the basis where possible.
        for i in 0..m {
            let bcol = sx.tab.basis[i];
            if !is_art[bcol] {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..ncols {
                if is_art[j] {
                    continue;
                }
                let a = sx.tab.at(i, j).abs();
                if a > 1e-7 && best.map_or(true, |(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((j, _)) = best {
                sx.tab.pivot(i, j, &mut sx.nz);
            }
        }
        for (j, &art) in is_art.iter().enumerate() {
            if art {
                sx.barred[j] = true;
            }
        }
    }

    // Phase two.
    let mrow = m * width;
    let mut full_cost = vec![0.0; ncols];
    full_cost[..ncols_struct].copy_from_slice(&cost_t);
    for j in 0..width {
        sx.tab.data[mrow + j] = if j < ncols { full_cost[j] } else { 0.0 };
    }
    for i in 0..m {
        let cb = full_cost[sx.tab.basis[i]];
        if cb != 0.0 {
            for j in 0..width {
                let v = sx.tab.data[i * width + j];
                sx.tab.data[mrow + j] -= cb * v;
            }
        }
    }
    match sx.run()? {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => {
            return Ok(Solution {
                status: Status::Unbounded,
                objective: f64::NEG_INFINITY,
                x: vec![f64::NAN; model.num_vars()],
                duals: vec![f64::NAN; n_orig_rows],
                iterations: sx.iterations,
                certificate: None,
            });
        }
    }

    let mut xt = vec![0.0; ncols];
    for i in 0..m {
        xt[sx.tab.basis[i]] = sx.tab.rhs(i).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            ColMap::Shift(c, off) => off + xt[c],
            ColMap::Neg(c, off) => off - xt[c],
            ColMap::Split(p, n) => xt[p] - xt[n],
            ColMap::Fixed(v) => v,
        })
        .collect();
    let mut duals = vec![0.0; n_orig_rows];
    for (i, d) in duals.iter_mut().enumerate() {
        let col = ident[i];
        *d = flip[i] * (full_cost[col] - sx.tab.data[mrow + col]);
    }
    let viol = model.max_violation(&x);
    if viol > 1e-6 * b_scale {
        return Err(LpError::NumericFailure(format!("primal residual {viol:.3e} after phase two")));
    }
    Ok(Solution {
        status: Status::Optimal,
        objective: model.objective_value(&x),
        x,
        duals,
        iterations: sx.iterations,
        certificate: None,
    })
}
