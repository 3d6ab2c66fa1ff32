//! Sparse convex quadratic programs and the single solve kernel every model
//! compiles to.
//!
//! A program is
//!
//! ```text
//! minimize    ½ xᵀQx + qᵀx + c
//! subject to  aᵣᵀx = bᵣ  or  aᵣᵀx ≤ bᵣ   for every row r
//!             lⱼ ≤ xⱼ ≤ uⱼ
//! ```
//!
//! Duals follow the convention `Qx + q + Σ yᵣ aᵣ − μˡ + μᵘ = 0` with
//! `yᵣ ≥ 0` on inequality rows and `μˡ, μᵘ ≥ 0` on the bounds.

use std::collections::BTreeMap;
use std::io::Write;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Eq,
    Le,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Index into [`QuadraticProgram::blocks`].
    pub block: usize,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(j, v)| v * x[*j]).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProgram {
    /// Labels naming groups of variables and rows, e.g. `"balance"`.
    pub blocks: Vec<String>,
    pub var_block: Vec<usize>,
    /// Upper-triangle entries `(i, j, v)` with `i ≤ j`; `v` is added to both
    /// `Q[i][j]` and `Q[j][i]`. Repeated entries accumulate.
    pub quad: Vec<(usize, usize, f64)>,
    /// Linear forms whose weighted squares make up `Q`, or `None` once an
    /// off-diagonal entry has been added directly.
    #[serde(default)]
    pub factors: Option<Vec<Vec<(usize, f64)>>>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new() -> Self {
        Self {
            factors: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn block_id(&mut self, name: &str) -> usize {
        match self.blocks.iter().position(|b| b == name) {
            Some(i) => i,
            None => {
                self.blocks.push(name.to_string());
                self.blocks.len() - 1
            }
        }
    }

    pub fn block_name(&self, id: usize) -> &str {
        &self.blocks[id]
    }

    pub fn add_var(&mut self, block: &str, lower: f64, upper: f64) -> usize {
        let b = self.block_id(block);
        self.var_block.push(b);
        self.linear.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.linear.len() - 1
    }

    /// Add `v·xᵢ·xⱼ` to the objective when `i ≠ j`, or `½·v·xᵢ²` when `i = j`.
    pub fn add_quad(&mut self, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        self.quad.push((i.min(j), i.max(j), v));
        match &mut self.factors {
            Some(f) if i == j => f.push(vec![(i, 1.0)]),
            f => *f = None,
        }
    }

    /// Add `½·w·(Σ cₖ xₖ)²` to the objective.
    pub fn add_square(&mut self, terms: &[(usize, f64)], w: f64) {
        if w == 0.0 {
            return;
        }
        for (k, &(i, ci)) in terms.iter().enumerate() {
            if ci != 0.0 {
                self.quad.push((i, i, w * ci * ci));
            }
            for &(j, cj) in &terms[k + 1..] {
                if ci * cj != 0.0 {
                    self.quad.push((i.min(j), i.max(j), w * ci * cj));
                }
            }
        }
        if let Some(f) = &mut self.factors {
            f.push(terms.to_vec());
        }
    }

    pub fn add_linear(&mut self, i: usize, v: f64) {
        self.linear[i] += v;
    }

    pub fn add_row(&mut self, block: &str, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        let block = self.block_id(block);
        self.rows.push(Row {
            block,
            coeffs,
            relation,
            rhs,
        });
        self.rows.len() - 1
    }

    /// Multiply the whole objective by `s`.
    pub fn scale_objective(&mut self, s: f64) {
        self.quad.iter_mut().for_each(|e| e.2 *= s);
        self.linear.iter_mut().for_each(|v| *v *= s);
        self.constant *= s;
    }

    /// `Qx`.
    pub fn q_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for &(i, j, v) in &self.quad {
            if i == j {
                out[i] += v * x[i];
            } else {
                out[i] += v * x[j];
                out[j] += v * x[i];
            }
        }
        out
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .quad
            .iter()
            .map(|&(i, j, v)| if i == j { 0.5 * v * x[i] * x[i] } else { v * x[i] * x[j] })
            .sum();
        let lin: f64 = self.linear.iter().zip(x).map(|(q, x)| q * x).sum();
        quad + lin + self.constant
    }

    /// `Aᵀy` over the rows.
    pub fn rows_transpose_times(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars()];
        for (row, yr) in self.rows.iter().zip(y) {
            for &(j, v) in &row.coeffs {
                out[j] += v * yr;
            }
        }
        out
    }

    /// Check dimensions, finiteness and positive semidefiniteness of `Q`.
    ///
    /// Semidefiniteness is tested with Rayleigh quotients on coordinate
    /// vectors, on `eᵢ ± eⱼ` for every off-diagonal entry, and on a few
    /// seeded random directions.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.var_block.len() != n {
            return Err(invalid("quadratic program dimensions are inconsistent"));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(invalid(format!("variable {j} has bounds [{}, {}]", self.lower[j], self.upper[j])));
            }
            if !self.linear[j].is_finite() {
                return Err(invalid(format!("linear cost of variable {j} is not finite")));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() || row.coeffs.iter().any(|(j, v)| *j >= n || !v.is_finite()) {
                return Err(invalid(format!("row {r} has an out-of-range index or non-finite entry")));
            }
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in &self.quad {
            if j >= n || !v.is_finite() {
                return Err(invalid(format!("quadratic entry ({i}, {j}) is invalid")));
            }
            *merged.entry((i, j)).or_insert(0.0) += v;
        }
        let scale = merged.values().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let tol = -1e-9 * scale;
        let mut diag = vec![0.0; n];
        for (&(i, j), &v) in &merged {
            if i == j {
                diag[i] = v;
            }
        }
        if let Some(i) = (0..n).find(|&i| diag[i] < tol) {
            return Err(invalid(format!("Q is not positive semidefinite: Q[{i}][{i}] = {}", diag[i])));
        }
        for (&(i, j), &v) in &merged {
            if i != j && (diag[i] + diag[j] - 2.0 * v.abs()) < 2.0 * tol {
                return Err(invalid(format!("Q is not positive semidefinite along e{i} ± e{j}")));
            }
        }
        if !merged.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9d);
            for _ in 0..8 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let qx = self.q_times(&x);
                let xqx: f64 = x.iter().zip(&qx).map(|(a, b)| a * b).sum();
                let xx: f64 = x.iter().map(|a| a * a).sum();
                if xqx < tol * xx {
                    return Err(invalid("Q is not positive semidefinite along a probe direction"));
                }
            }
        }
        Ok(())
    }

    /// Write the program in a line-oriented sparse text format:
    ///
    /// ```text
    /// qp <n> <m>
    /// var <j> <block> <lower> <upper> <linear>
    /// quad <i> <j> <value>
    /// row <r> <block> <eq|le> <rhs> <j>:<value> ...
    /// constant <c>
    /// ```
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "qp {} {}", self.num_vars(), self.num_rows())?;
        for j in 0..self.num_vars() {
            writeln!(
                w,
                "var {j} {} {:e} {:e} {:e}",
                self.blocks[self.var_block[j]], self.lower[j], self.upper[j], self.linear[j]
            )?;
        }
        for &(i, j, v) in &self.quad {
            writeln!(w, "quad {i} {j} {v:e}")?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            let rel = match row.relation {
                Relation::Eq => "eq",
                Relation::Le => "le",
            };
            write!(w, "row {r} {} {rel} {:e}", self.blocks[row.block], row.rhs)?;
            for (j, v) in &row.coeffs {
                write!(w, " {j}:{v:e}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "constant {:e}", self.constant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

/// Feasibility and gap tolerance handed to the interior-point kernel.
pub const INTERIOR_TOL: f64 = 1e-12;

/// Tolerance of the retry when the strict pass stalls.
pub const RELAXED_TOL: f64 = 1e-9;

/// Static KKT regularization.
const STATIC_REG: f64 = 1e-10;

/// Iterations allowed to the strict pass.
const STRICT_ITER: u32 = 100;

/// Cost increase, relative to the optimum, allowed to the optimal-face point.
const FACE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol_p: f64,
    pub tol_d: f64,
    pub tol_g: f64,
    pub max_iter: u32,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_p: 1e-7,
            tol_d: 1e-7,
            tol_g: 1e-6,
            max_iter: 200,
        }
    }
}

/// Scaled residuals: primal infeasibility, stationarity and complementarity,
/// each divided by `1 +` the magnitude of the terms it compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub row_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: u32,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Compute scaled residuals of a primal-dual point.
pub fn residuals(qp: &QuadraticProgram, sol: &QpSolution) -> Residuals {
    let x = &sol.x;
    let mut viol = 0.0f64;
    let mut mag = 0.0f64;
    let mut gap = 0.0f64;
    for (row, y) in qp.rows.iter().zip(&sol.row_duals) {
        let ax = row.activity(x);
        mag = mag.max(ax.abs()).max(row.rhs.abs());
        let slack = row.rhs - ax;
        viol = viol.max(match row.relation {
            Relation::Eq => slack.abs(),
            Relation::Le => (-slack).max(0.0),
        });
        if row.relation == Relation::Le {
            gap += (y * slack).abs();
        }
    }
    for j in 0..qp.num_vars() {
        if qp.lower[j].is_finite() {
            viol = viol.max(qp.lower[j] - x[j]);
            mag = mag.max(qp.lower[j].abs());
            gap += (sol.lower_duals[j] * (x[j] - qp.lower[j])).abs();
        }
        if qp.upper[j].is_finite() {
            viol = viol.max(x[j] - qp.upper[j]);
            mag = mag.max(qp.upper[j].abs());
            gap += (sol.upper_duals[j] * (qp.upper[j] - x[j])).abs();
        }
        mag = mag.max(x[j].abs());
    }
    let qx = qp.q_times(x);
    let aty = qp.rows_transpose_times(&sol.row_duals);
    let mut stat = 0.0f64;
    let mut dmag = 0.0f64;
    for j in 0..qp.num_vars() {
        let r = qx[j] + qp.linear[j] + aty[j] - sol.lower_duals[j] + sol.upper_duals[j];
        stat = stat.max(r.abs());
        dmag = dmag.max(qx[j].abs()).max(qp.linear[j].abs()).max(aty[j].abs());
    }
    Residuals {
        primal: viol.max(0.0) / (1.0 + mag),
        dual: stat / (1.0 + dmag),
        gap: gap / (1.0 + sol.objective.abs()),
    }
}

/// Solve a convex QP with the Clarabel interior-point method.
///
/// Finite bounds become inequality rows and fixed variables become equality
/// rows. Single-threaded and deterministic.
pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.num_vars();
    if n == 0 {
        let infeasible = qp.rows.iter().any(|r| match r.relation {
            Relation::Eq => r.rhs.abs() > settings.tol_p,
            Relation::Le => r.rhs < -settings.tol_p,
        });
        return Ok(QpSolution {
            x: vec![],
            row_duals: vec![0.0; qp.num_rows()],
            lower_duals: vec![],
            upper_duals: vec![],
            objective: qp.constant,
            status: if infeasible { SolveStatus::Infeasible } else { SolveStatus::Optimal },
            residuals: Residuals::default(),
            iterations: 0,
        });
    }

    // Clarabel wants equalities (zero cone) before inequalities (nonnegative cone).
    enum Source {
        Row(usize),
        Fixed(usize),
        Lower(usize),
        Upper(usize),
    }
    let mut sources = Vec::new();
    for (r, row) in qp.rows.iter().enumerate() {
        if row.relation == Relation::Eq {
            sources.push(Source::Row(r));
        }
    }
    for j in 0..n {
        if qp.lower[j] == qp.upper[j] {
            sources.push(Source::Fixed(j));
        }
    }
    let n_eq = sources.len();
    for (r, row) in qp.rows.iter().enumerate() {
        if row.relation == Relation::Le {
            sources.push(Source::Row(r));
        }
    }
    for j in 0..n {
        if qp.lower[j] != qp.upper[j] {
            if qp.lower[j].is_finite() {
                sources.push(Source::Lower(j));
            }
            if qp.upper[j].is_finite() {
                sources.push(Source::Upper(j));
            }
        }
    }
    let m = sources.len();
    let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(m);
    for (k, src) in sources.iter().enumerate() {
        match *src {
            Source::Row(r) => {
                for &(j, v) in &qp.rows[r].coeffs {
                    ai.push(k);
                    aj.push(j);
                    av.push(v);
                }
                b.push(qp.rows[r].rhs);
            }
            Source::Fixed(j) | Source::Upper(j) => {
                ai.push(k);
                aj.push(j);
                av.push(1.0);
                b.push(qp.upper[j]);
            }
            Source::Lower(j) => {
                ai.push(k);
                aj.push(j);
                av.push(-1.0);
                b.push(-qp.lower[j]);
            }
        }
    }
    let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);
    let (pi, pj, pv): (Vec<_>, Vec<_>, Vec<_>) = {
        let mut pi = Vec::with_capacity(qp.quad.len());
        let mut pj = Vec::with_capacity(qp.quad.len());
        let mut pv = Vec::with_capacity(qp.quad.len());
        for &(i, j, v) in &qp.quad {
            pi.push(i);
            pj.push(j);
            pv.push(v);
        }
        (pi, pj, pv)
    };
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if m > n_eq {
        cones.push(SupportedConeT::NonnegativeConeT(m - n_eq));
    }
    let attempt = |tol: f64, max_iter: u32| -> Result<QpSolution> {
        let cl_settings = DefaultSettings {
            verbose: false,
            max_iter,
            tol_feas: tol,
            tol_gap_abs: tol,
            tol_gap_rel: tol,
            max_threads: 1,
            static_regularization_constant: STATIC_REG,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &qp.linear, &a, &b, &cones, cl_settings)
            .map_err(|e| invalid(format!("solver setup failed: {e}")))?;
        solver.solve();
        let out = &solver.solution;
        log::debug!("clarabel {:?} after {} iterations at tolerance {tol:e}", out.status, out.iterations);

        let mut sol = QpSolution {
            x: out.x.clone(),
            row_duals: vec![0.0; qp.num_rows()],
            lower_duals: vec![0.0; n],
            upper_duals: vec![0.0; n],
            objective: 0.0,
            status: SolveStatus::IterLimit,
            residuals: Residuals::default(),
            iterations: out.iterations,
        };
        for (k, src) in sources.iter().enumerate() {
            let z = out.z[k];
            match *src {
                Source::Row(r) => sol.row_duals[r] = z,
                Source::Fixed(j) => {
                    sol.upper_duals[j] = z.max(0.0);
                    sol.lower_duals[j] = (-z).max(0.0);
                }
                Source::Lower(j) => sol.lower_duals[j] = z,
                Source::Upper(j) => sol.upper_duals[j] = z,
            }
        }
        sol.objective = qp.objective(&sol.x);
        sol.residuals = residuals(qp, &sol);
        let r = sol.residuals;
        let within = r.primal <= settings.tol_p && r.dual <= settings.tol_d && r.gap <= settings.tol_g;
        sol.status = match out.status {
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ if within && sol.x.iter().all(|v| v.is_finite()) => SolveStatus::Optimal,
            _ => SolveStatus::IterLimit,
        };
        Ok(sol)
    };
    let mut sol = attempt(INTERIOR_TOL, settings.max_iter.min(STRICT_ITER))?;
    if sol.status == SolveStatus::IterLimit {
        let relaxed = attempt(RELAXED_TOL, settings.max_iter)?;
        let spent = sol.iterations;
        sol = relaxed;
        sol.iterations += spent;
    }
    if sol.status != SolveStatus::Optimal {
        log::debug!("qp solve ended with {:?} (residuals {:?})", sol.status, sol.residuals);
    }
    Ok(sol)
}

/// Among the optimal points of `qp`, find the one minimizing `½‖x_S‖²` over
/// the variables in `select`, starting from the optimal solution `sol`.
///
/// The optimal set of a convex program is where every squared form of `Q`
/// and the linear objective keep their values at `sol`, so a second program
/// over that set picks a unique point in the selected coordinates. The duals
/// of `sol` stay optimal and are kept. Falls back to `sol` when `Q` was not
/// built from squares, the second solve does not converge, or its point
/// costs more than `sol`.
pub fn select_min_norm(
    qp: &QuadraticProgram,
    sol: &QpSolution,
    select: &[usize],
    settings: &QpSettings,
) -> Result<QpSolution> {
    let Some(factors) = &qp.factors else {
        return Ok(sol.clone());
    };
    if !sol.is_optimal() || select.is_empty() {
        return Ok(sol.clone());
    }
    let x0 = &sol.x;
    let mut face = QuadraticProgram {
        blocks: qp.blocks.clone(),
        var_block: qp.var_block.clone(),
        quad: select.iter().map(|&j| (j, j, 1.0)).collect(),
        factors: None,
        linear: vec![0.0; qp.num_vars()],
        constant: 0.0,
        rows: qp.rows.clone(),
        lower: qp.lower.clone(),
        upper: qp.upper.clone(),
    };
    let mut seen = std::collections::BTreeSet::new();
    for f in factors {
        let mut terms = f.clone();
        terms.sort_by_key(|t| t.0);
        let key: Vec<(usize, u64)> = terms.iter().map(|&(j, c)| (j, (c / terms[0].1).to_bits())).collect();
        if !seen.insert(key) {
            continue;
        }
        let value = terms.iter().map(|&(j, c)| c * x0[j]).sum();
        face.add_row("optimal_face", terms, Relation::Eq, value);
    }
    let lin: Vec<(usize, f64)> = qp.linear.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
    if !lin.is_empty() {
        let value: f64 = lin.iter().map(|&(j, c)| c * x0[j]).sum();
        face.add_row("optimal_face", lin, Relation::Le, value);
    }
    let picked = solve(&face, settings)?;
    if !picked.is_optimal() {
        log::debug!("optimal-face selection ended with {:?}; keeping the first solution", picked.status);
        return Ok(sol.clone());
    }
    let mut out = sol.clone();
    out.x = picked.x;
    out.objective = qp.objective(&out.x);
    if out.objective > sol.objective + FACE_SLACK * (1.0 + sol.objective.abs()) {
        log::debug!("optimal-face point costs {} against {}; keeping the first solution", out.objective, sol.objective);
        return Ok(sol.clone());
    }
    out.residuals = residuals(qp, &out);
    Ok(out)
}
