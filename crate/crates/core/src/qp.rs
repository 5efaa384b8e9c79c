//! Convex quadratic programs with a checkable optimality contract.
//!
//! ```text
//!   minimize    1/2 z' P z + q' z
//!   subject to  A_eq z   = b_eq
//!               A_ineq z <= h_ineq
//! ```
//!
//! The interior-point iterations are delegated to Clarabel. Every returned
//! solution carries KKT residuals recomputed here from the original data, and
//! the status is derived from those residuals rather than trusted from the
//! backend. Multipliers follow the convention
//! `P z + q + A_eq' dual_eq + A_ineq' dual_ineq = 0` with `dual_ineq >= 0`.

use std::path::Path;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT,
    SolverStatus, SupportedConeT, ZeroConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowval: Vec::new(),
            nzval: Vec::new(),
        }
    }

    /// Duplicate entries are summed; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.1, a.0));
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowval = Vec::with_capacity(sorted.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut cols = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            debug_assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *nzval.last_mut().unwrap() += v;
            } else {
                rowval.push(r);
                nzval.push(v);
                cols.push(c);
                last = Some((r, c));
            }
        }
        let mut keep_rows = Vec::with_capacity(rowval.len());
        let mut keep_vals = Vec::with_capacity(rowval.len());
        for ((r, v), c) in rowval.into_iter().zip(nzval).zip(cols) {
            if v != 0.0 {
                keep_rows.push(r);
                keep_vals.push(v);
                colptr[c + 1] += 1;
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        SparseMatrix {
            nrows,
            ncols,
            colptr,
            rowval: keep_rows,
            nzval: keep_vals,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != 0.0 {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            d[(r, c)] += v;
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.nzval.len()
    }

    /// `(row, col, value)` in column order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.colptr[c]..self.colptr[c + 1]).map(move |k| (self.rowval[k], c, self.nzval[k]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (r, c, v) in self.iter() {
            y[r] += v * x[c];
        }
        y
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.nrows);
        (0..self.ncols)
            .map(|c| {
                (self.colptr[c]..self.colptr[c + 1])
                    .map(|k| self.nzval[k] * y[self.rowval[k]])
                    .sum()
            })
            .collect()
    }

    fn upper_triangle(&self) -> SparseMatrix {
        let t: Vec<_> = self.iter().filter(|(r, c, _)| r <= c).collect();
        SparseMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    fn to_clarabel(&self) -> CscMatrix<f64> {
        CscMatrix::new(
            self.nrows,
            self.ncols,
            self.colptr.clone(),
            self.rowval.clone(),
            self.nzval.clone(),
        )
    }
}

/// Row-by-row builder for constraint matrices.
#[derive(Debug, Clone, Default)]
pub struct RowBuilder {
    ncols: usize,
    rows: usize,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl RowBuilder {
    pub fn new(ncols: usize) -> Self {
        RowBuilder {
            ncols,
            ..Default::default()
        }
    }

    /// Appends the row `sum(coef * z[col]) (op) rhs` and returns its index.
    pub fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        let r = self.rows;
        for (c, v) in entries {
            self.triplets.push((r, c, v));
        }
        self.rhs.push(rhs);
        self.rows += 1;
        r
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn finish(self) -> (SparseMatrix, Vec<f64>) {
        (
            SparseMatrix::from_triplets(self.rows, self.ncols, &self.triplets),
            self.rhs,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    /// Full symmetric quadratic term (both triangles stored).
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_ineq: SparseMatrix,
    pub h_ineq: Vec<f64>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.q.len();
        let fail = |what: String| Err(Error::Dimension(what));
        if self.p.nrows != n || self.p.ncols != n {
            return fail(format!(
                "P is {}x{}, expected {n}x{n}",
                self.p.nrows, self.p.ncols
            ));
        }
        if self.a_eq.ncols != n || self.a_eq.nrows != self.b_eq.len() {
            return fail(format!(
                "A_eq is {}x{} with {} right-hand sides, expected {n} columns",
                self.a_eq.nrows,
                self.a_eq.ncols,
                self.b_eq.len()
            ));
        }
        if self.a_ineq.ncols != n || self.a_ineq.nrows != self.h_ineq.len() {
            return fail(format!(
                "A_ineq is {}x{} with {} right-hand sides, expected {n} columns",
                self.a_ineq.nrows,
                self.a_ineq.ncols,
                self.h_ineq.len()
            ));
        }
        Ok(())
    }

    /// Symmetry and positive semidefiniteness. PSD is checked by an
    /// eigenvalue floor of -1e-10 on the dense matrix, so only call this on
    /// moderately sized problems.
    pub fn check_convexity(&self) -> Result<()> {
        let d = self.p.to_dense();
        let asym = (&d - d.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + d.abs().max()) {
            return Err(Error::Input(format!(
                "P is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if d.nrows() > 0 {
            let min_eig = d.symmetric_eigenvalues().min();
            if min_eig < -1e-10 {
                return Err(Error::Input(format!(
                    "P is not positive semidefinite (smallest eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let pz = self.p.mul_vec(z);
        0.5 * dot(z, &pz) + dot(&self.q, z)
    }

    /// Writes the problem as JSON for cross-checking with external tools.
    pub fn dump_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Infinity-norm KKT residuals, absolute, together with the magnitudes used
/// to normalize them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Equality violation and positive part of inequality violation.
    pub primal: f64,
    /// Negative part of the inequality multipliers.
    pub dual: f64,
    /// `P z + q + A_eq' dual_eq + A_ineq' dual_ineq`.
    pub stationarity: f64,
    /// Largest `|dual_ineq_i * slack_i|`.
    pub complementarity: f64,
    pub primal_scale: f64,
    pub dual_scale: f64,
    pub stationarity_scale: f64,
    pub complementarity_scale: f64,
}

impl KktResiduals {
    pub fn max_abs(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.stationarity)
            .max(self.complementarity)
    }

    /// Each residual divided by `1 + scale`. This is what the optimality
    /// contract is checked against, so badly scaled data cannot make a
    /// correct solution look wrong.
    pub fn max_rel(&self) -> f64 {
        (self.primal / (1.0 + self.primal_scale))
            .max(self.dual / (1.0 + self.dual_scale))
            .max(self.stationarity / (1.0 + self.stationarity_scale))
            .max(self.complementarity / (1.0 + self.complementarity_scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Recomputes all four residuals from the problem data.
pub fn kkt_residuals(
    problem: &QpProblem,
    z: &[f64],
    dual_eq: &[f64],
    dual_ineq: &[f64],
) -> KktResiduals {
    let pz = problem.p.mul_vec(z);
    let aeq_z = problem.a_eq.mul_vec(z);
    let ain_z = problem.a_ineq.mul_vec(z);
    let aeq_t = problem.a_eq.tr_mul_vec(dual_eq);
    let ain_t = problem.a_ineq.tr_mul_vec(dual_ineq);

    let eq_res = aeq_z
        .iter()
        .zip(&problem.b_eq)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let slack: Vec<f64> = problem
        .h_ineq
        .iter()
        .zip(&ain_z)
        .map(|(h, a)| h - a)
        .collect();
    let ineq_res = slack.iter().fold(0.0f64, |m, s| m.max(-s));
    let dual = dual_ineq.iter().fold(0.0f64, |m, d| m.max(-d));
    let stat: Vec<f64> = (0..z.len())
        .map(|i| pz[i] + problem.q[i] + aeq_t[i] + ain_t[i])
        .collect();
    let comp = dual_ineq
        .iter()
        .zip(&slack)
        .fold(0.0f64, |m, (d, s)| m.max((d * s).abs()));

    let objective = 0.5 * dot(z, &pz) + dot(&problem.q, z);
    KktResiduals {
        primal: eq_res.max(ineq_res),
        dual,
        stationarity: inf_norm(&stat),
        complementarity: comp,
        primal_scale: inf_norm(&problem.b_eq)
            .max(inf_norm(&problem.h_ineq))
            .max(inf_norm(&aeq_z))
            .max(inf_norm(&ain_z)),
        dual_scale: inf_norm(dual_ineq),
        stationarity_scale: inf_norm(&pz)
            .max(inf_norm(&problem.q))
            .max(inf_norm(&aeq_t))
            .max(inf_norm(&ain_t)),
        complementarity_scale: objective.abs(),
    }
}

fn backend_settings(settings: &QpSettings) -> DefaultSettings<f64> {
    let tight = settings.tol * 1e-2;
    DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter)
        .tol_gap_abs(tight)
        .tol_gap_rel(tight)
        .tol_feas(tight)
        .tol_ktratio(1e-8)
        .presolve_enable(false)
        .input_sparse_dropzeros(false)
        .build()
        .expect("static solver settings are valid")
}

/// Reusable solver for a fixed problem structure. Only the linear term
/// changes between solves, which skips the symbolic setup on every call.
pub struct QpWorkspace {
    problem: QpProblem,
    settings: QpSettings,
    solver: DefaultSolver<f64>,
}

impl QpWorkspace {
    pub fn new(problem: QpProblem, settings: QpSettings) -> Result<Self> {
        problem.check_dimensions()?;
        let solver = build_backend(&problem, &settings)?;
        Ok(QpWorkspace {
            problem,
            settings,
            solver,
        })
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn set_linear_term(&mut self, q: &[f64]) -> Result<()> {
        if q.len() != self.problem.q.len() {
            return Err(Error::Dimension(format!(
                "linear term has length {}, expected {}",
                q.len(),
                self.problem.q.len()
            )));
        }
        self.problem.q.copy_from_slice(q);
        self.solver
            .update_q(&q.to_vec())
            .map_err(|e| Error::Input(format!("cannot update linear term: {e:?}")))
    }

    /// Replaces the right-hand sides of the equalities and inequalities.
    pub fn set_rhs(&mut self, b_eq: &[f64], h_ineq: &[f64]) -> Result<()> {
        if b_eq.len() != self.problem.b_eq.len() || h_ineq.len() != self.problem.h_ineq.len() {
            return Err(Error::Dimension(format!(
                "right-hand sides have lengths {}/{}, expected {}/{}",
                b_eq.len(),
                h_ineq.len(),
                self.problem.b_eq.len(),
                self.problem.h_ineq.len()
            )));
        }
        self.problem.b_eq.copy_from_slice(b_eq);
        self.problem.h_ineq.copy_from_slice(h_ineq);
        let mut b = b_eq.to_vec();
        b.extend_from_slice(h_ineq);
        self.solver
            .update_b(&b)
            .map_err(|e| Error::Input(format!("cannot update right-hand side: {e:?}")))
    }

    pub fn solve(&mut self) -> QpSolution {
        self.solver.solve();
        collect_solution(&self.problem, &self.settings, &self.solver)
    }
}

fn build_backend(problem: &QpProblem, settings: &QpSettings) -> Result<DefaultSolver<f64>> {
    let p = problem.p.upper_triangle().to_clarabel();
    let n = problem.num_vars();
    let meq = problem.b_eq.len();
    let min = problem.h_ineq.len();
    // stack [A_eq; A_ineq]
    let mut t: Vec<(usize, usize, f64)> =
        Vec::with_capacity(problem.a_eq.nnz() + problem.a_ineq.nnz());
    t.extend(problem.a_eq.iter());
    t.extend(problem.a_ineq.iter().map(|(r, c, v)| (r + meq, c, v)));
    let a = SparseMatrix::from_triplets(meq + min, n, &t).to_clarabel();
    let mut b = problem.b_eq.clone();
    b.extend_from_slice(&problem.h_ineq);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if meq > 0 {
        cones.push(ZeroConeT(meq));
    }
    if min > 0 {
        cones.push(NonnegativeConeT(min));
    }
    DefaultSolver::new(&p, &problem.q, &a, &b, &cones, backend_settings(settings))
        .map_err(|e| Error::Input(format!("solver setup failed: {e:?}")))
}

fn collect_solution(
    problem: &QpProblem,
    settings: &QpSettings,
    solver: &DefaultSolver<f64>,
) -> QpSolution {
    let meq = problem.b_eq.len();
    let sol = &solver.solution;
    let z = sol.x.clone();
    let dual_eq = sol.z[..meq].to_vec();
    let dual_ineq = sol.z[meq..].to_vec();
    let kkt = kkt_residuals(problem, &z, &dual_eq, &dual_ineq);
    let status = match sol.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            QpStatus::Infeasible
        }
        _ if kkt.max_rel() <= settings.tol => QpStatus::Optimal,
        _ => QpStatus::IterationLimit,
    };
    QpSolution {
        objective: problem.objective(&z),
        z,
        dual_eq,
        dual_ineq,
        status,
        kkt,
        iterations: sol.iterations,
    }
}

/// Solves a QP. A status of [`QpStatus::Optimal`] guarantees that the
/// attached residuals satisfy `kkt.max_rel() <= settings.tol`.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    problem.check_dimensions()?;
    let mut solver = build_backend(problem, settings)?;
    solver.solve();
    Ok(collect_solution(problem, settings, &solver))
}
