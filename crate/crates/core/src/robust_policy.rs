//! Robust reserve constraints under affine decision rules.
//!
//! The unknown reserve request is written as `s = diag(y) zeta` with
//! `zeta` in the unit box `[-1, 1]^N`. Inputs follow affine policies in
//! `zeta`:
//!
//! ```text
//!   u(zeta)  = K zeta + kappa      (nominal input, with recourse)
//!   du(zeta) = F zeta              (reserve response)
//! ```
//!
//! Both gains are causal: block `(k, j)` is zero for `j > k`. The response
//! must deliver the request exactly, `eta' du(k) = s(k)`, which becomes the
//! matrix identity `(I_N (x) eta') F = diag(y)`. Diagonal blocks of `K` are
//! restricted to power-neutral directions (`eta' K_kk = 0`); otherwise `K_kk`
//! could cancel `F_kk` and the request would never reach the meter.
//!
//! Every state and input row is an affine function of `zeta`, so its worst
//! case over the box is the nominal value plus the 1-norm of its gain row.
//! Auxiliary variables `t >= |gain|` make this exact and linear.
//!
//! Flat decision vector, in order: `kappa`, free `K` entries, free `F`
//! entries, `y`, nominal states `xbar`, state gains `Gamma` (response of the
//! state at the end of hour `k` to `zeta(j)`), input 1-norm auxiliaries,
//! state 1-norm auxiliaries. [`DecisionLayout`] holds the exact offsets.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{stack_dynamics, validate_model, BuildingModel, StackedSystem};
use crate::qp::{QpProblem, RowBuilder, SparseMatrix};
use crate::{Error, Result};

/// Sparsity pattern imposed on the recourse gain `K`. `F` is always lower
/// block-triangular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyStructure {
    /// Nominal input fixed ahead of time; only `du` reacts.
    Zero,
    /// `u(k)` reacts to `zeta(k)` only.
    BlockDiagonal,
    /// `u(k)` reacts to `zeta(1..=k)`.
    #[default]
    LowerTriangular,
}

impl PolicyStructure {
    pub fn allows(self, k: usize, j: usize) -> bool {
        match self {
            PolicyStructure::Zero => false,
            PolicyStructure::BlockDiagonal => j == k,
            PolicyStructure::LowerTriangular => j <= k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    /// `(N m) x N`
    pub k: DMatrix<f64>,
    pub kappa: DVector<f64>,
    /// `(N m) x N`
    pub f: DMatrix<f64>,
}

impl AffinePolicy {
    pub fn zeros(m: usize, horizon: usize) -> Self {
        AffinePolicy {
            k: DMatrix::zeros(horizon * m, horizon),
            kappa: DVector::zeros(horizon * m),
            f: DMatrix::zeros(horizon * m, horizon),
        }
    }

    pub fn nominal_input(&self, zeta: &DVector<f64>) -> DVector<f64> {
        &self.k * zeta + &self.kappa
    }

    pub fn response(&self, zeta: &DVector<f64>) -> DVector<f64> {
        &self.f * zeta
    }

    /// Whether every entry outside the allowed blocks is exactly zero.
    pub fn respects(&self, structure: PolicyStructure, m: usize) -> bool {
        let horizon = self.k.ncols();
        (0..horizon * m).all(|r| {
            (0..horizon).all(|j| {
                let k = r / m;
                (structure.allows(k, j) || self.k[(r, j)] == 0.0)
                    && (j <= k || self.f[(r, j)] == 0.0)
            })
        })
    }
}

/// Index map of the flat decision vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionLayout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub structure: PolicyStructure,
    pub kappa: usize,
    /// `(row, col)` of each free `K` entry, stored from offset `k_offset`.
    pub k_entries: Vec<(usize, usize)>,
    pub k_offset: usize,
    pub f_entries: Vec<(usize, usize)>,
    pub f_offset: usize,
    pub y: usize,
    pub xbar: usize,
    /// `(state row, col)` of each state gain entry.
    pub gamma_entries: Vec<(usize, usize)>,
    pub gamma_offset: usize,
    pub t_input_entries: Vec<(usize, usize)>,
    pub t_input_offset: usize,
    pub t_state_entries: Vec<(usize, usize)>,
    pub t_state_offset: usize,
    pub len: usize,
    #[serde(skip)]
    k_index: Vec<Option<usize>>,
    #[serde(skip)]
    f_index: Vec<Option<usize>>,
    #[serde(skip)]
    gamma_index: Vec<Option<usize>>,
}

impl DecisionLayout {
    fn new(model: &BuildingModel, structure: PolicyStructure) -> Self {
        let (n, m, nh) = (model.n, model.m, model.horizon);
        let mut next = 0;
        let kappa = next;
        next += nh * m;

        let causal = |structure_ok: &dyn Fn(usize, usize) -> bool| {
            let mut entries = Vec::new();
            for r in 0..nh * m {
                for j in 0..nh {
                    if structure_ok(r / m, j) {
                        entries.push((r, j));
                    }
                }
            }
            entries
        };
        let k_entries = causal(&|k, j| structure.allows(k, j));
        let k_offset = next;
        next += k_entries.len();
        let f_entries = causal(&|k, j| j <= k);
        let f_offset = next;
        next += f_entries.len();
        let y = next;
        next += nh;
        let xbar = next;
        next += nh * n;

        let mut gamma_entries = Vec::new();
        for r in 0..nh * n {
            for j in 0..=(r / n) {
                gamma_entries.push((r, j));
            }
        }
        let gamma_offset = next;
        next += gamma_entries.len();

        let bounded = |lo: f64, hi: f64| lo.is_finite() || hi.is_finite();
        let t_input_entries: Vec<_> = f_entries
            .iter()
            .copied()
            .filter(|&(r, _)| bounded(model.u_lo[r], model.u_hi[r]))
            .collect();
        let t_input_offset = next;
        next += t_input_entries.len();
        let t_state_entries: Vec<_> = gamma_entries
            .iter()
            .copied()
            .filter(|&(r, _)| bounded(model.x_lo[r], model.x_hi[r]))
            .collect();
        let t_state_offset = next;
        next += t_state_entries.len();

        let index_of = |entries: &[(usize, usize)], offset: usize, rows: usize| {
            let mut idx = vec![None; rows * nh];
            for (e, &(r, j)) in entries.iter().enumerate() {
                idx[r * nh + j] = Some(offset + e);
            }
            idx
        };
        DecisionLayout {
            n,
            m,
            horizon: nh,
            structure,
            kappa,
            k_index: index_of(&k_entries, k_offset, nh * m),
            f_index: index_of(&f_entries, f_offset, nh * m),
            gamma_index: index_of(&gamma_entries, gamma_offset, nh * n),
            k_entries,
            k_offset,
            f_entries,
            f_offset,
            y,
            xbar,
            gamma_entries,
            gamma_offset,
            t_input_entries,
            t_input_offset,
            t_state_entries,
            t_state_offset,
            len: next,
        }
    }

    pub fn k_var(&self, row: usize, col: usize) -> Option<usize> {
        self.k_index[row * self.horizon + col]
    }

    pub fn f_var(&self, row: usize, col: usize) -> Option<usize> {
        self.f_index[row * self.horizon + col]
    }

    pub fn gamma_var(&self, row: usize, col: usize) -> Option<usize> {
        self.gamma_index[row * self.horizon + col]
    }

    pub fn y_var(&self, k: usize) -> usize {
        self.y + k
    }

    pub fn kappa_var(&self, row: usize) -> usize {
        self.kappa + row
    }
}

/// What an inequality row of [`ConstraintSetC`] encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    StateUpper(usize),
    StateLower(usize),
    InputUpper(usize),
    InputLower(usize),
    /// `gain - t <= 0` or `-gain - t <= 0`.
    Auxiliary,
    ReserveNonnegative(usize),
}

/// Finite linear description of one building's admissible policies and
/// bids.
#[derive(Debug, Clone)]
pub struct ConstraintSetC {
    pub layout: DecisionLayout,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_ineq: SparseMatrix,
    pub h_ineq: Vec<f64>,
    pub row_kinds: Vec<RowKind>,
    pub time_constant_y: bool,
    pub model: BuildingModel,
    pub stacked: StackedSystem,
}

pub fn build_constraint_set(
    model: &BuildingModel,
    structure: PolicyStructure,
    time_constant_y: bool,
) -> Result<ConstraintSetC> {
    let findings = validate_model(model);
    if let Some(v) = findings.iter().find(|v| v.field == "eta") {
        return Err(Error::Build(format!(
            "reserve coupling is infeasible: {}",
            v.rule
        )));
    }
    if !findings.is_empty() {
        let text: Vec<String> = findings.iter().map(ToString::to_string).collect();
        return Err(Error::Build(text.join("; ")));
    }
    let stacked = stack_dynamics(model)?;
    let layout = DecisionLayout::new(model, structure);
    let (n, m, nh) = (model.n, model.m, model.horizon);
    let a = &model.a;
    let b = &model.b;

    let mut eq = RowBuilder::new(layout.len);

    // nominal dynamics
    for k in 0..nh {
        for i in 0..n {
            let mut row = vec![(layout.xbar + k * n + i, 1.0)];
            for l in 0..m {
                row.push((layout.kappa_var(k * m + l), -b[(i, l)]));
            }
            let mut rhs: f64 = (0..model.q)
                .map(|d| model.e[(i, d)] * model.v_at(k)[d])
                .sum();
            if k == 0 {
                rhs += (0..n).map(|l| a[(i, l)] * model.x1[l]).sum::<f64>();
            } else {
                for l in 0..n {
                    row.push((layout.xbar + (k - 1) * n + l, -a[(i, l)]));
                }
            }
            eq.push(row, rhs);
        }
    }

    // state gains: Gamma(k, j) = A Gamma(k-1, j) + B (K + F)(k, j)
    for k in 0..nh {
        for j in 0..=k {
            for i in 0..n {
                let mut row = vec![(layout.gamma_var(k * n + i, j).unwrap(), 1.0)];
                for l in 0..m {
                    let r = k * m + l;
                    if b[(i, l)] != 0.0 {
                        if let Some(v) = layout.k_var(r, j) {
                            row.push((v, -b[(i, l)]));
                        }
                        row.push((layout.f_var(r, j).unwrap(), -b[(i, l)]));
                    }
                }
                if k > j {
                    for l in 0..n {
                        if a[(i, l)] != 0.0 {
                            row.push((layout.gamma_var((k - 1) * n + l, j).unwrap(), -a[(i, l)]));
                        }
                    }
                }
                eq.push(row, 0.0);
            }
        }
    }

    // reserve coupling (I_N (x) eta') F = diag(y)
    for k in 0..nh {
        for j in 0..=k {
            let mut row: Vec<(usize, f64)> = (0..m)
                .filter(|&l| model.eta[l] != 0.0)
                .map(|l| (layout.f_var(k * m + l, j).unwrap(), model.eta[l]))
                .collect();
            if j == k {
                row.push((layout.y_var(k), -1.0));
            }
            eq.push(row, 0.0);
        }
    }

    // power-neutral diagonal recourse
    for k in 0..nh {
        if structure.allows(k, k) {
            let row: Vec<(usize, f64)> = (0..m)
                .filter(|&l| model.eta[l] != 0.0)
                .map(|l| (layout.k_var(k * m + l, k).unwrap(), model.eta[l]))
                .collect();
            eq.push(row, 0.0);
        }
    }

    if time_constant_y {
        for k in 1..nh {
            eq.push([(layout.y_var(k - 1), 1.0), (layout.y_var(k), -1.0)], 0.0);
        }
    }

    let mut ineq = RowBuilder::new(layout.len);
    let mut kinds = Vec::new();

    // input rows
    let mut t_of_input: Vec<Vec<usize>> = vec![Vec::new(); nh * m];
    for (e, &(r, j)) in layout.t_input_entries.iter().enumerate() {
        let t = layout.t_input_offset + e;
        t_of_input[r].push(t);
        let f = layout.f_var(r, j).unwrap();
        for sign in [1.0, -1.0] {
            let mut row = vec![(f, sign), (t, -1.0)];
            if let Some(kv) = layout.k_var(r, j) {
                row.push((kv, sign));
            }
            ineq.push(row, 0.0);
            kinds.push(RowKind::Auxiliary);
        }
    }
    for r in 0..nh * m {
        let ts = t_of_input[r].iter().map(|&t| (t, 1.0));
        if model.u_hi[r].is_finite() {
            ineq.push(
                std::iter::once((layout.kappa_var(r), 1.0)).chain(ts.clone()),
                model.u_hi[r],
            );
            kinds.push(RowKind::InputUpper(r));
        }
        if model.u_lo[r].is_finite() {
            ineq.push(
                std::iter::once((layout.kappa_var(r), -1.0)).chain(ts),
                -model.u_lo[r],
            );
            kinds.push(RowKind::InputLower(r));
        }
    }

    // state rows
    let mut t_of_state: Vec<Vec<usize>> = vec![Vec::new(); nh * n];
    for (e, &(r, j)) in layout.t_state_entries.iter().enumerate() {
        let t = layout.t_state_offset + e;
        t_of_state[r].push(t);
        let g = layout.gamma_var(r, j).unwrap();
        for sign in [1.0, -1.0] {
            ineq.push([(g, sign), (t, -1.0)], 0.0);
            kinds.push(RowKind::Auxiliary);
        }
    }
    for r in 0..nh * n {
        let ts = t_of_state[r].iter().map(|&t| (t, 1.0));
        if model.x_hi[r].is_finite() {
            ineq.push(
                std::iter::once((layout.xbar + r, 1.0)).chain(ts.clone()),
                model.x_hi[r],
            );
            kinds.push(RowKind::StateUpper(r));
        }
        if model.x_lo[r].is_finite() {
            ineq.push(
                std::iter::once((layout.xbar + r, -1.0)).chain(ts),
                -model.x_lo[r],
            );
            kinds.push(RowKind::StateLower(r));
        }
    }

    for k in 0..nh {
        ineq.push([(layout.y_var(k), -1.0)], 0.0);
        kinds.push(RowKind::ReserveNonnegative(k));
    }

    let (a_eq, b_eq) = eq.finish();
    let (a_ineq, h_ineq) = ineq.finish();
    Ok(ConstraintSetC {
        layout,
        a_eq,
        b_eq,
        a_ineq,
        h_ineq,
        row_kinds: kinds,
        time_constant_y,
        model: model.clone(),
        stacked,
    })
}

impl ConstraintSetC {
    pub fn num_vars(&self) -> usize {
        self.layout.len
    }

    pub fn policy(&self, z: &[f64]) -> AffinePolicy {
        let (m, nh) = (self.layout.m, self.layout.horizon);
        let mut p = AffinePolicy::zeros(m, nh);
        for r in 0..nh * m {
            p.kappa[r] = z[self.layout.kappa_var(r)];
        }
        for (e, &(r, j)) in self.layout.k_entries.iter().enumerate() {
            p.k[(r, j)] = z[self.layout.k_offset + e];
        }
        for (e, &(r, j)) in self.layout.f_entries.iter().enumerate() {
            p.f[(r, j)] = z[self.layout.f_offset + e];
        }
        p
    }

    pub fn reserve(&self, z: &[f64]) -> Vec<f64> {
        z[self.layout.y..self.layout.y + self.layout.horizon].to_vec()
    }

    pub fn kappa<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[self.layout.kappa..self.layout.kappa + self.layout.horizon * self.layout.m]
    }

    /// Builds a decision vector from a policy and bid, filling nominal
    /// states, state gains and the tightest auxiliaries. Entries of the
    /// policy outside the structure are ignored.
    pub fn lift(&self, policy: &AffinePolicy, y: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let (n, m, nh) = (l.n, l.m, l.horizon);
        let mut z = vec![0.0; l.len];
        for r in 0..nh * m {
            z[l.kappa_var(r)] = policy.kappa[r];
        }
        for (e, &(r, j)) in l.k_entries.iter().enumerate() {
            z[l.k_offset + e] = policy.k[(r, j)];
        }
        for (e, &(r, j)) in l.f_entries.iter().enumerate() {
            z[l.f_offset + e] = policy.f[(r, j)];
        }
        z[l.y..l.y + nh].copy_from_slice(y);

        let xbar = self.stacked.states(&policy.kappa);
        z[l.xbar..l.xbar + nh * n].copy_from_slice(xbar.as_slice());

        let mut gain = DMatrix::zeros(nh * m, nh);
        for &(r, j) in &l.f_entries {
            let kv = l.k_var(r, j).map_or(0.0, |v| z[v]);
            gain[(r, j)] = kv + z[l.f_var(r, j).unwrap()];
        }
        let gamma = &self.stacked.b_bold * &gain;
        for (e, &(r, j)) in l.gamma_entries.iter().enumerate() {
            z[l.gamma_offset + e] = gamma[(r, j)];
        }
        for (e, &(r, j)) in l.t_input_entries.iter().enumerate() {
            z[l.t_input_offset + e] = gain[(r, j)].abs();
        }
        for (e, &(r, j)) in l.t_state_entries.iter().enumerate() {
            z[l.t_state_offset + e] = gamma[(r, j)].abs();
        }
        z
    }

    pub fn equality_violation(&self, z: &[f64]) -> f64 {
        self.a_eq
            .mul_vec(z)
            .iter()
            .zip(&self.b_eq)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn inequality_violation(&self, z: &[f64]) -> f64 {
        self.a_ineq
            .mul_vec(z)
            .iter()
            .zip(&self.h_ineq)
            .fold(0.0, |acc, (a, h)| acc.max(a - h))
    }

    /// QP over this set with objective
    /// `1/2 y_weight |y|^2 + q'z`.
    pub fn to_qp(&self, q: Vec<f64>, y_weight: f64) -> QpProblem {
        let l = &self.layout;
        let p = if y_weight != 0.0 {
            let t: Vec<_> = (0..l.horizon)
                .map(|k| (l.y_var(k), l.y_var(k), y_weight))
                .collect();
            SparseMatrix::from_triplets(l.len, l.len, &t)
        } else {
            SparseMatrix::zeros(l.len, l.len)
        };
        QpProblem {
            p,
            q,
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            a_ineq: self.a_ineq.clone(),
            h_ineq: self.h_ineq.clone(),
        }
    }

    /// Linear cost `c' kappa` on the decision vector.
    pub fn nominal_cost_vector(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.layout.len];
        for (r, c) in self.model.c.iter().enumerate() {
            q[self.layout.kappa_var(r)] = *c;
        }
        q
    }

    /// Appends `y = target` as equality rows.
    pub fn with_fixed_reserve(&self, target: &[f64]) -> (SparseMatrix, Vec<f64>) {
        let l = &self.layout;
        let mut t: Vec<(usize, usize, f64)> = self.a_eq.iter().collect();
        let base = self.a_eq.nrows;
        for k in 0..l.horizon {
            t.push((base + k, l.y_var(k), 1.0));
        }
        let mut b = self.b_eq.clone();
        b.extend_from_slice(target);
        (SparseMatrix::from_triplets(base + l.horizon, l.len, &t), b)
    }
}

/// Realized trajectory for one request pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub du: DVector<f64>,
    pub s: DVector<f64>,
    /// Largest `|eta' du(k) - s(k)|`.
    pub coupling_error: f64,
    /// Whether the coupling holds to 1e-9.
    pub coupling_ok: bool,
}

pub fn evaluate_policy(
    model: &BuildingModel,
    stacked: &StackedSystem,
    policy: &AffinePolicy,
    y: &[f64],
    zeta: &[f64],
) -> Result<Trajectory> {
    let nh = model.horizon;
    if zeta.len() != nh || y.len() != nh {
        return Err(Error::Dimension(format!(
            "zeta and y must have length {nh}"
        )));
    }
    if let Some((k, z)) = zeta.iter().enumerate().find(|(_, z)| !(z.abs() <= 1.0)) {
        return Err(Error::Input(format!(
            "zeta[{k}] = {z} lies outside [-1, 1]"
        )));
    }
    let zeta = DVector::from_column_slice(zeta);
    let u = policy.nominal_input(&zeta);
    let du = policy.response(&zeta);
    let s = DVector::from_iterator(nh, (0..nh).map(|k| y[k] * zeta[k]));
    let x = stacked.states(&(&u + &du));
    let m = model.m;
    let coupling_error = (0..nh)
        .map(|k| {
            let delivered: f64 = (0..m).map(|l| model.eta[l] * du[k * m + l]).sum();
            (delivered - s[k]).abs()
        })
        .fold(0.0, f64::max);
    Ok(Trajectory {
        x,
        u,
        du,
        s,
        coupling_error,
        coupling_ok: coupling_error <= 1e-9,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckMode {
    /// All `2^N` corners of the box, `N <= 12`.
    Vertices,
    Samples {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Smallest slack over all bounds and all evaluated requests. Negative
    /// means a violation.
    pub worst_margin: f64,
    pub worst_constraint: String,
    pub worst_zeta: Vec<f64>,
    /// Largest coupling error seen.
    pub worst_coupling: f64,
    pub evaluated: usize,
}

impl FeasibilityReport {
    pub fn violations_beyond(&self, tol: f64) -> bool {
        self.worst_margin < -tol || self.worst_coupling > tol
    }
}

pub const MAX_VERTEX_HORIZON: usize = 12;

pub fn check_robust_feasibility(
    set: &ConstraintSetC,
    point: &[f64],
    mode: CheckMode,
) -> Result<FeasibilityReport> {
    let nh = set.layout.horizon;
    if point.len() != set.layout.len {
        return Err(Error::Dimension(format!(
            "point has length {}, expected {}",
            point.len(),
            set.layout.len
        )));
    }
    let eq = set.equality_violation(point);
    if eq > 1e-8 {
        return Err(Error::Input(format!(
            "point violates the linear equalities by {eq:e}"
        )));
    }
    let policy = set.policy(point);
    let y = set.reserve(point);

    let mut report = FeasibilityReport {
        worst_margin: f64::INFINITY,
        worst_constraint: String::new(),
        worst_zeta: vec![0.0; nh],
        worst_coupling: 0.0,
        evaluated: 0,
    };
    let mut visit = |zeta: Vec<f64>| -> Result<()> {
        let traj = evaluate_policy(&set.model, &set.stacked, &policy, &y, &zeta)?;
        report.evaluated += 1;
        report.worst_coupling = report.worst_coupling.max(traj.coupling_error);
        let total = &traj.u + &traj.du;
        let model = &set.model;
        let mut consider = |margin: f64, what: &dyn Fn() -> String| {
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_constraint = what();
                report.worst_zeta = zeta.clone();
            }
        };
        for (r, x) in traj.x.iter().enumerate() {
            consider(model.x_hi[r] - x, &|| format!("state upper bound, row {r}"));
            consider(x - model.x_lo[r], &|| format!("state lower bound, row {r}"));
        }
        for (r, u) in total.iter().enumerate() {
            consider(model.u_hi[r] - u, &|| format!("input upper bound, row {r}"));
            consider(u - model.u_lo[r], &|| format!("input lower bound, row {r}"));
        }
        Ok(())
    };

    match mode {
        CheckMode::Vertices => {
            if nh > MAX_VERTEX_HORIZON {
                return Err(Error::Input(format!(
                    "vertex enumeration needs 2^{nh} evaluations; use sampling for N > {MAX_VERTEX_HORIZON}"
                )));
            }
            for mask in 0u32..(1u32 << nh) {
                let zeta = (0..nh)
                    .map(|k| if mask >> k & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                visit(zeta)?;
            }
        }
        CheckMode::Samples { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let zeta = (0..nh).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                visit(zeta)?;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::capacity_only_building;
    use approx::assert_abs_diff_eq;

    #[test]
    fn structure_masks() {
        assert!(!PolicyStructure::Zero.allows(2, 2));
        assert!(PolicyStructure::BlockDiagonal.allows(2, 2));
        assert!(!PolicyStructure::BlockDiagonal.allows(2, 1));
        assert!(PolicyStructure::LowerTriangular.allows(2, 1));
        assert!(!PolicyStructure::LowerTriangular.allows(1, 2));
    }

    #[test]
    fn layout_counts() {
        let b = capacity_only_building(0, &[1.0; 4]).unwrap();
        let c = build_constraint_set(&b, PolicyStructure::LowerTriangular, false).unwrap();
        let l = &c.layout;
        assert_eq!(l.k_entries.len(), 10);
        assert_eq!(l.f_entries.len(), 10);
        assert_eq!(l.gamma_entries.len(), 10);
        // free state bounds need no auxiliaries
        assert!(l.t_state_entries.is_empty());
        assert_eq!(l.t_input_entries.len(), 10);
    }

    #[test]
    fn zero_eta_is_a_build_error() {
        let mut b = capacity_only_building(0, &[1.0; 3]).unwrap();
        b.eta = vec![0.0];
        let err = build_constraint_set(&b, PolicyStructure::Zero, false).unwrap_err();
        assert!(err.to_string().contains("no controllable power"));
    }

    #[test]
    fn nominal_request_gives_nominal_input() {
        let b = capacity_only_building(0, &[2.0; 3]).unwrap();
        let stacked = stack_dynamics(&b).unwrap();
        let mut p = AffinePolicy::zeros(1, 3);
        p.kappa = DVector::from_column_slice(&[0.5, -0.5, 1.0]);
        p.f[(0, 0)] = 1.0;
        p.f[(1, 1)] = 1.0;
        p.f[(2, 2)] = 1.0;
        let t = evaluate_policy(&b, &stacked, &p, &[1.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(t.u, p.kappa);
        assert!(t.du.iter().all(|&d| d == 0.0));
        assert!(t.s.iter().all(|&d| d == 0.0));

        let t = evaluate_policy(&b, &stacked, &p, &[1.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(t.s[0], 1.0);
        assert_abs_diff_eq!(t.du[0], 1.0);
        assert!(t.coupling_ok);
    }

    #[test]
    fn zeta_outside_box_rejected() {
        let b = capacity_only_building(0, &[1.0; 2]).unwrap();
        let stacked = stack_dynamics(&b).unwrap();
        let p = AffinePolicy::zeros(1, 2);
        assert!(matches!(
            evaluate_policy(&b, &stacked, &p, &[0.0; 2], &[1.5, 0.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn vertex_mode_refuses_long_horizons() {
        let b = capacity_only_building(0, &[1.0; 13]).unwrap();
        let c = build_constraint_set(&b, PolicyStructure::Zero, false).unwrap();
        let z = c.lift(&AffinePolicy::zeros(1, 13), &[0.0; 13]);
        let err = check_robust_feasibility(&c, &z, CheckMode::Vertices).unwrap_err();
        assert!(err.to_string().contains("use sampling"));
    }

    #[test]
    fn zero_policy_with_wide_bounds_has_positive_margins() {
        let b = capacity_only_building(0, &[1.0; 3]).unwrap();
        let c = build_constraint_set(&b, PolicyStructure::LowerTriangular, false).unwrap();
        let z = c.lift(&AffinePolicy::zeros(1, 3), &[0.0; 3]);
        let r = check_robust_feasibility(&c, &z, CheckMode::Vertices).unwrap();
        assert_eq!(r.evaluated, 8);
        assert!(r.worst_margin > 0.0);
        assert!(c.inequality_violation(&z) <= 0.0);
    }
}
