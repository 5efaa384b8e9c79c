//! Joint bidding by consensus ADMM.
//!
//! Every building `b` proposes a reserve profile `y_b` from its own
//! constraint set, a coordinator projects the proposals onto the set of
//! splits of a time-constant joint bid `Y`, and a multiplier `lambda_b`
//! mediates between the two. One iteration is
//!
//! ```text
//!   1. y_b      = argmin  c_b' kappa - lambda_b' y + rho/2 |ybar_b - y|^2   over C_b
//!   2. Omega    = 1/M sum_b (rho y_b - lambda_b)
//!      Y        = M/(rho N) 1 1' (Omega + p)
//!      ybar_b   = (rho y_b - lambda_b - Omega)/rho + Y/M
//!   3. lambda_b = lambda_b + rho (ybar_b - y_b)
//! ```
//!
//! After step 3 every building holds the same multiplier
//! `Lambda = rho/M Y - Omega`, the market price signal per hour.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::BuildingModel;
use crate::outcomes::{self, BidOutcome};
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus, QpWorkspace, SparseMatrix};
use crate::robust_policy::{build_constraint_set, AffinePolicy, ConstraintSetC, PolicyStructure};
use crate::{Error, Result};

/// Tolerance of the built-in checks on the aggregation step, relative to
/// the magnitude of the data.
const AGGREGATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stopping {
    /// Always run `max_iters` iterations.
    FixedIterations,
    /// Stop early once the primal and dual residuals both fall below `eps`.
    Residual { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iters: usize,
    pub stopping: Stopping,
    pub structure: PolicyStructure,
    pub qp_tol: f64,
    /// Run feasible extraction after every iteration to record `J^F`.
    pub track_feasible: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1.0,
            max_iters: 25,
            stopping: Stopping::FixedIterations,
            structure: PolicyStructure::LowerTriangular,
            qp_tol: 1e-8,
            track_feasible: true,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config(
                "rho",
                format!("must be positive, got {}", self.rho),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        if let Stopping::Residual { eps } = self.stopping {
            if !(eps > 0.0) {
                return Err(Error::config(
                    "stopping.eps",
                    format!("must be positive, got {eps}"),
                ));
            }
        }
        if !(self.qp_tol > 0.0) {
            return Err(Error::config(
                "qp_tol",
                format!("must be positive, got {}", self.qp_tol),
            ));
        }
        Ok(())
    }

    fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            ..QpSettings::default()
        }
    }
}

/// State of the negotiation after one full iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmIterate {
    /// 1-based iteration counter.
    pub iter: usize,
    pub y: Vec<Vec<f64>>,
    pub ybar: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    pub big_y: Vec<f64>,
    pub omega: Vec<f64>,
    /// `max_b |ybar_b - y_b|_2`.
    pub primal_residual: f64,
    /// `rho max_b |ybar_b - ybar_b(previous)|_2`.
    pub dual_residual: f64,
    /// `|ybar_b - y_b|_2` per building.
    pub building_residuals: Vec<f64>,
    /// `c_b' kappa_b` of the building proposals.
    pub nominal_costs: Vec<f64>,
    /// `sum_b c_b' kappa_b - p' Y`.
    pub objective: f64,
    /// Objective of the feasible bid extracted from this iterate.
    pub feasible_objective: Option<f64>,
    /// Constant level of that feasible bid.
    pub feasible_level: Option<f64>,
}

impl AdmmIterate {
    /// The common multiplier; all buildings agree on it after step 3.
    pub fn price(&self) -> &[f64] {
        &self.lambda[0]
    }

    /// `max_b |lambda_b - lambda_1|_inf`.
    pub fn multiplier_spread(&self) -> f64 {
        let first = &self.lambda[0];
        self.lambda
            .iter()
            .flat_map(|l| l.iter().zip(first).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

/// Everything one building keeps between iterations.
pub struct BuildingLocalState {
    pub index: usize,
    pub set: ConstraintSetC,
    settings: QpSettings,
    step: Option<(f64, QpWorkspace)>,
    extract: Option<QpWorkspace>,
    /// Policy of the last building step; satisfies `set` whenever present.
    pub policy: Option<AffinePolicy>,
    /// Full decision vector of the last building step.
    pub point: Option<Vec<f64>>,
    pub y: Vec<f64>,
}

impl BuildingLocalState {
    pub fn new(
        index: usize,
        model: &BuildingModel,
        structure: PolicyStructure,
        settings: QpSettings,
    ) -> Result<Self> {
        let set = build_constraint_set(model, structure, false)?;
        let y = vec![0.0; model.horizon];
        Ok(BuildingLocalState {
            index,
            set,
            settings,
            step: None,
            extract: None,
            policy: None,
            point: None,
            y,
        })
    }

    pub fn model(&self) -> &BuildingModel {
        &self.set.model
    }

    pub fn horizon(&self) -> usize {
        self.set.layout.horizon
    }

    /// `c' kappa` of the last building step, zero before the first step.
    pub fn nominal_cost(&self) -> f64 {
        self.point
            .as_ref()
            .map_or(0.0, |z| dot(&self.set.model.c, self.set.kappa(z)))
    }

    fn step_workspace(&mut self, rho: f64) -> Result<&mut QpWorkspace> {
        if self.step.as_ref().is_none_or(|(r, _)| *r != rho) {
            let q = self.set.nominal_cost_vector();
            let ws = QpWorkspace::new(self.set.to_qp(q, rho), self.settings)?;
            self.step = Some((rho, ws));
        }
        Ok(&mut self.step.as_mut().expect("workspace just created").1)
    }

    /// Minimum nominal cost policy delivering exactly `target` as reserve.
    /// The returned solution is optimal or an error is raised.
    pub fn reoptimize(&mut self, target: &[f64]) -> Result<QpSolution> {
        if target.len() != self.horizon() {
            return Err(Error::Dimension(format!(
                "reserve target has length {}, expected {}",
                target.len(),
                self.horizon()
            )));
        }
        if self.extract.is_none() {
            let (a_eq, b_eq) = self.set.with_fixed_reserve(target);
            let mut problem = self.set.to_qp(self.set.nominal_cost_vector(), 0.0);
            problem.a_eq = a_eq;
            problem.b_eq = b_eq;
            self.extract = Some(QpWorkspace::new(problem, self.settings)?);
        }
        let ws = self.extract.as_mut().expect("workspace just created");
        let mut b_eq = self.set.b_eq.clone();
        b_eq.extend_from_slice(target);
        ws.set_rhs(&b_eq, &self.set.h_ineq)?;
        let sol = ws.solve();
        if sol.status != QpStatus::Optimal {
            return Err(Error::Negotiation {
                building: self.index,
                status: sol.status,
            });
        }
        Ok(sol)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn check_price(p: &[f64], horizon: usize) -> Result<()> {
    if p.len() != horizon {
        return Err(Error::Dimension(format!(
            "price vector has length {}, expected {horizon}",
            p.len()
        )));
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("p", "prices must be finite"));
    }
    Ok(())
}

/// Result of the single-building problem with a time-constant bid.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualBid {
    pub policy: AffinePolicy,
    pub y: Vec<f64>,
    /// The constant bid level.
    pub level: f64,
    /// `c' kappa - p' y`.
    pub objective: f64,
    pub point: Vec<f64>,
}

/// Best time-constant bid a building can make on its own.
pub fn solve_individual(
    model: &BuildingModel,
    structure: PolicyStructure,
    p: &[f64],
    settings: &QpSettings,
) -> Result<IndividualBid> {
    check_price(p, model.horizon)?;
    let set = build_constraint_set(model, structure, true)?;
    let mut q = set.nominal_cost_vector();
    for (k, pk) in p.iter().enumerate() {
        q[set.layout.y_var(k)] = -pk;
    }
    let mut problem = set.to_qp(q, 0.0);
    if p.iter().all(|pk| *pk <= 0.0) {
        // Every bid level is then optimal when reserve costs nothing; pin
        // the tie to no bid at all, which is always among the optima.
        let (a_eq, b_eq) = set.with_fixed_reserve(&vec![0.0; model.horizon]);
        problem.a_eq = a_eq;
        problem.b_eq = b_eq;
    }
    let sol = qp::solve(&problem, settings)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(Error::Model(format!(
                "building {}: no admissible policy exists even without reserve",
                model.id
            )))
        }
        status => {
            return Err(Error::Negotiation {
                building: model.id,
                status,
            })
        }
    }
    let y = set.reserve(&sol.z);
    Ok(IndividualBid {
        policy: set.policy(&sol.z),
        level: y[0],
        objective: dot(&model.c, set.kappa(&sol.z)) - dot(p, &y),
        y,
        point: sol.z,
    })
}

/// Step 1: the building's proposal given its consensus target and price.
pub fn building_step(
    state: &mut BuildingLocalState,
    ybar: &[f64],
    lambda: &[f64],
    rho: f64,
) -> Result<(AffinePolicy, Vec<f64>)> {
    let nh = state.horizon();
    if ybar.len() != nh || lambda.len() != nh {
        return Err(Error::Dimension(format!(
            "ybar and lambda must have length {nh}"
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::config("rho", "must be positive"));
    }
    let mut q = state.set.nominal_cost_vector();
    for k in 0..nh {
        q[state.set.layout.y_var(k)] = -lambda[k] - rho * ybar[k];
    }
    let index = state.index;
    let ws = state.step_workspace(rho)?;
    ws.set_linear_term(&q)?;
    let sol = ws.solve();
    if sol.status != QpStatus::Optimal {
        return Err(Error::Negotiation {
            building: index,
            status: sol.status,
        });
    }
    let policy = state.set.policy(&sol.z);
    let y = state.set.reserve(&sol.z);
    state.policy = Some(policy.clone());
    state.y = y.clone();
    state.point = Some(sol.z);
    Ok((policy, y))
}

/// Output of the aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub big_y: Vec<f64>,
    pub ybar: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

/// `Omega = 1/M sum_b (rho y_b - lambda_b)`, accumulated in building order.
pub fn aggregate(y: &[Vec<f64>], lambda: &[Vec<f64>], rho: f64) -> Vec<f64> {
    let m = y.len() as f64;
    let nh = y.first().map_or(0, Vec::len);
    let mut omega = vec![0.0; nh];
    for (yb, lb) in y.iter().zip(lambda) {
        for k in 0..nh {
            omega[k] += (rho * yb[k] - lb[k]) / m;
        }
    }
    omega
}

/// `M/(rho N) 1 1' (Omega + p)` divided by `M`, i.e. one building's even
/// part of the joint bid.
pub fn even_share(omega: &[f64], p: &[f64], rho: f64) -> Vec<f64> {
    let nh = omega.len();
    let level = omega.iter().zip(p).map(|(o, q)| o + q).sum::<f64>() / (rho * nh as f64);
    vec![level; nh]
}

/// `ybar_b = (rho y_b - lambda_b - Omega)/rho + share`.
pub fn consensus_target(
    y_b: &[f64],
    lambda_b: &[f64],
    omega: &[f64],
    share: &[f64],
    rho: f64,
) -> Vec<f64> {
    (0..y_b.len())
        .map(|k| (rho * y_b[k] - lambda_b[k] - omega[k]) / rho + share[k])
        .collect()
}

fn check_fleet_vectors(y: &[Vec<f64>], lambda: &[Vec<f64>], rho: f64, p: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Input(
            "aggregation needs at least one building".into(),
        ));
    }
    if y.len() != lambda.len() {
        return Err(Error::Dimension(format!(
            "{} proposals but {} multipliers",
            y.len(),
            lambda.len()
        )));
    }
    let nh = p.len();
    if nh == 0 || y.iter().chain(lambda).any(|v| v.len() != nh) {
        return Err(Error::Dimension(format!(
            "every proposal and multiplier must have length {nh} >= 1"
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::config("rho", "must be positive"));
    }
    Ok(())
}

/// Step 2 in closed form.
pub fn aggregation_step(
    y: &[Vec<f64>],
    lambda: &[Vec<f64>],
    rho: f64,
    p: &[f64],
) -> Result<Aggregation> {
    check_fleet_vectors(y, lambda, rho, p)?;
    let m = y.len() as f64;
    let omega = aggregate(y, lambda, rho);
    let share = even_share(&omega, p, rho);
    let big_y: Vec<f64> = share.iter().map(|s| s * m).collect();
    let ybar: Vec<Vec<f64>> = y
        .iter()
        .zip(lambda)
        .map(|(yb, lb)| consensus_target(yb, lb, &omega, &share, rho))
        .collect();

    let scale =
        1.0 + big_y[0].abs() + ybar.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())) * m;
    for k in 0..p.len() {
        let total: f64 = ybar.iter().map(|v| v[k]).sum();
        if (total - big_y[k]).abs() > AGGREGATION_TOL * scale {
            return Err(Error::Internal(format!(
                "aggregated targets sum to {total} at hour {k}, expected {}",
                big_y[k]
            )));
        }
    }
    Ok(Aggregation { big_y, ybar, omega })
}

/// Step 3.
pub fn lagrangian_update(lambda_b: &[f64], ybar_b: &[f64], y_b: &[f64], rho: f64) -> Vec<f64> {
    (0..lambda_b.len())
        .map(|k| lambda_b[k] + rho * (ybar_b[k] - y_b[k]))
        .collect()
}

/// `J = sum_b c_b' kappa_b - p' Y`.
pub fn objective_value(
    fleet: &[BuildingModel],
    kappas: &[Vec<f64>],
    big_y: &[f64],
    p: &[f64],
) -> Result<f64> {
    if fleet.len() != kappas.len() {
        return Err(Error::Dimension(format!(
            "{} buildings but {} nominal inputs",
            fleet.len(),
            kappas.len()
        )));
    }
    if big_y.len() != p.len() {
        return Err(Error::Dimension("Y and p differ in length".into()));
    }
    let mut j = -dot(p, big_y);
    for (b, k) in fleet.iter().zip(kappas) {
        if k.len() != b.c.len() {
            return Err(Error::Dimension(format!(
                "building {}: kappa has length {}, expected {}",
                b.id,
                k.len(),
                b.c.len()
            )));
        }
        j += dot(&b.c, k);
    }
    Ok(j)
}

/// Solution of the aggregation subproblem from its KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationKkt {
    pub big_y: Vec<f64>,
    pub ybar: Vec<Vec<f64>>,
    /// Multiplier of `sum_b ybar_b = Y`.
    pub eta: Vec<f64>,
}

/// Solves the aggregation subproblem
///
/// ```text
///   min  -p' Y + sum_b lambda_b'(ybar_b - y_b) + rho/2 |ybar_b - y_b|^2
///   s.t. sum_b ybar_b = Y 1,   Y scalar
/// ```
///
/// by factoring its KKT matrix. Independent of the closed form used by
/// [`aggregation_step`], so it serves as a reference.
pub fn aggregation_kkt_oracle(
    y: &[Vec<f64>],
    lambda: &[Vec<f64>],
    rho: f64,
    p: &[f64],
) -> Result<AggregationKkt> {
    check_fleet_vectors(y, lambda, rho, p)?;
    let (m, nh) = (y.len(), p.len());
    // unknowns: [Y, ybar_1 .. ybar_M, eta]
    let dim = 1 + m * nh + nh;
    let eta0 = 1 + m * nh;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for k in 0..nh {
        kkt[(0, eta0 + k)] = -1.0;
        kkt[(eta0 + k, 0)] = -1.0;
        rhs[0] += p[k];
    }
    for b in 0..m {
        for k in 0..nh {
            let r = 1 + b * nh + k;
            kkt[(r, r)] = rho;
            kkt[(r, eta0 + k)] = 1.0;
            kkt[(eta0 + k, r)] = 1.0;
            rhs[r] = rho * y[b][k] - lambda[b][k];
        }
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("aggregation KKT matrix is singular".into()))?;
    Ok(AggregationKkt {
        big_y: vec![sol[0]; nh],
        ybar: (0..m)
            .map(|b| sol.rows(1 + b * nh, nh).iter().copied().collect())
            .collect(),
        eta: sol.rows(eta0, nh).iter().copied().collect(),
    })
}

/// Optimum of the joint problem solved as one QP.
#[derive(Debug, Clone, PartialEq)]
pub struct MonolithicSolution {
    pub objective: f64,
    pub level: f64,
    pub y: Vec<Vec<f64>>,
    pub kappas: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
    pub status: QpStatus,
    pub kkt_rel: f64,
}

/// Solves the joint bidding problem directly: all constraint sets side by
/// side, `sum_b y_b = Y 1`, minimizing `sum_b c_b' kappa_b - p' Y 1`.
pub fn solve_monolithic(
    fleet: &[BuildingModel],
    structure: PolicyStructure,
    p: &[f64],
    settings: &QpSettings,
) -> Result<MonolithicSolution> {
    if fleet.is_empty() {
        return Err(Error::Input("the fleet is empty".into()));
    }
    let nh = p.len();
    let sets: Vec<ConstraintSetC> = fleet
        .iter()
        .map(|b| {
            check_price(p, b.horizon)?;
            build_constraint_set(b, structure, false)
        })
        .collect::<Result<_>>()?;
    let mut offsets = Vec::with_capacity(sets.len());
    let mut nvars = 0;
    let (mut neq, mut nin) = (0, 0);
    for s in &sets {
        offsets.push(nvars);
        nvars += s.num_vars();
        neq += s.b_eq.len();
        nin += s.h_ineq.len();
    }
    let y_var = nvars;
    nvars += 1;

    let mut q = vec![0.0; nvars];
    let mut teq = Vec::new();
    let mut tin = Vec::new();
    let mut b_eq = Vec::with_capacity(neq + nh);
    let mut h_in = Vec::with_capacity(nin);
    for (s, &off) in sets.iter().zip(&offsets) {
        for (i, c) in s.nominal_cost_vector().into_iter().enumerate() {
            q[off + i] = c;
        }
        let r0 = b_eq.len();
        teq.extend(s.a_eq.iter().map(|(r, c, v)| (r0 + r, off + c, v)));
        b_eq.extend_from_slice(&s.b_eq);
        let r0 = h_in.len();
        tin.extend(s.a_ineq.iter().map(|(r, c, v)| (r0 + r, off + c, v)));
        h_in.extend_from_slice(&s.h_ineq);
    }
    for k in 0..nh {
        let r = b_eq.len();
        for (s, &off) in sets.iter().zip(&offsets) {
            teq.push((r, off + s.layout.y_var(k), 1.0));
        }
        teq.push((r, y_var, -1.0));
        b_eq.push(0.0);
    }
    q[y_var] = -p.iter().sum::<f64>();
    let problem = QpProblem {
        p: SparseMatrix::zeros(nvars, nvars),
        q,
        a_eq: SparseMatrix::from_triplets(b_eq.len(), nvars, &teq),
        b_eq,
        a_ineq: SparseMatrix::from_triplets(h_in.len(), nvars, &tin),
        h_ineq: h_in,
    };
    let sol = qp::solve(&problem, settings)?;
    if sol.status == QpStatus::Infeasible {
        return Err(Error::Model("the joint problem is infeasible".into()));
    }
    let points: Vec<Vec<f64>> = sets
        .iter()
        .zip(&offsets)
        .map(|(s, &off)| sol.z[off..off + s.num_vars()].to_vec())
        .collect();
    Ok(MonolithicSolution {
        objective: sol.objective,
        level: sol.z[y_var],
        y: sets
            .iter()
            .zip(&points)
            .map(|(s, z)| s.reserve(z))
            .collect(),
        kappas: sets
            .iter()
            .zip(&points)
            .map(|(s, z)| s.kappa(z).to_vec())
            .collect(),
        points,
        status: sol.status,
        kkt_rel: sol.kkt.max_rel(),
    })
}

/// Coordinator-driven negotiation, advanced one iteration at a time.
pub struct CentralizedAdmm {
    pub states: Vec<BuildingLocalState>,
    pub config: AdmmConfig,
    pub p: Vec<f64>,
    ybar: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    pub history: Vec<AdmmIterate>,
    last_outcome: Option<BidOutcome>,
}

impl CentralizedAdmm {
    /// Starts from `Y = 0`, `ybar_b = 0`, `lambda_b = 0`.
    pub fn new(fleet: &[BuildingModel], config: AdmmConfig, p: &[f64]) -> Result<Self> {
        config.validate()?;
        if fleet.is_empty() {
            return Err(Error::Input("the fleet is empty".into()));
        }
        for b in fleet {
            check_price(p, b.horizon)?;
        }
        let settings = config.qp_settings();
        let states = fleet
            .iter()
            .enumerate()
            .map(|(i, b)| BuildingLocalState::new(i, b, config.structure, settings))
            .collect::<Result<Vec<_>>>()?;
        let zeros = vec![vec![0.0; p.len()]; fleet.len()];
        Ok(CentralizedAdmm {
            states,
            config,
            p: p.to_vec(),
            ybar: zeros.clone(),
            lambda: zeros,
            history: Vec::new(),
            last_outcome: None,
        })
    }

    pub fn last(&self) -> Option<&AdmmIterate> {
        self.history.last()
    }

    /// Feasible bid extracted from the last iterate, if extraction ran.
    pub fn last_outcome(&self) -> Option<&BidOutcome> {
        self.last_outcome.as_ref()
    }

    /// Runs steps 1 to 3 once.
    pub fn iterate(&mut self) -> Result<&AdmmIterate> {
        let rho = self.config.rho;
        let ybar_prev = &self.ybar;
        let lambda_prev = &self.lambda;
        let y: Vec<Vec<f64>> = self
            .states
            .par_iter_mut()
            .zip(ybar_prev.par_iter().zip(lambda_prev.par_iter()))
            .map(|(s, (yb, lb))| building_step(s, yb, lb, rho).map(|(_, y)| y))
            .collect::<Result<_>>()?;
        let agg = aggregation_step(&y, &self.lambda, rho, &self.p)?;
        let lambda: Vec<Vec<f64>> = (0..y.len())
            .map(|b| lagrangian_update(&self.lambda[b], &agg.ybar[b], &y[b], rho))
            .collect();
        let record = finish_iterate(
            self.history.len() + 1,
            &mut self.states,
            y,
            agg,
            ybar_prev,
            lambda.clone(),
            &self.p,
            &self.config,
        )?;
        self.ybar = record.0.ybar.clone();
        self.lambda = lambda;
        self.last_outcome = record.1;
        self.history.push(record.0);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Whether the configured stopping rule says to stop now.
    pub fn should_stop(&self) -> bool {
        should_stop(&self.config, &self.history)
    }

    /// Iterates until the stopping rule fires.
    pub fn run(&mut self) -> Result<()> {
        while !self.should_stop() {
            self.iterate()?;
        }
        Ok(())
    }

    /// Feasible bid from the last iterate, extracting it if needed.
    pub fn outcome(&mut self) -> Result<BidOutcome> {
        if let Some(o) = &self.last_outcome {
            return Ok(o.clone());
        }
        let last = self
            .history
            .last()
            .ok_or_else(|| Error::Input("no iteration has run yet".into()))?;
        let mut o = outcomes::feasible_extract(&mut self.states, &last.y, &self.p)?;
        o.lambda = Some(last.price().to_vec());
        self.last_outcome = Some(o.clone());
        Ok(o)
    }
}

pub(crate) fn should_stop(config: &AdmmConfig, history: &[AdmmIterate]) -> bool {
    let Some(last) = history.last() else {
        return false;
    };
    if last.iter >= config.max_iters {
        return true;
    }
    match config.stopping {
        Stopping::FixedIterations => false,
        Stopping::Residual { eps } => last.primal_residual <= eps && last.dual_residual <= eps,
    }
}

/// Assembles the iterate record shared by both negotiation variants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_iterate(
    iter: usize,
    states: &mut [BuildingLocalState],
    y: Vec<Vec<f64>>,
    agg: Aggregation,
    ybar_prev: &[Vec<f64>],
    lambda: Vec<Vec<f64>>,
    p: &[f64],
    config: &AdmmConfig,
) -> Result<(AdmmIterate, Option<BidOutcome>)> {
    let building_residuals: Vec<f64> = y
        .iter()
        .zip(&agg.ybar)
        .map(|(a, b)| norm2(a.iter().zip(b).map(|(x, z)| z - x)))
        .collect();
    let primal_residual = building_residuals.iter().copied().fold(0.0, f64::max);
    let dual_residual = config.rho
        * agg
            .ybar
            .iter()
            .zip(ybar_prev)
            .map(|(a, b)| norm2(a.iter().zip(b).map(|(x, z)| x - z)))
            .fold(0.0, f64::max);
    let nominal_costs: Vec<f64> = states
        .iter()
        .map(BuildingLocalState::nominal_cost)
        .collect();
    let objective = nominal_costs.iter().sum::<f64>() - dot(p, &agg.big_y);
    let outcome = if config.track_feasible {
        let mut o = outcomes::feasible_extract(states, &y, p)?;
        o.lambda = Some(lambda[0].clone());
        Some(o)
    } else {
        None
    };
    let it = AdmmIterate {
        iter,
        y,
        ybar: agg.ybar,
        lambda,
        big_y: agg.big_y,
        omega: agg.omega,
        primal_residual,
        dual_residual,
        building_residuals,
        nominal_costs,
        objective,
        feasible_objective: outcome.as_ref().map(|o| o.j_f),
        feasible_level: outcome.as_ref().map(|o| o.level),
    };
    Ok((it, outcome))
}

/// Full coordinator run.
#[derive(Debug, Clone)]
pub struct AdmmRun {
    pub history: Vec<AdmmIterate>,
    pub outcome: BidOutcome,
}

/// Runs the coordinator variant until the stopping rule fires and extracts
/// a feasible bid from the final iterate.
pub fn run_centralized(fleet: &[BuildingModel], config: AdmmConfig, p: &[f64]) -> Result<AdmmRun> {
    let mut admm = CentralizedAdmm::new(fleet, config, p)?;
    admm.run()?;
    let outcome = admm.outcome()?;
    Ok(AdmmRun {
        history: admm.history,
        outcome,
    })
}
