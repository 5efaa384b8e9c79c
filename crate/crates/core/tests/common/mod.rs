//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reserve_core::model::{capacity_only_building, generate_fleet, BuildingModel, FleetSpec};
use reserve_core::qp::{QpProblem, SparseMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fleet of small prototypes with the default placeholder prices.
pub fn small_fleet(seed: u64, count: usize, horizon: usize) -> Vec<BuildingModel> {
    generate_fleet(&FleetSpec {
        seed,
        small: count,
        medium: 0,
        large: 0,
        residential_fraction: 0.5,
        horizon,
        p: None,
        c_tilde: None,
    })
    .expect("valid fleet spec")
}

/// Two buildings with capacity `(1, 0)` and `(0, 1)`.
pub fn complementary_pair() -> Vec<BuildingModel> {
    vec![
        capacity_only_building(0, &[1.0, 0.0]).unwrap(),
        capacity_only_building(1, &[0.0, 1.0]).unwrap(),
    ]
}

pub const TOY_HOURS: usize = 12;
pub const TOY_CRITICAL_HOUR: usize = 5;

/// Six "black" buildings with capacity 1 except at the critical hour and
/// one "red" building with capacity 6 only at the critical hour. The red
/// building is the last member.
pub fn toy_fleet() -> Vec<BuildingModel> {
    let mut fleet = Vec::new();
    for b in 0..6 {
        let mut cap = vec![1.0; TOY_HOURS];
        cap[TOY_CRITICAL_HOUR] = 0.0;
        fleet.push(capacity_only_building(b, &cap).unwrap());
    }
    let mut cap = vec![0.0; TOY_HOURS];
    cap[TOY_CRITICAL_HOUR] = 6.0;
    fleet.push(capacity_only_building(6, &cap).unwrap());
    fleet
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_nested(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| max_abs_diff(x, y))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random strictly convex QP with a known feasible point. Some
/// inequalities are active at that point.
pub fn random_qp(
    rng: &mut ChaCha8Rng,
    max_vars: usize,
    max_eq: usize,
    max_ineq: usize,
) -> QpProblem {
    let n = rng.gen_range(2..=max_vars);
    let meq = rng.gen_range(0..=max_eq.min(n - 1));
    let mineq = rng.gen_range(0..=max_ineq);
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

    let a_eq = DMatrix::from_fn(meq, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = (&a_eq * DVector::from_column_slice(&x0))
        .as_slice()
        .to_vec();
    let a_in = DMatrix::from_fn(mineq, n, |_, _| rng.gen_range(-1.0..1.0));
    let ax = &a_in * DVector::from_column_slice(&x0);
    let h: Vec<f64> = ax
        .iter()
        .map(|v| {
            if rng.gen_bool(0.3) {
                *v
            } else {
                v + rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    QpProblem {
        p: SparseMatrix::from_dense(&p),
        q,
        a_eq: SparseMatrix::from_dense(&a_eq),
        b_eq,
        a_ineq: SparseMatrix::from_dense(&a_in),
        h_ineq: h,
    }
}

/// Optimal value of a strictly convex QP by trying every set of active
/// inequalities: each set gives an equality-constrained stationary point,
/// and the best primal-feasible one is the optimum.
pub fn active_set_oracle(problem: &QpProblem) -> Option<(f64, Vec<f64>)> {
    let n = problem.q.len();
    let p = problem.p.to_dense();
    let a_eq = problem.a_eq.to_dense();
    let a_in = problem.a_ineq.to_dense();
    let (meq, mineq) = (a_eq.nrows(), a_in.nrows());
    assert!(mineq < 24, "exhaustive search is only for tiny instances");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1u32 << mineq) {
        let active: Vec<usize> = (0..mineq).filter(|i| mask >> i & 1 == 1).collect();
        let rows = meq + active.len();
        if rows > n {
            continue;
        }
        let dim = n + rows;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        for i in 0..n {
            rhs[i] = -problem.q[i];
        }
        let mut put_row = |r: usize, row: Vec<f64>, b: f64| {
            for (j, v) in row.into_iter().enumerate() {
                kkt[(n + r, j)] = v;
                kkt[(j, n + r)] = v;
            }
            rhs[n + r] = b;
        };
        for r in 0..meq {
            put_row(r, a_eq.row(r).iter().copied().collect(), problem.b_eq[r]);
        }
        for (r, &i) in active.iter().enumerate() {
            put_row(
                meq + r,
                a_in.row(i).iter().copied().collect(),
                problem.h_ineq[i],
            );
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        // reject near-singular systems whose "solution" does not solve them
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let z: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let zv = DVector::from_column_slice(&z);
        let ok_in = (&a_in * &zv)
            .iter()
            .zip(&problem.h_ineq)
            .all(|(a, h)| a - h <= 1e-9 * (1.0 + h.abs()));
        if !ok_in {
            continue;
        }
        let obj = problem.objective(&z);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, z));
        }
    }
    best
}

/// Random stable model with `n` states and `m` inputs: nonnegative `A`
/// with row sums at most 0.95, comfort band [15, 30] and inputs in [0, 4].
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> BuildingModel {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
    for i in 0..n {
        let s: f64 = a.row(i).sum();
        let target = rng.gen_range(0.6..0.95);
        for j in 0..n {
            a[(i, j)] *= target / s;
        }
    }
    BuildingModel {
        id: 0,
        n,
        m,
        q: 1,
        horizon,
        a,
        b: DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.1..0.6)),
        e: DMatrix::from_fn(n, 1, |_, _| rng.gen_range(0.05..0.2)),
        x1: (0..n).map(|_| rng.gen_range(20.0..24.0)).collect(),
        v: (0..horizon).map(|_| rng.gen_range(5.0..15.0)).collect(),
        x_lo: vec![15.0; horizon * n],
        x_hi: vec![30.0; horizon * n],
        u_lo: vec![0.0; horizon * m],
        u_hi: vec![4.0; horizon * m],
        eta: (0..m).map(|_| rng.gen_range(0.5..2.0)).collect(),
        c: (0..horizon * m).map(|_| rng.gen_range(0.1..0.3)).collect(),
    }
}

/// Largest-total-reserve point of the model's constraint set, or `None`
/// if the set is empty.
pub fn max_reserve_point(
    set: &reserve_core::robust_policy::ConstraintSetC,
    weights: &[f64],
) -> Option<Vec<f64>> {
    use reserve_core::qp::{solve, QpSettings, QpStatus};
    let mut q = set.nominal_cost_vector();
    for (k, w) in weights.iter().enumerate() {
        q[set.layout.y_var(k)] = -w;
    }
    let sol = solve(&set.to_qp(q, 0.0), &QpSettings::default()).ok()?;
    (sol.status == QpStatus::Optimal).then_some(sol.z)
}
