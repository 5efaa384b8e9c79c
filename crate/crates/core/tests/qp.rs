mod common;

use common::*;
use reserve_core::qp::{kkt_residuals, solve, QpSettings, QpStatus};

#[test]
fn random_instances_match_active_set_search() {
    let mut rng = rng(17);
    for case in 0..50 {
        // the documented shape: 10 variables, 5 equalities, 8 inequalities
        let problem = loop {
            let p = random_qp(&mut rng, 10, 5, 8);
            if p.q.len() == 10 && p.b_eq.len() == 5 && p.h_ineq.len() == 8 {
                break p;
            }
        };
        let sol = solve(&problem, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        assert!(sol.kkt.max_rel() <= 1e-8, "case {case}: {:?}", sol.kkt);
        let (best, z) = active_set_oracle(&problem).unwrap();
        assert!(
            (sol.objective - best).abs() <= 1e-7,
            "case {case}: {} vs {best}",
            sol.objective
        );
        assert!(
            max_abs_diff(&sol.z, &z) <= 1e-5,
            "case {case}: minimizer differs"
        );
    }
}

#[test]
fn reported_residuals_are_recomputable() {
    let mut rng = rng(18);
    for _ in 0..30 {
        let problem = random_qp(&mut rng, 30, 5, 10);
        let sol = solve(&problem, &QpSettings::default()).unwrap();
        let again = kkt_residuals(&problem, &sol.z, &sol.dual_eq, &sol.dual_ineq);
        for (a, b) in [
            (sol.kkt.primal, again.primal),
            (sol.kkt.dual, again.dual),
            (sol.kkt.stationarity, again.stationarity),
            (sol.kkt.complementarity, again.complementarity),
        ] {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn solves_are_deterministic() {
    let problem = random_qp(&mut rng(19), 20, 4, 8);
    let a = solve(&problem, &QpSettings::default()).unwrap();
    let b = solve(&problem, &QpSettings::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn linear_programs_are_supported() {
    use reserve_core::qp::{QpProblem, SparseMatrix};
    // min -z1 - z2  s.t. z1 + 2 z2 <= 4, 3 z1 + z2 <= 6, z >= 0
    let problem = QpProblem {
        p: SparseMatrix::zeros(2, 2),
        q: vec![-1.0, -1.0],
        a_eq: SparseMatrix::zeros(0, 2),
        b_eq: vec![],
        a_ineq: SparseMatrix::from_triplets(
            4,
            2,
            &[
                (0, 0, 1.0),
                (0, 1, 2.0),
                (1, 0, 3.0),
                (1, 1, 1.0),
                (2, 0, -1.0),
                (3, 1, -1.0),
            ],
        ),
        h_ineq: vec![4.0, 6.0, 0.0, 0.0],
    };
    let sol = solve(&problem, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.z[0] - 1.6).abs() <= 1e-7 && (sol.z[1] - 1.2).abs() <= 1e-7);
    assert!((sol.objective + 2.8).abs() <= 1e-7);
}
