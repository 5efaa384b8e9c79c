mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use reserve_core::admm::{
    aggregation_kkt_oracle, aggregation_step, building_step, lagrangian_update, objective_value,
    run_centralized, solve_individual, solve_monolithic, AdmmConfig, BuildingLocalState, Stopping,
};
use reserve_core::model::DEFAULT_RESERVE_PRICE;
use reserve_core::qp::{QpSettings, QpStatus};
use reserve_core::robust_policy::{check_robust_feasibility, CheckMode, PolicyStructure};

/// `(y, lambda, rho, p)` for a random fleet.
type FleetVectors = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64, Vec<f64>);

fn random_fleet_vectors(seed: u64) -> FleetVectors {
    let mut rng = rng(seed);
    let m = rng.gen_range(1..=10);
    let n = rng.gen_range(1..=24);
    let y = (0..m)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..4.0)).collect())
        .collect();
    let l = (0..m)
        .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    (
        y,
        l,
        rng.gen_range(0.01..10.0),
        (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_form_matches_kkt_oracle(seed in any::<u64>()) {
        let (y, lambda, rho, p) = random_fleet_vectors(seed);
        let agg = aggregation_step(&y, &lambda, rho, &p).unwrap();
        let oracle = aggregation_kkt_oracle(&y, &lambda, rho, &p).unwrap();
        prop_assert!(max_abs_diff(&agg.big_y, &oracle.big_y) <= 1e-8);
        prop_assert!(max_abs_diff_nested(&agg.ybar, &oracle.ybar) <= 1e-8);
        let price_sum: f64 = oracle.eta.iter().zip(&p).map(|(e, q)| e + q).sum();
        prop_assert!(price_sum.abs() <= 1e-8);
    }

    #[test]
    fn aggregation_is_feasible_and_multipliers_agree(seed in any::<u64>()) {
        let (y, lambda, rho, p) = random_fleet_vectors(seed);
        let agg = aggregation_step(&y, &lambda, rho, &p).unwrap();
        let m = y.len() as f64;
        for k in 0..p.len() {
            let s: f64 = agg.ybar.iter().map(|v| v[k]).sum();
            prop_assert!((s - agg.big_y[k]).abs() <= 1e-10 * (1.0 + agg.big_y[k].abs()));
            prop_assert_eq!(agg.big_y[k], agg.big_y[0]);
        }
        let expected: Vec<f64> = (0..p.len()).map(|k| rho / m * agg.big_y[k] - agg.omega[k]).collect();
        for b in 0..y.len() {
            let l = lagrangian_update(&lambda[b], &agg.ybar[b], &y[b], rho);
            prop_assert!(max_abs_diff(&l, &expected) <= 1e-9);
        }
        // the new multiplier is the negated dual of the coupling constraint
        let oracle = aggregation_kkt_oracle(&y, &lambda, rho, &p).unwrap();
        let neg_eta: Vec<f64> = oracle.eta.iter().map(|e| -e).collect();
        prop_assert!(max_abs_diff(&expected, &neg_eta) <= 1e-8);
    }
}

#[test]
fn complementary_pair_converges_to_unit_bid() {
    let pair = complementary_pair();
    let p = vec![1.0, 1.0];
    let cfg = AdmmConfig {
        max_iters: 500,
        stopping: Stopping::Residual { eps: 1e-9 },
        ..AdmmConfig::default()
    };
    let run = run_centralized(&pair, cfg, &p).unwrap();
    let last = run.history.last().unwrap();
    assert!(
        max_abs_diff(&last.big_y, &[1.0, 1.0]) <= 1e-6,
        "{:?}",
        last.big_y
    );
    assert!((run.outcome.level - 1.0).abs() <= 1e-6);
    for b in &pair {
        let alone = solve_individual(
            b,
            PolicyStructure::LowerTriangular,
            &p,
            &QpSettings::default(),
        )
        .unwrap();
        assert!(alone.level.abs() <= 1e-8);
    }
}

#[test]
fn single_building_reduces_to_individual_bid() {
    let fleet = small_fleet(31, 1, 6);
    let p = vec![DEFAULT_RESERVE_PRICE; 6];
    let alone = solve_individual(
        &fleet[0],
        PolicyStructure::LowerTriangular,
        &p,
        &QpSettings::default(),
    )
    .unwrap();
    let cfg = AdmmConfig {
        rho: 2.0 * DEFAULT_RESERVE_PRICE,
        max_iters: 400,
        stopping: Stopping::Residual { eps: 1e-8 },
        ..AdmmConfig::default()
    };
    let run = run_centralized(&fleet, cfg, &p).unwrap();
    let j_f = run.outcome.j_f;
    let tol = 1e-5 * alone.objective.abs().max(1.0);
    assert!(
        j_f >= alone.objective - tol,
        "J_F {j_f} below optimum {}",
        alone.objective
    );
    assert!(
        (j_f - alone.objective).abs() <= tol,
        "J_F {j_f} vs {}",
        alone.objective
    );
    assert!((run.outcome.level - alone.level).abs() <= 1e-4 * alone.level.max(1.0));
}

#[test]
fn monolithic_objective_is_reproduced_by_objective_value() {
    let fleet = small_fleet(32, 3, 6);
    let p = vec![DEFAULT_RESERVE_PRICE; 6];
    let mono = solve_monolithic(
        &fleet,
        PolicyStructure::LowerTriangular,
        &p,
        &QpSettings::default(),
    )
    .unwrap();
    assert_eq!(mono.status, QpStatus::Optimal);
    let j = objective_value(&fleet, &mono.kappas, &[mono.level; 6], &p).unwrap();
    assert!((j - mono.objective).abs() <= 1e-9 * mono.objective.abs().max(1.0));
    // and it is never worse than bidding alone
    let alone: f64 = fleet
        .iter()
        .map(|b| {
            solve_individual(
                b,
                PolicyStructure::LowerTriangular,
                &p,
                &QpSettings::default(),
            )
            .unwrap()
            .objective
        })
        .sum();
    assert!(mono.objective <= alone + 1e-7 * alone.abs().max(1.0));
}

#[test]
fn building_step_results_are_robustly_feasible() {
    let fleet = small_fleet(33, 2, 3);
    let mut rng = rng(33);
    for (i, b) in fleet.iter().enumerate() {
        let mut state = BuildingLocalState::new(
            i,
            b,
            PolicyStructure::LowerTriangular,
            QpSettings::default(),
        )
        .unwrap();
        for _ in 0..3 {
            let ybar: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..3.0)).collect();
            let lambda: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.2..0.5)).collect();
            building_step(&mut state, &ybar, &lambda, 0.3).unwrap();
            let point = state.point.clone().unwrap();
            let report = check_robust_feasibility(&state.set, &point, CheckMode::Vertices).unwrap();
            assert!(
                !report.violations_beyond(1e-8),
                "margin {}",
                report.worst_margin
            );
        }
    }
}

#[test]
fn every_iterate_has_equal_multipliers() {
    let fleet = small_fleet(34, 3, 6);
    let p = vec![DEFAULT_RESERVE_PRICE; 6];
    let cfg = AdmmConfig {
        rho: 0.3,
        max_iters: 15,
        track_feasible: false,
        ..AdmmConfig::default()
    };
    let run = run_centralized(&fleet, cfg, &p).unwrap();
    assert_eq!(run.history.len(), 15);
    for it in &run.history {
        assert!(it.multiplier_spread() <= 1e-9, "iteration {}", it.iter);
    }
}
