//! Runs a resolved scenario and collects everything the reports need.

use reserve_core::admm::{
    run_centralized, solve_individual, AdmmConfig, AdmmIterate, IndividualBid,
};
use reserve_core::decentral::{run_decentralized, InMemoryRing};
use reserve_core::outcomes::{
    allocate_rewards, is_converged, mixed_reward, proportional_reward, BidOutcome, PriceSource,
    RewardTable, BID_RESOLUTION,
};
use reserve_core::qp::QpSettings;
use reserve_core::{Error, Result};

use crate::scenario::{Mode, Resolved};

#[derive(Debug, Clone)]
pub struct BidResult {
    pub mode: Mode,
    pub history: Vec<AdmmIterate>,
    pub outcome: BidOutcome,
    pub rewards: RewardTable,
    /// Stand-alone bids, used for the aggregation advantage.
    pub individual: Vec<IndividualBid>,
    /// Frames per round in decentral mode.
    pub messages: Option<Vec<usize>>,
    /// Hex transcript of all frames in decentral mode.
    pub transcript: Option<String>,
}

impl BidResult {
    pub fn pooled_individual_level(&self) -> f64 {
        self.individual.iter().map(|b| b.level).sum()
    }

    /// Joint level over pooled stand-alone levels; `None` when nobody can
    /// bid alone.
    pub fn advantage_ratio(&self) -> Option<f64> {
        let pooled = self.pooled_individual_level();
        (pooled > BID_RESOLUTION).then(|| self.outcome.level / pooled)
    }

    pub fn converged(&self) -> bool {
        self.history.last().is_none_or(is_converged)
    }
}

fn individual_bids(resolved: &Resolved, config: &AdmmConfig) -> Result<Vec<IndividualBid>> {
    let settings = QpSettings {
        tol: config.qp_tol,
        ..QpSettings::default()
    };
    resolved
        .fleet
        .iter()
        .map(|b| solve_individual(b, config.structure, &resolved.p, &settings))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pooled stand-alone bids as an outcome of their own.
fn individual_outcome(resolved: &Resolved, bids: &[IndividualBid]) -> BidOutcome {
    let nh = resolved.p.len();
    let level: f64 = bids.iter().map(|b| b.level).sum();
    let kappas: Vec<Vec<f64>> = bids
        .iter()
        .map(|b| b.policy.kappa.as_slice().to_vec())
        .collect();
    let nominal_costs: Vec<f64> = resolved
        .fleet
        .iter()
        .zip(&kappas)
        .map(|(m, k)| dot(&m.c, k))
        .collect();
    let big_y_f = vec![level; nh];
    BidOutcome {
        level,
        j_f: nominal_costs.iter().sum::<f64>() - dot(&resolved.p, &big_y_f),
        big_y_f,
        shares: bids.iter().map(|b| b.y.clone()).collect(),
        kappas,
        policies: bids.iter().map(|b| b.policy.clone()).collect(),
        points: bids.iter().map(|b| b.point.clone()).collect(),
        nominal_costs,
        lambda: None,
    }
}

pub fn run_bid(
    resolved: &Resolved,
    mode: Mode,
    config: AdmmConfig,
    alpha: f64,
) -> Result<BidResult> {
    if resolved.fleet.is_empty() {
        return Err(Error::Input("the fleet is empty".into()));
    }
    let individual = individual_bids(resolved, &config)?;
    let p = &resolved.p;
    let (history, outcome, messages, transcript) = match mode {
        Mode::Individual => (
            Vec::new(),
            individual_outcome(resolved, &individual),
            None,
            None,
        ),
        Mode::Central => {
            let run = run_centralized(&resolved.fleet, config, p)?;
            (run.history, run.outcome, None, None)
        }
        Mode::Decentral => {
            let mut ring = InMemoryRing::new(resolved.fleet.len());
            let run = run_decentralized(&resolved.fleet, config, p, &mut ring)?;
            (
                run.history,
                run.outcome,
                Some(run.messages),
                Some(ring.transcript_hex()),
            )
        }
    };
    let rewards = match history.last() {
        Some(last) => allocate_rewards(&outcome, last, config.rho, p, alpha)?,
        None => {
            let proportional = proportional_reward(p, &outcome.shares);
            RewardTable {
                alpha,
                price_source: PriceSource::Market,
                price: p.clone(),
                mixed: mixed_reward(alpha, &proportional, &proportional)?,
                lagrangian: proportional.clone(),
                proportional,
                total: dot(p, &outcome.big_y_f),
            }
        }
    };
    Ok(BidResult {
        mode,
        history,
        outcome,
        rewards,
        individual,
        messages,
        transcript,
    })
}

/// Process exit code for a failed run: 2 when a problem is infeasible, 3
/// when a solver did not finish, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use reserve_core::qp::QpStatus;
    match err.downcast_ref::<Error>() {
        Some(Error::Model(_)) | Some(Error::Build(_)) => 2,
        Some(Error::Negotiation {
            status: QpStatus::Infeasible,
            ..
        }) => 2,
        Some(Error::Negotiation { .. }) | Some(Error::Internal(_)) => 3,
        _ => 1,
    }
}
