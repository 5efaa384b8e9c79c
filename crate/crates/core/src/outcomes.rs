//! Feasible bids from any negotiation iterate, and reward allocation.
//!
//! Intermediate proposals `y_b` need not add up to a time-constant profile.
//! Cutting every hour down to the weakest hour's total and scaling each
//! building's share by the same factor gives a joint bid every member can
//! still honor, since each share lies below the member's own feasible
//! proposal. Nominal inputs are then reoptimized for the reduced shares.

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmIterate, BuildingLocalState};
use crate::model::BuildingModel;
use crate::qp::QpSettings;
use crate::robust_policy::{AffinePolicy, PolicyStructure};
use crate::{Error, Result};

/// Weight of the proportional scheme in the mixed reward unless configured
/// otherwise.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Bid levels below this many kW are solver round-off and count as zero
/// when bids are compared.
pub const BID_RESOLUTION: f64 = 1e-8;

/// A joint bid every member can deliver, with its per-building split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidOutcome {
    /// Constant level of the joint bid.
    pub level: f64,
    #[serde(rename = "Y_F")]
    pub big_y_f: Vec<f64>,
    pub shares: Vec<Vec<f64>>,
    pub kappas: Vec<Vec<f64>>,
    #[serde(skip)]
    pub policies: Vec<AffinePolicy>,
    /// Full decision vectors of the reoptimized policies.
    #[serde(skip)]
    pub points: Vec<Vec<f64>>,
    /// `c_b' kappa_b` of the reoptimized policies.
    pub nominal_costs: Vec<f64>,
    /// `sum_b c_b' kappa_b - p' Y_F`.
    pub j_f: f64,
    /// Common multiplier of the iterate the bid was extracted from.
    pub lambda: Option<Vec<f64>>,
}

/// Joint level and shares, before any reoptimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareSplit {
    pub level: f64,
    pub big_y: Vec<f64>,
    pub shares: Vec<Vec<f64>>,
}

/// Cuts proposals down to a time-constant total. Each hour is scaled by
/// `level / total`; an hour nobody offers anything in forces the level to
/// zero and its shares are zero. Tiny negative proposals from solver
/// round-off count as zero.
pub fn scale_to_feasible(y: &[Vec<f64>]) -> Result<ShareSplit> {
    let nh = y
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Input("no proposals to extract from".into()))?;
    if nh == 0 || y.iter().any(|v| v.len() != nh) {
        return Err(Error::Dimension(format!(
            "every proposal must have the same length >= 1, first has {nh}"
        )));
    }
    let clipped: Vec<Vec<f64>> = y
        .iter()
        .map(|v| v.iter().map(|x| x.max(0.0)).collect())
        .collect();
    let totals: Vec<f64> = (0..nh)
        .map(|k| clipped.iter().map(|v| v[k]).sum())
        .collect();
    let level = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let shares = clipped
        .iter()
        .map(|v| {
            (0..nh)
                .map(|k| {
                    if totals[k] > 0.0 {
                        level / totals[k] * v[k]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(ShareSplit {
        level,
        big_y: vec![level; nh],
        shares,
    })
}

/// Feasible bid from the proposals `y`, reusing the buildings' solver
/// workspaces for the reoptimization.
pub fn feasible_extract(
    states: &mut [BuildingLocalState],
    y: &[Vec<f64>],
    p: &[f64],
) -> Result<BidOutcome> {
    if states.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} buildings but {} proposals",
            states.len(),
            y.len()
        )));
    }
    let split = scale_to_feasible(y)?;
    if p.len() != split.big_y.len() {
        return Err(Error::Dimension(
            "price vector length differs from horizon".into(),
        ));
    }
    let mut kappas = Vec::with_capacity(states.len());
    let mut policies = Vec::with_capacity(states.len());
    let mut points = Vec::with_capacity(states.len());
    let mut nominal_costs = Vec::with_capacity(states.len());
    for (state, share) in states.iter_mut().zip(&split.shares) {
        let sol = state.reoptimize(share).map_err(|e| {
            Error::Internal(format!(
                "reoptimization for a scaled-down share failed, which the constraint \
                 construction rules out: {e}"
            ))
        })?;
        let kappa = state.set.kappa(&sol.z).to_vec();
        nominal_costs.push(dot(&state.set.model.c, &kappa));
        kappas.push(kappa);
        policies.push(state.set.policy(&sol.z));
        points.push(sol.z);
    }
    let j_f = nominal_costs.iter().sum::<f64>() - dot(p, &split.big_y);
    Ok(BidOutcome {
        level: split.level,
        big_y_f: split.big_y,
        shares: split.shares,
        kappas,
        policies,
        points,
        nominal_costs,
        j_f,
        lambda: None,
    })
}

/// Same as [`feasible_extract`] for callers without negotiation state.
pub fn feasible_extract_fleet(
    fleet: &[BuildingModel],
    structure: PolicyStructure,
    y: &[Vec<f64>],
    p: &[f64],
    settings: QpSettings,
) -> Result<BidOutcome> {
    let mut states = fleet
        .iter()
        .enumerate()
        .map(|(i, b)| BuildingLocalState::new(i, b, structure, settings))
        .collect::<Result<Vec<_>>>()?;
    feasible_extract(&mut states, y, p)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `r_b = p' y_b`.
pub fn proportional_reward(p: &[f64], y: &[Vec<f64>]) -> Vec<f64> {
    y.iter().map(|yb| dot(p, yb)).collect()
}

/// `r_b = Lambda' y_b`.
pub fn lagrangian_reward(lambda: &[f64], y: &[Vec<f64>]) -> Vec<f64> {
    y.iter().map(|yb| dot(lambda, yb)).collect()
}

/// Hourly price consistent with an extracted bid:
///
/// ```text
///   Omega_F  = rho/M Y_F - Lambda_last
///   Lambda_F = 1/N 1 1' (Omega_F + p) - Omega_F
/// ```
///
/// Its hourly sum equals that of `p`, so paying `Lambda_F` on the shares of
/// a time-constant bid distributes exactly `p' Y_F`.
pub fn feasible_lagrangian_price(
    y_f: &[f64],
    lambda_last: &[f64],
    rho: f64,
    m: usize,
    p: &[f64],
) -> Result<Vec<f64>> {
    let nh = p.len();
    if y_f.len() != nh || lambda_last.len() != nh || nh == 0 {
        return Err(Error::Dimension(format!(
            "Y_F, Lambda and p must share a length >= 1, got {}/{}/{nh}",
            y_f.len(),
            lambda_last.len()
        )));
    }
    if m == 0 || !(rho > 0.0) {
        return Err(Error::Input("need M >= 1 and rho > 0".into()));
    }
    let omega_f: Vec<f64> = (0..nh)
        .map(|k| rho / m as f64 * y_f[k] - lambda_last[k])
        .collect();
    let mean = omega_f.iter().zip(p).map(|(o, q)| o + q).sum::<f64>() / nh as f64;
    Ok(omega_f.iter().map(|o| mean - o).collect())
}

/// `r_mix = alpha r + (1 - alpha) r_Lambda`.
pub fn mixed_reward(alpha: f64, r: &[f64], r_lambda: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!(
            "alpha = {alpha} lies outside [0, 1]"
        )));
    }
    if r.len() != r_lambda.len() {
        return Err(Error::Dimension("reward vectors differ in length".into()));
    }
    Ok(r.iter()
        .zip(r_lambda)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect())
}

/// Whether an iterate counts as converged for reward purposes:
/// `primal residual <= 1e-6 max(1, |Y|_2)`.
pub fn is_converged(iterate: &AdmmIterate) -> bool {
    let norm = iterate.big_y.iter().map(|v| v * v).sum::<f64>().sqrt();
    iterate.primal_residual <= 1e-6 * norm.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSource {
    /// The consensus multiplier of a converged run.
    Converged,
    /// The extraction-consistent price of a run stopped early.
    Extracted,
    /// The market price itself, for buildings bidding on their own.
    Market,
}

/// Rewards of the extracted bid under all three schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub alpha: f64,
    pub price_source: PriceSource,
    /// Hourly price used for the Lagrangian scheme.
    pub price: Vec<f64>,
    pub proportional: Vec<f64>,
    pub lagrangian: Vec<f64>,
    pub mixed: Vec<f64>,
    /// `p' Y_F`, the market reward to be split.
    pub total: f64,
}

/// Splits the reward of `outcome` among its members. The Lagrangian scheme
/// prices with the consensus multiplier if `last` is converged and with
/// the extraction-consistent price otherwise.
pub fn allocate_rewards(
    outcome: &BidOutcome,
    last: &AdmmIterate,
    rho: f64,
    p: &[f64],
    alpha: f64,
) -> Result<RewardTable> {
    let m = outcome.shares.len();
    let (price_source, price) = if is_converged(last) {
        (PriceSource::Converged, last.price().to_vec())
    } else {
        (
            PriceSource::Extracted,
            feasible_lagrangian_price(&outcome.big_y_f, last.price(), rho, m, p)?,
        )
    };
    let proportional = proportional_reward(p, &outcome.shares);
    let lagrangian = lagrangian_reward(&price, &outcome.shares);
    let mixed = mixed_reward(alpha, &proportional, &lagrangian)?;
    Ok(RewardTable {
        alpha,
        price_source,
        price,
        proportional,
        lagrangian,
        mixed,
        total: dot(p, &outcome.big_y_f),
    })
}
