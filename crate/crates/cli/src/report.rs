//! Output files. Numbers in CSV files carry 17 significant digits so every
//! value round-trips exactly.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use reserve_core::outcomes::PriceSource;

use crate::run::BidResult;
use crate::scenario::{Mode, SCHEMA_VERSION};

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mode: Mode,
    pub buildings: usize,
    pub iterations: usize,
    pub rho: f64,
    pub alpha: f64,
    /// Objective of the last negotiation iterate, `sum c'kappa - p'Y`.
    #[serde(rename = "J")]
    pub j: f64,
    /// Objective of the feasible bid.
    #[serde(rename = "J_F")]
    pub j_f: f64,
    /// Constant level of the feasible bid.
    pub level_f: f64,
    /// `p' Y_F`, the market reward.
    pub reward_total: f64,
    pub pooled_individual_level: f64,
    /// `level_f / pooled_individual_level`; `null` if the pooled level is
    /// zero, see `advantage_note`.
    pub advantage_ratio: Option<f64>,
    pub advantage_note: Option<String>,
    pub y_min: f64,
    pub y_min_met: bool,
    pub converged: bool,
    pub final_primal_residual: Option<f64>,
    pub price_source: PriceSource,
    /// True when some price is a built-in placeholder rather than data.
    pub placeholder_prices: bool,
    pub messages_per_iteration: Option<usize>,
}

pub fn summarize(
    result: &BidResult,
    rho: f64,
    alpha: f64,
    y_min: f64,
    placeholder: bool,
) -> Summary {
    let last = result.history.last();
    let ratio = result.advantage_ratio();
    Summary {
        schema_version: SCHEMA_VERSION,
        mode: result.mode,
        buildings: result.outcome.shares.len(),
        iterations: result.history.len(),
        rho,
        alpha,
        j: last.map_or(result.outcome.j_f, |l| l.objective),
        j_f: result.outcome.j_f,
        level_f: result.outcome.level,
        reward_total: result.rewards.total,
        pooled_individual_level: result.pooled_individual_level(),
        advantage_ratio: ratio,
        advantage_note: ratio
            .is_none()
            .then(|| "undefined: pooled individual bids are zero".to_string()),
        y_min,
        y_min_met: result.outcome.level >= y_min,
        converged: result.converged(),
        final_primal_residual: last.map(|l| l.primal_residual),
        price_source: result.rewards.price_source,
        placeholder_prices: placeholder,
        messages_per_iteration: result.messages.as_ref().and_then(|m| m.first().copied()),
    }
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes bids.csv, kappas.csv, trace.csv, rewards.csv, summary.json and,
/// for ring runs, transcript.hex.
pub fn write_bid_outputs(dir: &Path, result: &BidResult, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let last_y = result
        .history
        .last()
        .map_or(&result.outcome.shares, |l| &l.y);

    let mut w = writer(dir, "bids.csv")?;
    w.write_record(["building", "hour", "y", "y_f"])?;
    for (b, (y, yf)) in last_y.iter().zip(&result.outcome.shares).enumerate() {
        for k in 0..y.len() {
            w.write_record([b.to_string(), k.to_string(), fmt17(y[k]), fmt17(yf[k])])?;
        }
    }
    w.flush()?;

    let mut w = writer(dir, "kappas.csv")?;
    w.write_record(["building", "hour", "input", "kappa"])?;
    for (b, (kappa, policy)) in result
        .outcome
        .kappas
        .iter()
        .zip(&result.outcome.policies)
        .enumerate()
    {
        let nh = policy.k.ncols();
        let m = kappa.len() / nh.max(1);
        for (r, v) in kappa.iter().enumerate() {
            w.write_record([
                b.to_string(),
                (r / m).to_string(),
                (r % m).to_string(),
                fmt17(*v),
            ])?;
        }
    }
    w.flush()?;

    let mut w = writer(dir, "trace.csv")?;
    let mut header = vec![
        "iter".to_string(),
        "primal_residual".into(),
        "dual_residual".into(),
        "lambda_spread".into(),
        "Y".into(),
        "J".into(),
        "J_F".into(),
    ];
    header.extend((0..result.outcome.shares.len()).map(|b| format!("residual_{b}")));
    w.write_record(&header)?;
    for it in &result.history {
        let mut row = vec![
            it.iter.to_string(),
            fmt17(it.primal_residual),
            fmt17(it.dual_residual),
            fmt17(it.multiplier_spread()),
            fmt17(it.big_y[0]),
            fmt17(it.objective),
            it.feasible_objective.map_or(String::new(), fmt17),
        ];
        row.extend(it.building_residuals.iter().map(|r| fmt17(*r)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = writer(dir, "rewards.csv")?;
    let mix = format!("r_mix({})", result.rewards.alpha);
    w.write_record(["building", "r", "r_lambda", mix.as_str()])?;
    let r = &result.rewards;
    for b in 0..r.proportional.len() {
        w.write_record([
            b.to_string(),
            fmt17(r.proportional[b]),
            fmt17(r.lagrangian[b]),
            fmt17(r.mixed[b]),
        ])?;
    }
    w.flush()?;

    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(summary)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    if let Some(t) = &result.transcript {
        std::fs::write(dir.join("transcript.hex"), t)?;
    }
    Ok(())
}

/// One point of a price sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub price_scale: f64,
    pub level_f: f64,
    pub j_f: f64,
}

/// Whether the bid level never drops as the price grows, allowing for the
/// given absolute slack.
pub fn is_monotone(rows: &[SweepRow], slack: f64) -> bool {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.price_scale.total_cmp(&b.price_scale));
    sorted
        .windows(2)
        .all(|w| w[1].level_f >= w[0].level_f - slack)
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut w = writer(dir, "sweep.csv")?;
    w.write_record(["price_scale", "level_f", "J_F"])?;
    for r in rows {
        w.write_record([fmt17(r.price_scale), fmt17(r.level_f), fmt17(r.j_f)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt17(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt17(-3.0), "-3.0000000000000000e0");
    }

    #[test]
    fn monotonicity() {
        let row = |s, l| SweepRow {
            price_scale: s,
            level_f: l,
            j_f: 0.0,
        };
        assert!(is_monotone(&[row(1.0, 2.0), row(0.0, 0.0)], 0.0));
        assert!(!is_monotone(&[row(0.0, 1.0), row(1.0, 0.5)], 1e-9));
    }
}
