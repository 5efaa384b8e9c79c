//! Scenario files: where the fleet comes from, prices, and how to negotiate.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use reserve_core::admm::AdmmConfig;
use reserve_core::model::{
    capacity_only_building, generate_fleet, validate_model, BuildingModel, FleetSpec,
    DEFAULT_RESERVE_PRICE,
};
use reserve_core::outcomes::DEFAULT_ALPHA;

/// Version written to and expected in every scenario file.
pub const SCHEMA_VERSION: u32 = 1;

/// Exactly one way of obtaining the fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FleetSource {
    /// Synthesize a fleet from prototypes.
    Generator(FleetSpec),
    /// Building model files, relative to the scenario file.
    ModelFiles(Vec<PathBuf>),
    /// Dynamic-free buildings, one hourly capacity vector each.
    CapacityOnly(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every building bids alone.
    Individual,
    /// Negotiation through a coordinator.
    Central,
    /// Negotiation over a ring without a coordinator.
    Decentral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub fleet: FleetSource,
    #[serde(rename = "N")]
    pub horizon: usize,
    /// Reserve price per hour. Defaults to a flat placeholder.
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Smallest bid the market accepts; only reported.
    #[serde(default)]
    pub y_min: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_mode() -> Mode {
    Mode::Central
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A scenario with its fleet loaded and prices settled.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub fleet: Vec<BuildingModel>,
    pub p: Vec<f64>,
    /// Whether any price came from the built-in placeholders.
    pub placeholder_prices: bool,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read scenario {}", path.display()))?;
        let s: Scenario = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse scenario {}", path.display()))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {}, expected {SCHEMA_VERSION}",
            self.schema_version
        );
        ensure!(self.horizon >= 1, "N must be at least 1");
        ensure!(
            (0.0..=1.0).contains(&self.alpha),
            "alpha = {} lies outside [0, 1]",
            self.alpha
        );
        ensure!(
            self.y_min >= 0.0 && self.y_min.is_finite(),
            "y_min must be a finite nonnegative number"
        );
        if let Some(p) = &self.p {
            ensure!(
                p.len() == self.horizon,
                "p has {} entries, N is {}",
                p.len(),
                self.horizon
            );
            ensure!(p.iter().all(|v| v.is_finite()), "p must be finite");
        }
        self.admm.validate()?;
        Ok(())
    }

    /// Loads the fleet. Relative model paths are taken from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved> {
        self.validate()?;
        let mut placeholder = self.p.is_none();
        let (fleet, spec_p) = match &self.fleet {
            FleetSource::Generator(spec) => {
                ensure!(
                    spec.horizon == self.horizon,
                    "generator horizon {} differs from N = {}",
                    spec.horizon,
                    self.horizon
                );
                if spec.p.is_some() && self.p.is_some() {
                    bail!("reserve prices given both in the generator and in the scenario");
                }
                placeholder = (self.p.is_none() && spec.p.is_none()) || spec.c_tilde.is_none();
                let p = spec.p.clone();
                (generate_fleet(spec)?, p)
            }
            FleetSource::ModelFiles(paths) => {
                let fleet = paths
                    .iter()
                    .enumerate()
                    .map(|(i, rel)| {
                        let path = base_dir.join(rel);
                        let mut b = BuildingModel::from_json_file(&path)
                            .with_context(|| format!("cannot load model {}", path.display()))?;
                        b.id = i;
                        Ok(b)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (fleet, None)
            }
            FleetSource::CapacityOnly(caps) => {
                let fleet = caps
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Ok(capacity_only_building(i, c)?))
                    .collect::<Result<Vec<_>>>()?;
                (fleet, None)
            }
        };
        for b in &fleet {
            ensure!(
                b.horizon == self.horizon,
                "building {} has horizon {}, scenario N is {}",
                b.id,
                b.horizon,
                self.horizon
            );
            let findings = validate_model(b);
            if !findings.is_empty() {
                let text: Vec<String> = findings.iter().map(ToString::to_string).collect();
                bail!("building {} is invalid: {}", b.id, text.join("; "));
            }
        }
        let p = self
            .p
            .clone()
            .or(spec_p)
            .unwrap_or_else(|| vec![DEFAULT_RESERVE_PRICE; self.horizon]);
        Ok(Resolved {
            fleet,
            p,
            placeholder_prices: placeholder,
        })
    }
}
