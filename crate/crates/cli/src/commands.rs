//! The three verbs: generate, bid and sweep.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use reserve_core::model::{generate_fleet, FleetSpec};

use crate::report::{is_monotone, summarize, write_bid_outputs, write_sweep, Summary, SweepRow};
use crate::run::{run_bid, BidResult};
use crate::scenario::{FleetSource, Mode, Scenario, SCHEMA_VERSION};

/// Command-line overrides of scenario fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub iters: Option<usize>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        if let Some(o) = &self.out {
            s.output_dir = o.clone();
        }
        if let Some(m) = self.mode {
            s.mode = m;
        }
        if let Some(i) = self.iters {
            s.admm.max_iters = i;
        }
        if let Some(r) = self.rho {
            s.admm.rho = r;
        }
        if let Some(a) = self.alpha {
            s.alpha = a;
        }
        if let Some(seed) = self.seed {
            match &mut s.fleet {
                FleetSource::Generator(spec) => spec.seed = seed,
                _ => eprintln!("warning: --seed only affects generated fleets; ignored"),
            }
        }
    }
}

/// Input of `generate`: a plain fleet spec or a scenario that generates its
/// fleet.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum GenerateInput {
    Scenario(Box<Scenario>),
    Spec(FleetSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub spec: FleetSpec,
    /// True when the generated costs use the built-in placeholder price.
    pub placeholder_prices: bool,
    pub files: Vec<PathBuf>,
}

pub fn generate(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Manifest> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read {}", spec_path.display()))?;
    let input: GenerateInput = serde_json::from_str(&text).with_context(|| {
        format!(
            "{} is neither a fleet spec nor a scenario",
            spec_path.display()
        )
    })?;
    let mut spec = match input {
        GenerateInput::Spec(s) => s,
        GenerateInput::Scenario(s) => match s.fleet {
            FleetSource::Generator(spec) => spec,
            _ => bail!("the scenario does not generate its fleet"),
        },
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let fleet = generate_fleet(&spec)?;
    if fleet.is_empty() {
        eprintln!("warning: the spec asks for no buildings; writing an empty manifest");
    }
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut files = Vec::with_capacity(fleet.len());
    for b in &fleet {
        let name = PathBuf::from(format!("building_{:03}.json", b.id));
        b.to_json_file(out.join(&name))
            .with_context(|| format!("cannot write {}", out.join(&name).display()))?;
        files.push(name);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: spec.seed,
        placeholder_prices: spec.c_tilde.is_none(),
        spec,
        files,
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(manifest)
}

fn load(scenario_path: &Path, overrides: &Overrides) -> Result<(Scenario, PathBuf)> {
    let mut s = Scenario::load(scenario_path)?;
    overrides.apply(&mut s);
    let base = scenario_path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((s, base))
}

pub fn bid(scenario_path: &Path, overrides: &Overrides) -> Result<(BidResult, Summary)> {
    let (s, base) = load(scenario_path, overrides)?;
    let resolved = s.resolve(&base)?;
    let started = std::time::Instant::now();
    let result = run_bid(&resolved, s.mode, s.admm, s.alpha)?;
    eprintln!(
        "{} buildings, {:?} mode, {} iterations in {:.1} s",
        resolved.fleet.len(),
        s.mode,
        result.history.len(),
        started.elapsed().as_secs_f64()
    );
    let summary = summarize(
        &result,
        s.admm.rho,
        s.alpha,
        s.y_min,
        resolved.placeholder_prices,
    );
    write_bid_outputs(&s.output_dir, &result, &summary)?;
    Ok((result, summary))
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("bad price scale {t:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        bail!("the price grid is empty");
    }
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        bail!("price scales must be finite and nonnegative");
    }
    Ok(grid)
}

/// Re-solves the scenario for every price scale. Returns the rows and
/// whether the bid level is non-decreasing in the price.
pub fn sweep(
    scenario_path: &Path,
    grid: &[f64],
    overrides: &Overrides,
) -> Result<(Vec<SweepRow>, bool)> {
    if grid.is_empty() {
        bail!("the price grid is empty");
    }
    let (s, base) = load(scenario_path, overrides)?;
    let resolved = s.resolve(&base)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &scale in grid {
        let mut scaled = resolved.clone();
        scaled.p = resolved.p.iter().map(|v| v * scale).collect();
        let result = run_bid(&scaled, s.mode, s.admm, s.alpha)?;
        rows.push(SweepRow {
            price_scale: scale,
            level_f: result.outcome.level,
            j_f: result.outcome.j_f,
        });
    }
    let monotone = is_monotone(&rows, 1e-6);
    write_sweep(&s.output_dir, &rows)?;
    Ok((rows, monotone))
}
