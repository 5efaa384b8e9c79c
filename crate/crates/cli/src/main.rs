use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use reserve_cli::commands::{self, Overrides};
use reserve_cli::run::exit_code;
use reserve_cli::scenario::Mode;

/// Joint frequency-reserve bids for groups of buildings.
#[derive(Debug, Parser)]
#[command(name = "reserve-admm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one model file per generated building plus a manifest.
    Generate {
        /// Fleet spec, or a scenario with a generated fleet.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Negotiate a bid and write bids, trace, rewards and a summary.
    Bid {
        #[command(flatten)]
        common: Common,
    },
    /// Re-solve for a list of price multipliers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated price multipliers, e.g. 0,0.5,1.
        #[arg(long)]
        grid: String,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Number of negotiation iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Weight of the proportional reward in the mixed reward.
    #[arg(long)]
    alpha: Option<f64>,
    /// Seed for generated fleets.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            mode: self.mode,
            iters: self.iters,
            rho: self.rho,
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RESERVE_ADMM_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("RESERVE_ADMM_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate {
            scenario,
            out,
            seed,
        } => {
            let m = commands::generate(&scenario, &out, seed)?;
            println!(
                "wrote {} models and manifest.json to {}",
                m.files.len(),
                out.display()
            );
        }
        Command::Bid { common } => {
            let (_, summary) = commands::bid(&common.scenario, &common.overrides())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { common, grid } => {
            let grid = commands::parse_grid(&grid)?;
            let (rows, monotone) = commands::sweep(&common.scenario, &grid, &common.overrides())?;
            for r in &rows {
                println!("{} {} {}", r.price_scale, r.level_f, r.j_f);
            }
            if !monotone {
                eprintln!("warning: the bid level decreases somewhere along the price grid");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
