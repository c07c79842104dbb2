use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use homog::config::{Experiment, ExperimentConfig};
use homog::io::stale_artifacts;
use homog::pipeline::{self, Stage};
use homog::Result;

#[derive(Parser)]
#[command(name = "homog", version, about = "Homogenization of heat conduction with vanishing heat capacity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a config; report regime, C0 and stale artifacts.
    Validate(Common),
    /// Solve the cell problems of the configured regime.
    Cell(Common),
    /// Assemble the effective tensor.
    Effective(Common),
    /// Solve the homogenized problem.
    Homogenize(Common),
    /// Run the fine-scale simulations for every configured epsilon.
    Finescale(Common),
    /// Full comparison of fine-scale runs against the homogenized limits.
    Harness(Common),
    /// Run the full pipeline for several configs in parallel.
    Sweep(Common),
    /// Every stage for one config.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (repeatable for `sweep`).
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Tolerance override, e.g. `tol_cell=1e-12` (repeatable).
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    tol_override: Vec<String>,
}

fn load(c: &Common, path: &Path) -> Result<(Experiment, PathBuf)> {
    let (mut cfg, base) = ExperimentConfig::load(path)?;
    cfg.apply_overrides(&c.tol_override)?;
    let exp = cfg.validate(&base)?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((exp, out))
}

fn execute(cli: Cli) -> Result<()> {
    let (common, stage) = match &cli.command {
        Command::Validate(c) => (c, None),
        Command::Cell(c) => (c, Some(Stage::Cell)),
        Command::Effective(c) => (c, Some(Stage::Effective)),
        Command::Homogenize(c) => (c, Some(Stage::Homogenize)),
        Command::Finescale(c) => (c, Some(Stage::FineScale)),
        Command::Harness(c) => (c, Some(Stage::Harness)),
        Command::Sweep(c) | Command::All(c) => (c, Some(Stage::All)),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| homog::HomogError::config(format!("thread pool: {e}")))?;
    }
    let sweep = matches!(cli.command, Command::Sweep(_));
    if !sweep && common.config.len() > 1 {
        return Err(homog::HomogError::config("only `sweep` accepts several configs"));
    }
    // Validate everything before any artifact is written.
    let loaded = common
        .config
        .iter()
        .map(|p| load(common, p))
        .collect::<Result<Vec<_>>>()?;
    let Some(stage) = stage else {
        for (exp, out) in &loaded {
            println!(
                "{}: valid, regime {} (q={}, r={}), C0 = {}, config-sha256 {}",
                exp.config.id,
                exp.regime(),
                exp.config.exponents.q,
                exp.config.exponents.r,
                exp.coercivity.c0,
                exp.hash
            );
            for p in stale_artifacts(&out.join(&exp.config.id), &exp.hash)? {
                println!("  stale: {}", p.display());
            }
        }
        return Ok(());
    };
    use rayon::prelude::*;
    let results: Vec<Result<Vec<PathBuf>>> = loaded
        .par_iter()
        .map(|(exp, out)| pipeline::run(exp, out, stage))
        .collect();
    for r in results {
        for p in r? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOMOG_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!("\n  caused by: {s}"));
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
