//! `rclf`: run simulations, certificates and Monte-Carlo suites from a
//! scenario file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 divergence,
//! 4 certificate or suite failure.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Ctx, Status};
use rclf_core::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "rclf",
    version,
    about = "Relaxed control-Lyapunov feedback experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run; writes CSV in both coordinate systems and an SVG plot.
    Simulate(Common),
    /// Synthesizes constants and runs the grid certificates.
    Verify(Common),
    /// Monte-Carlo stability statistics (and absorbing-set entry for the relaxed law).
    Urgas(Common),
    /// Repeats the Monte-Carlo suite over the configured uncertainty magnitudes.
    Sweep(Common),
    /// Washout of the classical law and its repair by the relaxed law.
    Counterexample(Common),
    /// Saturated backstepping on the triangular benchmark.
    Backstep(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `[harness] trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Suppresses progress output.
    #[arg(long)]
    quiet: bool,
}

type Runner = fn(&Ctx) -> Result<Status, CliError>;

fn context(c: &Common) -> Result<Ctx, CliError> {
    let mut cfg = ScenarioConfig::from_path(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = c.trials {
        if trials == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        cfg.harness.trials = trials;
    }
    let out = commands::output_dir(c.out.as_deref(), &cfg);
    Ok(Ctx {
        cfg,
        out,
        quiet: c.quiet,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Runner) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Verify(c) => (c, commands::verify),
        Command::Urgas(c) => (c, commands::urgas),
        Command::Sweep(c) => (c, commands::sweep),
        Command::Counterexample(c) => (c, commands::counterexample),
        Command::Backstep(c) => (c, commands::backstep),
    };
    let code = match context(common).and_then(|ctx| run(&ctx)) {
        Ok(status) => {
            if status != Status::Ok {
                eprintln!(
                    "rclf: {}",
                    match status {
                        Status::Diverged => "trajectory diverged",
                        _ => "certificate or suite failed",
                    }
                );
            }
            status.exit_code()
        }
        Err(e) => {
            eprintln!("rclf: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
