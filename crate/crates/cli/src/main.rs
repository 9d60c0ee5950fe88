//! `trapnls` command-line front end.

// Negated comparisons are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trapnls::verify::LemmaId;

use commands::{
    cmd_evolve, cmd_ground_state, cmd_sweep, cmd_verify, field_fault_for, load_config, tamper_for,
    CliResult, Context,
};

#[derive(Debug, Parser)]
#[command(
    name = "trapnls",
    version,
    about = "Ground states, blowup runs and lemma checks for the harmonically trapped focusing NLS"
)]
struct Cli {
    /// JSON run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` from the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for randomized checks (overrides `verify.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the human-readable summary and informational logs.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the ground state and report R(phi).
    GroundState,
    /// Evolve u0 = phi^lambda and detect blowup.
    Evolve {
        #[arg(long)]
        lambda: f64,
        /// Perturb u0 before the membership check (test hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Locate the threshold frequency omega0.
    Sweep,
    /// Run the lemma suite.
    Verify {
        /// Run a single check.
        #[arg(long, value_parser = |s: &str| s.parse::<LemmaId>())]
        only: Option<LemmaId>,
        /// Corrupt reported functionals before the identity check (test hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.verify.seed = seed;
    }
    let ctx = Context::new(config, cli.output, cli.quiet)?;
    match cli.command {
        Command::GroundState => cmd_ground_state(&ctx),
        Command::Evolve {
            lambda,
            inject_fault,
        } => {
            let fault = inject_fault.as_deref().map(field_fault_for).transpose()?;
            cmd_evolve(&ctx, lambda, fault)
        }
        Command::Sweep => cmd_sweep(&ctx),
        Command::Verify { only, inject_fault } => {
            let tamper = inject_fault.as_deref().map(tamper_for).transpose()?;
            cmd_verify(&ctx, only, tamper)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let default_level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
