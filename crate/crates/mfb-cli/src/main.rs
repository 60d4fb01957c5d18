//! `mfb` - mean-field simulation and intrinsic-derivative estimation.
//!
//! ```text
//! mfb <subcommand> --config <path> [--seed <u64>] [--out <dir>]
//! ```
//!
//! Subcommands: `validate`, `simulate`, `bismut`, `fd-check`,
//! `girsanov-check`, `scaling-probe`, `varcheck`, `all`. Artifacts are CSV
//! files under the output directory; a non-empty `failures.csv` and a
//! non-zero exit status signal failed in-run assertions. `MFB_THREADS`
//! caps the worker count (speed only, never results).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfb_core::config::RunConfig;
use mfb_core::csvout::{csv_document, row, Artifact};
use mfb_core::experiments::{self, Outcome};

#[derive(Parser)]
#[command(name = "mfb", about = "Mean-field particle simulation and derivative estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions and report every inequality.
    Validate(RunArgs),
    /// Simulate the interacting system; write final positions (and the
    /// flow, when `output.flow` is set).
    Simulate(RunArgs),
    /// Estimate the intrinsic derivative (two-term representation).
    Bismut(RunArgs),
    /// Compare the estimator against the finite-difference oracle.
    FdCheck(RunArgs),
    /// Reweighting diagnostics: mean-one check and deviation order.
    GirsanovCheck(RunArgs),
    /// Kernel-gradient scaling probe over small times.
    ScalingProbe(RunArgs),
    /// Difference-quotient convergence to the variation field.
    Varcheck(RunArgs),
    /// The full sweep of every applicable command.
    All(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_threads() {
    if let Ok(v) = std::env::var("MFB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(args: &RunArgs, lenient: bool) -> Result<RunConfig, mfb_core::Error> {
    let mut cfg = if lenient {
        RunConfig::parse_file_lenient(&args.config)?
    } else {
        RunConfig::parse_file(&args.config)?
    };
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.display().to_string();
    }
    Ok(cfg)
}

fn write_outcome(cfg: &RunConfig, outcome: &Outcome) -> std::io::Result<()> {
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir)?;
    for Artifact { name, contents } in &outcome.artifacts {
        std::fs::write(dir.join(name), contents)?;
    }
    if !outcome.failures.is_empty() {
        let rows = outcome
            .failures
            .iter()
            .map(|f| row(&[f.check.clone(), f.detail.replace(',', ";").replace('\n', " ")]));
        let doc = csv_document(&cfg.digest(), "check,detail", rows);
        std::fs::write(dir.join("failures.csv"), doc)?;
    }
    Ok(())
}

fn run() -> Result<ExitCode, mfb_core::Error> {
    init_threads();
    let cli = Cli::parse();
    let (args, lenient) = match &cli.command {
        Command::Validate(a) => (a, true),
        Command::Simulate(a)
        | Command::Bismut(a)
        | Command::FdCheck(a)
        | Command::GirsanovCheck(a)
        | Command::ScalingProbe(a)
        | Command::Varcheck(a)
        | Command::All(a) => (a, false),
    };
    let cfg = load_config(args, lenient)?;
    println!("config digest: {}", cfg.digest());

    let outcome = match &cli.command {
        Command::Validate(_) => experiments::cmd_validate(&cfg),
        Command::Simulate(_) => experiments::cmd_simulate(&cfg)?,
        Command::Bismut(_) => experiments::cmd_bismut(&cfg)?,
        Command::FdCheck(_) => experiments::cmd_fd_check(&cfg)?,
        Command::GirsanovCheck(_) => experiments::cmd_girsanov_check(&cfg)?,
        Command::ScalingProbe(_) => experiments::cmd_scaling_probe(&cfg)?,
        Command::Varcheck(_) => experiments::cmd_varcheck(&cfg)?,
        Command::All(_) => experiments::cmd_all(&cfg)?,
    };

    for line in &outcome.summary {
        println!("{line}");
    }
    write_outcome(&cfg, &outcome)?;
    if outcome.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!("FAILED {}: {}", f.check, f.detail);
        }
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
