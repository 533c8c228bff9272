//! Command-line entry point.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;
use tandem_cli::{compare::cli_compare, verify::cli_verify, cli_train};

#[derive(Parser)]
#[command(
    name = "tandem",
    about = "Seeded training, verification suites, and paired-run comparisons \
             for a two-phase reasoning/generation policy laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded training experiment from a TOML config.
    Train {
        /// Path to the run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path overrides, e.g. --set hyper.steps=50 --set seed=3.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a verification suite and write its CSV report.
    Verify {
        /// One of: theorem1, snr, truncated, mills, stability, all.
        #[arg(long)]
        suite: String,
        /// Report path (CSV also prints to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed for the Monte Carlo experiments.
        #[arg(long, default_value_t = 20_260_810)]
        seed: u64,
        /// Append a synthetic failing row (harness self-test).
        #[arg(long, hide = true)]
        inject_failure: bool,
    },
    /// Run two configs sharing world and seed; report completed-trajectory
    /// counts to a target reward level.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Target mean total reward (trailing 20-step window).
        #[arg(long)]
        target: f64,
        /// Convergence CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ProcessExit {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version "errors" exit 0; real usage errors exit 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ProcessExit::from(code);
        }
    };
    let code = match cli.command {
        Command::Train { config, set } => cli_train(&config, &set),
        Command::Verify { suite, out, seed, inject_failure } => {
            cli_verify(&suite, out.as_deref(), seed, inject_failure)
        }
        Command::Compare { a, b, target, out } => cli_compare(&a, &b, target, out.as_deref()),
    };
    ProcessExit::from(code as u8)
}
