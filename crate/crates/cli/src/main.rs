use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynsync_cli::commands::{cmd_batch, cmd_certify, cmd_run, parse_checks, BatchOptions, CommonOptions, EXIT_SCHEMA};
use dynsync_cli::scenario_file::Overrides;

/// Simulate and verify counter synchronization in dynamic networks.
///
/// Exit codes: 0 all checks hold, 1 a check is violated, 2 a check is
/// inconclusive, 3 invalid scenario or arguments, 4 I/O error.
#[derive(Parser)]
#[command(name = "dynsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, write its trace and summary, and verify it.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a scenario under many derived seeds and aggregate the verdicts.
    Batch {
        scenario: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Number of runs.
        #[arg(long)]
        seeds: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
        /// Largest tolerated failure fraction.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Certify the scenario's graph sequence against its connectivity class.
    Certify {
        scenario: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Protocol seed; the graph sequence is unaffected.
    #[arg(long)]
    seed: Option<u64>,
    /// Last simulated round.
    #[arg(long)]
    horizon: Option<u64>,
    /// Comma-separated check names.
    #[arg(long)]
    checks: Option<String>,
    /// Directory for output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Nodes stop updating once they detect.
    #[arg(long)]
    freeze_on_detect: bool,
    /// Estimator length for the randomized algorithm.
    #[arg(long)]
    ell: Option<usize>,
    /// Examine every interval in the path-based counter checks.
    #[arg(long)]
    full_lemma_sweep: bool,
}

impl CommonArgs {
    fn options(&self) -> Result<CommonOptions, String> {
        let checks = self
            .checks
            .as_deref()
            .map(parse_checks)
            .transpose()
            .map_err(|e| e.to_string())?;
        Ok(CommonOptions {
            overrides: Overrides {
                seed: self.seed,
                horizon: self.horizon,
                checks,
                freeze_on_detect: self.freeze_on_detect,
                ell: self.ell,
            },
            out_dir: self.out_dir.clone(),
            full_lemma_sweep: self.full_lemma_sweep,
        })
    }
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return exit(if e.use_stderr() { EXIT_SCHEMA } else { 0 });
        }
    };
    let (Command::Run { common, .. } | Command::Batch { common, .. } | Command::Certify { common, .. }) = &cli.command;
    let common = match common.options() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("invalid arguments: {e}");
            return exit(EXIT_SCHEMA);
        }
    };
    let mut stdout = io::stdout().lock();
    let outcome = match &cli.command {
        Command::Run { scenario, .. } => cmd_run(scenario, &common, &mut stdout),
        Command::Certify { scenario, .. } => cmd_certify(scenario, &common, &mut stdout),
        Command::Batch {
            scenario,
            seeds,
            parallel,
            threshold,
            ..
        } => {
            let opts = BatchOptions {
                seeds: *seeds,
                parallel: *parallel,
                threshold: *threshold,
            };
            cmd_batch(scenario, &common, &opts, &mut stdout)
        }
    };
    match outcome {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("{e}");
            exit(e.exit_code())
        }
    }
}
