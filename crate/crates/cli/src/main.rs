use std::path::PathBuf;
use std::process::ExitCode;

use bayesoed_cli::config::{load_config, ExperimentKind, LoadError};
use bayesoed_cli::pipeline::{run, RunOptions};
use bayesoed_cli::CliError;
use clap::{Args, Parser, Subcommand};

/// Bayesian optimal sensor placement: twin experiments, 4DVar inversion and
/// OED solvers driven by a TOML config.
#[derive(Parser)]
#[command(name = "bayesoed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the truth trajectory and synthetic observations.
    TwinData(Common),
    /// Solve the inverse problem on twin data and compare with the closed form.
    Assimilate(Common),
    /// Solve the design problem with the configured solver.
    OedSolve(Common),
    /// Enumerate every binary design.
    BruteForce(Common),
    /// Check a config and list every problem found.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::TwinData(c) => (Some(ExperimentKind::TwinData), c),
        Command::Assimilate(c) => (Some(ExperimentKind::Assimilate), c),
        Command::OedSolve(c) => (Some(ExperimentKind::OedSolve), c),
        Command::BruteForce(c) => (Some(ExperimentKind::BruteForce), c),
        Command::Validate(c) => (None, c),
    };
    let cfg = match load_config(&common.config) {
        Ok(cfg) => cfg,
        Err(LoadError::Io(path, e)) => return fail(&CliError::Io(format!("{}: {e}", path.display()))),
        Err(LoadError::Invalid(d)) => return fail(&CliError::Validation(d)),
    };
    let Some(kind) = kind else {
        let kind = cfg.experiment.unwrap_or(ExperimentKind::TwinData);
        let diagnostics = cfg.validate(kind);
        if diagnostics.is_empty() {
            if !common.quiet {
                println!("{}: valid for {}", common.config.display(), kind.name());
            }
            return ExitCode::SUCCESS;
        }
        return fail(&CliError::Validation(diagnostics));
    };
    let opts = RunOptions {
        seed: common.seed,
        output: common.output,
        quiet: common.quiet,
    };
    match run(kind, &cfg, &opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
