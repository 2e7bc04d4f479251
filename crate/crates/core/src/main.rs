use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nishilab::config::{EngineKind, ExperimentConfig};
use nishilab::study::{self, Command, Overrides};

/// Gauge-identity checks and finite-size studies for mixed p-spin glasses.
#[derive(Parser)]
#[command(name = "nishilab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every study configured in the file.
    Run(Common),
    /// Size series of magnetization and overlap variances.
    Scaling(Common),
    /// Order-parameter proxies over a (beta, mu_2) grid.
    PhaseProxy(Common),
    /// Run the configured checks only.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replaces `compute.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Thread count; results do not depend on it.
    #[arg(long, env = "NISHILAB_WORKERS")]
    workers: Option<usize>,
    /// Replaces `compute.engine`.
    #[arg(long, value_enum)]
    engine: Option<EngineKind>,
    /// Replaces `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Scaling(a) => (Command::Scaling, a),
        Cmd::PhaseProxy(a) => (Command::PhaseProxy, a),
        Cmd::Verify(a) => (Command::Verify, a),
    };
    let config = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        seed: args.seed,
        engine: args.engine,
        out: args.out,
        workers: args.workers,
    };
    match study::execute(command, &config, &overrides) {
        Ok(outcome) => {
            print!("{}", outcome.table);
            println!(
                "{} failed, {} inconclusive; artifacts in {}",
                outcome.failed,
                outcome.inconclusive,
                outcome.directory.display()
            );
            if outcome.failed > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
