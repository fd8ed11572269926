use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zeno_cli::config::RunConfig;
use zeno_cli::figures::{run_figure, FigureId};
use zeno_cli::oracle_cmd::{run_oracle, OracleBackend};
use zeno_cli::runner::{run_sweep, worker_count, WORKERS_ENV};
use zeno_cli::{EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};

#[derive(Parser)]
#[command(name = "zeno", version, about = "Qubit Zeno dynamics in a structured bath via thermofield MPS-TDVP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run { config: PathBuf },
    /// Parse and validate a config file, print its hash and sweep size.
    Validate { config: PathBuf },
    /// Emit the sweep and long-format CSV for one figure.
    Figure {
        id: FigureId,
        #[arg(short, long, default_value = "figures")]
        output: PathBuf,
        /// Small chain and short time span; same parameter grid.
        #[arg(long)]
        quick: bool,
        /// Write the configs and grid description without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the sweep on the reference backends.
    Oracle {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        backend: OracleBackend,
    },
}

fn load(path: &std::path::Path) -> Result<RunConfig, u8> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("config error: {e}");
        EXIT_CONFIG as u8
    })
}

fn status(failed: bool) -> ExitCode {
    ExitCode::from(if failed { EXIT_RUNTIME } else { EXIT_OK } as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let workers = worker_count();
    log::debug!("{WORKERS_ENV} resolves to {workers} workers");
    let result = match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                println!("ok {} points {}", c.hash(), c.sweep().len());
                return ExitCode::SUCCESS;
            }
            Err(code) => return ExitCode::from(code),
        },
        Command::Run { config } => match load(&config) {
            Ok(c) => run_sweep(&c, workers).map(|o| {
                let failed = o.iter().filter(|p| p.error.is_some()).count();
                println!("{} points, {failed} failed, summary {}", o.len(), c.output_dir.join("summary.csv").display());
                failed > 0
            }),
            Err(code) => return ExitCode::from(code),
        },
        Command::Oracle { config, backend } => match load(&config) {
            Ok(c) => run_oracle(&c, backend, workers).map(|all| {
                let failed: usize = all.iter().map(|(_, o)| o.iter().filter(|p| p.error.is_some()).count()).sum();
                println!("oracle done, {failed} failed points");
                failed > 0
            }),
            Err(code) => return ExitCode::from(code),
        },
        Command::Figure { id, output, quick, dry_run } => run_figure(id, &output, quick, dry_run, workers).map(|(path, failed)| {
            println!("{}", path.display());
            failed
        }),
    };
    match result {
        Ok(failed) => status(failed),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME as u8)
        }
    }
}
