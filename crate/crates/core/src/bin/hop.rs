use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hop_rl::envs::{make_env, shortest_solution, LevelSpec};
use hop_rl::harness::{aggregate, export_metrics, import_metrics, ExportFormat, Run, RunConfig};
use hop_rl::Result;

#[derive(Parser)]
#[command(name = "hop", about = "Train and compare HOP, PPO and PNN on MiniProc phase sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from scratch.
    Train {
        /// JSON run configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many rollouts, as if interrupted.
        #[arg(long, hide = true)]
        max_rollouts: Option<usize>,
    },
    /// Continue an interrupted run from its last snapshot.
    Resume {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, hide = true)]
        max_rollouts: Option<usize>,
    },
    /// Cross-seed summary of finished runs, grouped by algorithm.
    Aggregate {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Write the report here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-export a run's metrics.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Print a level and its shortest solution.
    #[command(hide = true)]
    DumpLevel { family: String, seed: u64 },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed, out, max_rollouts } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Run::new(cfg, Some(out))?.run(max_rollouts)
        }
        Command::Resume { out, max_rollouts } => Run::resume(&out)?.run(max_rollouts),
        Command::Aggregate { runs, out } => {
            let dirs: Vec<&std::path::Path> = runs.iter().map(PathBuf::as_path).collect();
            let report = serde_json::to_string_pretty(&aggregate(&dirs)?)?;
            match out {
                Some(path) => std::fs::write(&path, report).map_err(|e| hop_rl::Error::Io { path, source: e }),
                None => {
                    println!("{report}");
                    Ok(())
                }
            }
        }
        Command::Export { out, format } => {
            let config = RunConfig::load(&out.join("config.json"))?;
            let report = import_metrics(&out.join("metrics.csv"))?;
            export_metrics(&report, &config, &out, format.parse::<ExportFormat>()?)
        }
        Command::DumpLevel { family, seed } => {
            let env = make_env(LevelSpec::parse(&family, seed)?, 200)?;
            println!("{}", env.render());
            println!("solution: {:?}", shortest_solution(env.level()));
            Ok(())
        }
    }
}
