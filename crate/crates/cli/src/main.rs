//! `athrl` command line: train, evaluate, compare, and replay experiment runs.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use athrl_core::harness::{self, ExperimentConfig, HarnessError, Method};
use athrl_core::worldsim::MapId;

#[derive(Parser)]
#[command(name = "athrl", about = "Hierarchical driving planner experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method across its seeds.
    Train {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured method (athrl | ddpg_flat | hddpg_2level | hdqn).
        #[arg(long)]
        method: Option<String>,
        /// Override the configured map (mini02 | mini03 | mini04).
        #[arg(long)]
        map: Option<String>,
    },
    /// Greedy evaluation of a finished run directory.
    Eval {
        /// Run directory holding manifest.toml and checkpoints/.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        map: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate metrics across finished run directories.
    Compare {
        /// Two or more run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write summary.csv and curves.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a recorded vehicle trace as observation images.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "replay_frames")]
        out: PathBuf,
        /// Render every Nth tick.
        #[arg(long, default_value_t = 10)]
        stride: u64,
    },
}

fn exit_code(e: &HarnessError) -> ExitCode {
    match e {
        HarnessError::Config(_) | HarnessError::Missing(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Train { config, seed, method, map } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(m) = method {
                config.method = Method::parse(&m)?;
            }
            if let Some(m) = map {
                config.map = MapId::parse(&m).map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            for summary in harness::run(&config)? {
                println!(
                    "seed {}: {} episodes over {} steps -> {}",
                    summary.seed,
                    summary.episodes,
                    summary.total_steps,
                    summary.dir.display()
                );
                if let Some(eval) = summary.eval {
                    println!(
                        "  eval: mean step reward {:.3}, mean speed {:.2} m/s over {} episodes",
                        eval.avg_reward, eval.avg_speed, eval.episodes
                    );
                }
            }
            Ok(())
        }
        Command::Eval { checkpoint, map, episodes, seed } => {
            let map = MapId::parse(&map).map_err(|e| HarnessError::Config(e.to_string()))?;
            let eval = harness::evaluate(&checkpoint, map, episodes, seed)?;
            println!(
                "{} episodes on {}: mean step reward {:.3}, mean speed {:.2} m/s",
                eval.episodes,
                map.name(),
                eval.avg_reward,
                eval.avg_speed
            );
            for (reason, count) in &eval.termination_counts {
                println!("  {reason}: {count}");
            }
            Ok(())
        }
        Command::Compare { runs, out } => {
            let report = harness::compare(&runs, out.as_deref())?;
            print!("{}", report.table);
            Ok(())
        }
        Command::Replay { trace, out, stride } => {
            let n = harness::replay_trace(&trace, &out, stride)?;
            println!("rendered {n} ticks into {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
