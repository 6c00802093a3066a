use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use dealio::dealio::Algorithm;
use dealio_cli::commands;
use dealio_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "dealio",
    version,
    about = "Adversarial imitation from observation with linear-Gaussian controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Dealio,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Train an expert controller on the environment's own cost.
    TrainExpert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out an expert and save state-only demonstrations.
    GenDemos {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an imitator and write its learning curve and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Algo::Dealio)]
        algo: Algo,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate learning curves into mean ± std bands and draw them.
    Plot {
        /// `label=glob` or a bare glob; repeat for several series.
        #[arg(long, required = true)]
        curves: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the brute-force oracle suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainExpert { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = commands::train_expert_cmd(&cfg, &out)?;
            println!(
                "expert trained for {} iterations, final return {:.6}, saved to {}",
                s.iterations,
                s.final_return,
                out.display()
            );
        }
        Command::GenDemos {
            config,
            expert,
            count,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let demos = commands::gen_demos_cmd(&cfg, &expert, count, &out)?;
            println!("wrote {} demonstrations to {}", demos.len(), out.display());
        }
        Command::Run {
            config,
            algo,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let algo = match algo {
                Algo::Dealio => Algorithm::Dealio,
                Algo::Baseline => Algorithm::Baseline,
            };
            let result = commands::run_cmd(&cfg, algo, seed, &out)?;
            if let Some(last) = result.curve.rows.last() {
                println!(
                    "{} seed {}: {} iterations, {} transitions, final score {:.4}",
                    algo.name(),
                    seed,
                    result.curve.len(),
                    last.env_transitions,
                    last.normalized_score
                );
            }
        }
        Command::Plot { curves, out } => {
            let series = commands::plot_cmd(&curves, &out)?;
            println!("plotted {} series to {}", series.len(), out.display());
        }
        Command::Verify { suite, seed } => {
            commands::verify_cmd(&suite, seed, &mut std::io::stdout())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
