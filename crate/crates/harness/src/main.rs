use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use mohqa_core::config::ExperimentConfig;
use mohqa_harness::{oracle_report, plotdata, run_experiment, ExperimentSpec, HarnessError};

/// DQN and MOHQA experiments on the CT-graph benchmark.
#[derive(Parser)]
#[command(name = "mohqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (agent, seed) pair from a config and write CSV logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the random-policy success probability of the config's graph.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Monte-Carlo cross-check episodes; 0 skips it.
        #[arg(long, default_value_t = 0)]
        mc_episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge the aggregate CSVs of a run directory into one long table.
    Plotdata {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| mohqa_core::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_toml_str(&text)?)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out, jobs } => {
            let spec = ExperimentSpec::load(&config, out)?;
            let output = run_experiment(&spec, jobs)?;
            info!("wrote {} per-seed files", output.per_seed.len());
            for p in output.per_seed.iter().chain(&output.aggregates) {
                println!("{}", p.display());
            }
        }
        Command::Oracle { config, mc_episodes, seed } => {
            let cfg = load_config(&config)?;
            print!("{}", oracle_report(&cfg.env, mc_episodes, seed)?);
        }
        Command::Plotdata { input, out } => {
            let rows = plotdata(&input, &out)?;
            println!("{} rows -> {}", rows, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOHQA_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
