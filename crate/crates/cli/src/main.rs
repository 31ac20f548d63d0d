use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phmor::config::RunConfig;
use phmor::pipeline::{error_json, exit_code, Pipeline};
use phmor::Error;

#[derive(Parser, Debug)]
#[command(name = "phmor", version, about = "Structure-preserving model reduction for port-Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `cli.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `sweep`; overrides `cli.threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Time step; overrides `timestep.step`.
    #[arg(long = "step-size", global = true)]
    step_size: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate the full-order model.
    FomRun,
    /// Fit POD bases and shifted modes from the full-order trajectory.
    Offline,
    /// Build and integrate the reduced models.
    RomRun,
    /// Diagnostics of stored trajectories.
    Diag,
    /// Reduced runs across the configured step sizes.
    Sweep,
}

fn run(cli: &Cli) -> Result<serde_json::Value, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.cli.threads = t;
    }
    if let Some(h) = cli.step_size {
        cfg.timestep.step = Some(h);
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.resolve(&cfg.cli.out));
    Pipeline::new(cfg, out)?.run_command(cli.command.name())
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::FomRun => "fom-run",
            Command::Offline => "offline",
            Command::RomRun => "rom-run",
            Command::Diag => "diag",
            Command::Sweep => "sweep",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
