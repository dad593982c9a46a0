use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dynres::experiment::{self, RunConfig};
use dynres::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dynres",
    version,
    about = "Photon state transfer through a mirror-driven dynamic resonance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-field trajectories (populations, mirror phase space)
    Simulate(Common),
    /// Fixed- and moving-target fidelities along a trajectory
    Fidelity(Common),
    /// Peak fidelity over a parameter grid
    Sweep(Common),
    /// log10 of the high-amplitude metric over (|alpha|, r)
    HalMap(Common),
    /// Exact three-mode propagation against the mean-field model
    Oracle(Common),
    /// Regime report for the configured parameters
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(experiment::PRESETS))]
    preset: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and block propagation
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(path), None) => match RunConfig::from_path(path) {
                Err(Error::Io(e)) => Err(Error::Config(format!(
                    "cannot read {}: {e}",
                    path.display()
                ))),
                other => other,
            },
            (None, Some(name)) => experiment::preset(name),
            _ => Err(Error::Config(
                "pass exactly one of --config or --preset".into(),
            )),
        }
    }
}

type CommandFn = fn(&RunConfig, Option<&std::path::Path>) -> Result<Vec<PathBuf>>;

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let (common, cmd): (&Common, CommandFn) = match &cli.command {
        Command::Simulate(c) => (c, experiment::cmd_simulate),
        Command::Fidelity(c) => (c, experiment::cmd_fidelity),
        Command::Sweep(c) => (c, experiment::cmd_sweep),
        Command::HalMap(c) => (c, experiment::cmd_hal_map),
        Command::Oracle(c) => (c, experiment::cmd_oracle),
        Command::Check(c) => (c, experiment::cmd_check),
    };
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = common.load()?;
    cmd(&cfg, common.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
