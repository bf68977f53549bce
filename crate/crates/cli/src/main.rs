use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairgame_cli::{default_synthetic, load_config, run_experiment, CliError, ExperimentKind};

#[derive(Parser)]
#[command(name = "fairgame", version, about = "Bayesian learning games: valuation and fair data sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise Shapley differences of the synthetic game over an m-grid.
    Synthetic(Common),
    /// Online fair data sharing with Fisher-driven collection rates.
    Fairshare(Common),
    /// Values a fixed data allocation.
    Valuate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the number of synthetic trials.
    #[arg(long)]
    trials: Option<usize>,
}

fn execute(kind: ExperimentKind, args: Common) -> Result<Vec<PathBuf>, CliError> {
    let (mut config, base) = match (&args.config, kind) {
        (Some(path), _) => load_config(path)?,
        (None, ExperimentKind::Synthetic) => {
            let seed = args.seed.ok_or_else(|| CliError::Config("--seed is required without --config".into()))?;
            (default_synthetic(seed), PathBuf::from("."))
        }
        (None, _) => return Err(CliError::Config(format!("{} requires --config", kind.name()))),
    };
    if config.experiment != kind {
        return Err(CliError::Config(format!(
            "config describes a {} experiment, not {}",
            config.experiment.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.synthetic.trials = trials;
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    let out = config.output.clone().unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    run_experiment(config, &base, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Synthetic(a) => (ExperimentKind::Synthetic, a),
        Command::Fairshare(a) => (ExperimentKind::Fairshare, a),
        Command::Valuate(a) => (ExperimentKind::Valuate, a),
    };
    match execute(kind, args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fairgame: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
