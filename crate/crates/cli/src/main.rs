use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use oscidamp_cli::{run_from_path, Experiment};

/// Time-optimal damping of linear oscillators: experiments and checks.
#[derive(Debug, Parser)]
#[command(name = "oscidamp", version)]
struct Args {
    experiment: Experiment,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `parameters.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = run_from_path(args.experiment, &args.config, args.seed, args.out)
        .and_then(|manifest| manifest.outcome().map(|()| manifest));
    match result {
        Ok(manifest) => {
            println!("{}: {} artifacts written", manifest.experiment.name(), manifest.artifacts.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("oscidamp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
