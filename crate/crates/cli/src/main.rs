use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egopose_cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "egopose", version, about = "Egocentric pose lifting: data, training, evaluation and export")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Per-key override, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset to --out.
    Generate,
    /// Train the configured stage on `data`.
    Train,
    /// Score a checkpoint (or the oracle) on a split.
    Eval,
    /// Train and score the branch modes and optional grids.
    Ablate,
    /// Export a clip as a motion file, BVH and rotation traces.
    Animate,
    /// Evaluate under increasing input noise.
    NoiseSweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::Generate => Command::Generate,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::Ablate => Command::Ablate,
        Cmd::Animate => Command::Animate,
        Cmd::NoiseSweep => Command::NoiseSweep,
    };
    let result = RunConfig::load(cli.config.as_deref(), &cli.set, cli.seed).and_then(|cfg| run(cmd, &cfg, &cli.out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
