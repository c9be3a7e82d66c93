//! Library side of the `egopose` command-line tool: configuration loading
//! and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;

use std::path::Path;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Ablate,
    Animate,
    NoiseSweep,
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    match cmd {
        Command::Generate => commands::generate(cfg, out),
        Command::Train => commands::train(cfg, out).map(drop),
        Command::Eval => commands::eval(cfg, out).map(drop),
        Command::Ablate => commands::ablate(cfg, out).map(drop),
        Command::Animate => commands::animate(cfg, out).map(drop),
        Command::NoiseSweep => commands::noise_sweep(cfg, out).map(drop),
    }
}
