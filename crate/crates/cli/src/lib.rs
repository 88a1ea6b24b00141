//! Command-line front end: synthetic benchmarks, completion of stored
//! tensors, image inpainting and video completion.

pub mod args;
pub mod commands;
pub mod error;
pub mod imageio;
pub mod manifest;

use clap::Parser;

pub use args::Cli;
pub use error::{CliError, CliResult};

/// Parses arguments that exclude the program name.
pub fn parse(args: &[String]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("datc".to_string()).chain(args.iter().cloned()))
}
