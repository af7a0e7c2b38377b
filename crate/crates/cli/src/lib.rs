//! The `snic` command: training, coding, evaluation and segmentation.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad input or usage, 3 model or
//! checkpoint problem, 4 bitstream integrity failure.

pub mod args;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches};
use snic_core::SnicError;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

/// Exit code of an error.
pub fn exit_code(e: &SnicError) -> i32 {
    match e {
        SnicError::Input(_) => EXIT_INPUT,
        SnicError::Model(_) => EXIT_MODEL,
        SnicError::Integrity(_) => EXIT_INTEGRITY,
        SnicError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_INPUT,
        SnicError::Io(_) | SnicError::Other(_) => EXIT_OTHER,
    }
}

/// The full command tree; every subcommand lets a later flag override an earlier one,
/// which is how explicit flags take precedence over config-file values.
pub fn command() -> clap::Command {
    Cli::command().mut_subcommands(|s| s.args_override_self(true))
}

fn parse(args: &[OsString]) -> Result<Cli, clap::Error> {
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Splices the flags of a `--config` file in front of the explicit ones.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, SnicError> {
    let Some(path) = config::find_config(&args) else { return Ok(args) };
    let Some(name) = args.get(1).map(|a| a.to_string_lossy().into_owned()) else { return Ok(args) };
    let cmd = command();
    let Some(sub) = cmd.find_subcommand(&name) else { return Ok(args) };
    let extra = config::config_args(&PathBuf::from(path), sub)?;
    let mut merged = args[..2].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&args[2..]);
    Ok(merged)
}

/// Runs the command line `args` (including the program name); returns the exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString>>) -> i32 {
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match parse(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let name = cli.command.name();
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {name}: {e}");
            exit_code(&e)
        }
    }
}
