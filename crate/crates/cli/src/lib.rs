//! Command-line front end: one subcommand per pipeline stage, file in and
//! file out, with a `run.json` record next to every primary output.

mod args;
mod commands;
pub mod png_stack;
mod record;
pub mod render;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad flags or invalid parameter values.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for unreadable, malformed or inconsistent input data.
pub const EXIT_DATA: i32 = 2;

/// Parses `argv`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Parameter errors are usage errors; everything else is a data error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let core = err.chain().find_map(|e| e.downcast_ref::<vesicle_core::Error>());
    match core {
        Some(vesicle_core::Error::Parameter(_)) => EXIT_USAGE,
        Some(vesicle_core::Error::Block { source, .. }) if !source.is_data_error() => EXIT_USAGE,
        _ if err.chain().any(|e| e.downcast_ref::<args::UsageError>().is_some()) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}
