//! Command-line driver: dataset preparation, training, evaluation and
//! metrics, with checkpoints and reports that echo their configuration.
//!
//! Exit codes are 0 on success, 1 on runtime failure and 2 on usage errors.
//! Failures print one JSON line `{"error": kind, "message": text}` to stderr.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod selftest;

use std::ffi::OsString;

use clap::Parser;
use serde_json::json;

use args::{Cli, RunConfig};
use impress_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub fn error_line(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Parses `argv` (program name first), validates and runs one command.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = std::env::var("IMPRESS_THREADS").ok();
    let cfg = match RunConfig::new(cli.command, threads.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            return EXIT_USAGE;
        }
    };
    match commands::run(&cfg) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.ok {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            }
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            EXIT_RUNTIME
        }
    }
}
