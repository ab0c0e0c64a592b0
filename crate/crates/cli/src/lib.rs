//! Command-line harness: episode and frame I/O, run configuration and the
//! `render`, `recover`, `roundtrip`, `fuse-train`, `event-target` and `synth`
//! subcommands.

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;

/// Bad invocation, configuration or missing input. Exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A round-trip acceptance bound was violated. Exit status 3.
#[derive(Debug, Error)]
#[error("acceptance bounds violated: {}", .0.join("; "))]
pub struct AcceptanceFailure(pub Vec<String>);

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.is::<UsageError>() {
        EXIT_USAGE
    } else if err.is::<AcceptanceFailure>() {
        EXIT_ACCEPTANCE
    } else {
        EXIT_INTERNAL
    }
}

/// Reads `KVAF_THREADS`; `None` when unset.
pub fn threads_from_env(value: Option<&str>) -> Result<Option<usize>, UsageError> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(UsageError(format!("KVAF_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}
