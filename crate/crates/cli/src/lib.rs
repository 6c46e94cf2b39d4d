//! Command implementations behind the `favs` binary.
//!
//! Every command returns the list of files it wrote. Failures carry a stable
//! exit code: 1 for validation problems, 2 for I/O.

pub mod commands;
pub mod output;

use std::path::PathBuf;

pub use commands::{
    cmd_decompose, cmd_gen_fixture, cmd_init_params, cmd_route_stats, cmd_run, DecomposeArgs, GenFixtureArgs,
    InitParamsArgs, RouteStatsArgs, RunArgs,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn core(context: impl std::fmt::Display, err: favs_core::Error) -> Self {
        match err {
            favs_core::Error::Io(source) => CliError::io(context.to_string(), source),
            other => CliError::Validation(format!("{context}: {other}")),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

impl CommandResult {
    pub(crate) fn ok(artifacts: Vec<PathBuf>) -> Self {
        Self {
            exit_code: EXIT_OK,
            artifacts,
        }
    }
}
