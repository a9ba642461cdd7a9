//! Config-driven runs, their on-disk artifacts and process exit codes.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, ModelSpec, Task};
pub use run::{default_data_dir, planned_param_count, run_experiment, run_file, RunSummary, DATA_DIR_ENV};

use crate::error::Error;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    /// Unparseable or inconsistent config, bad arguments, corrupt artifacts.
    pub const PARSE: i32 = 1;
    /// Referenced input files or run directories do not exist or are malformed.
    pub const MISSING_DATA: i32 = 2;
    /// Training produced a non-finite loss or gradient.
    pub const NAN_ABORT: i32 = 3;
    /// A gradient check exceeded its tolerance.
    pub const CHECK_FAILED: i32 = 4;
    /// Anything else: I/O failures, internal invariant violations.
    pub const INTERNAL: i32 = 5;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) | Error::Snapshot(_) => exit::PARSE,
        Error::MissingData(_) | Error::Idx { .. } => exit::MISSING_DATA,
        Error::NanAbort { .. } | Error::NonFinite { .. } => exit::NAN_ABORT,
        Error::ShapeMismatch { .. }
        | Error::NonScalarRoot(_)
        | Error::WrongMode { .. }
        | Error::NotPsd(_)
        | Error::Singular
        | Error::FrozenModified(_)
        | Error::Io(_) => exit::INTERNAL,
    }
}
