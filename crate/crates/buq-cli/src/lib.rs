//! Library surface of the `buq` command-line tool, exposed so integration
//! tests can drive the pipeline in-process.

pub mod commands;
pub mod config;

use buq::error::Error;

/// Process exit codes: 0 success, 1 verification or analysis failure,
/// 2 usage/config error, 3 data-format error.
pub fn exit_code_of(error: &Error) -> i32 {
    match error {
        Error::Format { .. } => 3,
        Error::Config(_) | Error::KeyMismatch { .. } | Error::InputShape { .. } => 2,
        _ => 1,
    }
}
