//! Front end for `sepplan-core`: solve, count, verify and bench commands,
//! with the file formats they read and write.
//!
//! Exit codes follow [`ExitStatus`]: 0 for a converged and certified run,
//! 2 when the solver fails, 3 when certification fails.

pub mod bench;
pub mod count;
pub mod error;
pub mod solve;
pub mod verify;

pub use error::{CliError, Result};

/// Version tag written into every JSON report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable capping the worker threads of parallel commands.
pub const THREADS_ENV: &str = "SEPPLAN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    SolverFailure = 2,
    CertificationFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}
