//! Process-level error classification: every failure is either a validation
//! problem (bad flags, malformed or inconsistent inputs) or a numeric one
//! (a well-formed problem the solvers could not complete).

use std::fmt;

use rti_core::RtiError;

/// Exit code for validation failures.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit code for numeric failures.
pub const EXIT_NUMERIC: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Rejected before or while loading: schema violations, unknown values,
    /// missing files, dimension mismatches. Exit code 1.
    Validation(String),
    /// The computation itself failed: singular systems, divergence,
    /// degenerate models. Exit code 2.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<RtiError> for CliError {
    fn from(e: RtiError) -> CliError {
        match e {
            RtiError::AllZeroWeights
            | RtiError::SingularSystem { .. }
            | RtiError::NonPositiveDefinitePrior
            | RtiError::PgmDiverged { .. }
            | RtiError::ReducedSystemSingular { .. }
            | RtiError::NoVelocityCandidate => CliError::Numeric(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::Validation(e.to_string())
    }
}
