//! Command-line front end for the radio tomography toolkit.
//!
//! Each invocation of the `rti` binary runs one pipeline (planning,
//! simulation, calibration, reconstruction, velocity tracking, evaluation,
//! rendering, or a bundled synthetic study) and lands its artifacts in a
//! fresh run directory together with a manifest: the fully resolved
//! configuration, SHA-256 digests of every input and output, the seed, and
//! the tool version. Rerunning the same command on the same inputs
//! reproduces every numeric output byte for byte.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use cli::run;
pub use error::CliError;
