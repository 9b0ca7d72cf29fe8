//! IO, configuration, and experiment orchestration around
//! `complearn-core`: CSV formats for datasets, training histories,
//! compensation states and audit artifacts, a TOML experiment schema, and
//! the seeded multi-method runner behind the `complearn` CLI.

pub mod config;
pub mod error;
pub mod io;
pub mod runner;

pub use error::HarnessError;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "COMPLEARN_OUT_DIR";
