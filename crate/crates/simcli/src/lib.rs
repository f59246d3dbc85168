//! Configuration, run orchestration and artifact export for `abs-traj`.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use config::Config;
pub use error::CliError;
