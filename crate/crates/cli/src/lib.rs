//! Scenario-driven front end to `darktrap-core`: controller design, closed-loop
//! simulation, trace analysis and the controller-comparison reproductions.

pub mod checks;
pub mod cli;
pub mod commands;
pub mod error;
pub mod report;
pub mod run;
pub mod scenario;
pub mod svg;
pub mod trace;

pub use error::CliError;
