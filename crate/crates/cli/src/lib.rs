//! Orchestration of the evaluation pipeline: configuration, stages and run directories.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{Overrides, Run, Stage};
