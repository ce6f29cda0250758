//! Pipeline orchestration: configuration, stages and the synthetic run.

pub mod config;
pub mod e2e;
pub mod stages;
pub mod synth;

pub use config::PipelineConfig;
pub use stages::{run, Stage};
