//! Experiment orchestration for heatlab: configs, the stage runner,
//! artifact files with provenance, and plot data.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod plots;

pub use artifacts::Summary;
pub use config::ExperimentConfig;
pub use pipeline::Experiment;
