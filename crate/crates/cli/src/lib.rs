//! Experiment runner: JSON configs, run directories with manifests, and the
//! composite recipes for the figures and the table.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod recipes;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::RunError;
pub use experiments::run;
pub use manifest::RunManifest;
pub use recipes::{reproduce, RecipeSettings, Tag};
