//! Command-line orchestration of the claim aggregation pipeline.

pub mod cli;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod seeds;
pub mod synth;

use thiserror::Error;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use pipeline::{replay, run_pipeline};
pub use seeds::{stage_seed, StageSeeds};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("stage {stage} failed: endpoint unavailable: {message}")]
    Endpoint { stage: String, message: String },
}

impl CliError {
    pub fn stage(stage: &str, message: impl ToString) -> Self {
        Self::Stage {
            stage: stage.to_owned(),
            message: message.to_string(),
        }
    }

    pub fn endpoint(stage: &str, message: impl ToString) -> Self {
        Self::Endpoint {
            stage: stage.to_owned(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } => 3,
            Self::Endpoint { .. } => 4,
        }
    }

    pub fn stage_name(&self) -> Option<&str> {
        match self {
            Self::Config(_) => None,
            Self::Stage { stage, .. } | Self::Endpoint { stage, .. } => Some(stage),
        }
    }
}
