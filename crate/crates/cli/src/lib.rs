//! Batch pipeline over the `regolith-core` stages: ingest, sfm, train, render
//! and evaluate, plus the pair-strategy comparison table.
//!
//! Every stage reads its inputs from and writes its artifacts to the output
//! directory, so the stages can be run one by one or chained by
//! [`run_pipeline`].

mod compare;
mod config;
mod pipeline;

use std::fmt;

use thiserror::Error;

pub use compare::{compare_strategies, emit_comparison, Comparison, ComparisonRow, Variant};
pub use config::{PipelineConfig, StrategyKind, DEFAULT_HOLDOUT_EVERY, DEFAULT_SEED, DEFAULT_WINDOW};
pub use pipeline::{
    evaluate_stage, ingest_stage, load_dataset, load_renders, load_sfm, load_splats, render_stage, run_pipeline,
    sfm_stage, split_views, train_stage, write_fixture, Layout, RunSummary, SfmOutcome, SplatCheckpoint, StageTimer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Sfm,
    Train,
    Render,
    Evaluate,
    Compare,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Sfm => "sfm",
            Stage::Train => "train",
            Stage::Render => "render",
            Stage::Evaluate => "evaluate",
            Stage::Compare => "compare",
        })
    }
}

/// A failure tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("[{stage}] {source:#}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<anyhow::Error>) -> Self {
        Self { stage, source: source.into() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(Stage::Config, anyhow::anyhow!("{message}"))
    }
}

/// Tags the error of a fallible stage step.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<anyhow::Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}
