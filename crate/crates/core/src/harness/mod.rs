//! Pipeline orchestration: configuration, stage runners, evaluation metrics
//! and baselines.

pub mod config;
pub mod metrics;
pub mod stages;

pub use config::{apply_override, PipelineConfig, Stage};
pub use metrics::{baseline_balanced, baseline_random, score, PreferenceRates, ServedGame};
pub use stages::{sweep, EvaluationReport, Pipeline, PlayerKind, StageReport};
