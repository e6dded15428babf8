//! End-to-end crown generation pipeline: synthetic data, preprocessing,
//! training, prediction, surface reconstruction, margin extraction,
//! evaluation and the two-arm report. Each stage is a function over files.

pub mod config;
pub mod error;
pub mod report;
pub mod stages;

pub use config::{ReconUnits, RunConfig};
pub use error::{CliError, Result};
pub use report::{build_report, ArmRow, Report};
pub use stages::{
    evaluate_case, evaluate_stage, extract_margin_stage, predict_stage, preprocess_stage, reconstruct_stage,
    synth_stage, train_stage, StageSummary,
};
