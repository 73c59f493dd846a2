//! Orchestration of the aeration pipeline: configuration, dataset
//! generation, training, inference, evaluation and calibration.
//!
//! The `pwt` binary exposes each stage as a verb; everything it does is
//! available here as a library call.

pub mod commands;
pub mod config;
pub mod data;
pub mod dataset;
pub mod model;
pub mod records;
pub mod train;

pub use config::PipelineConfig;
pub use dataset::{DatasetManifest, GenerateOptions, RecordEntry};
pub use model::Model;
pub use records::Split;

use pwt_core::Error;

/// Process exit status for an error: 1 for invalid configuration or input,
/// 2 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e.code() {
        "invalid-config" | "invalid-input" | "bad-tensor-header" | "checkpoint-incompatible" | "incompatible-dimensions"
        | "calibration-degenerate" | "invalid-map" | "phantom-too-small" | "decimation-ratio" => 1,
        _ => 2,
    }
}
