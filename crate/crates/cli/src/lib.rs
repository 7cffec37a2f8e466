//! End-to-end pipeline behind the `qgaf` binary: ingest prices, encode
//! windows as angular-field archives, cross-validate the CNN, and compare
//! encoders.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, Result};
pub use pipeline::{run_encode, run_ingest, run_train, EncodeManifest, IngestSummary, TrainSummary};
pub use report::{reduction_pct, run_compare, run_merge, ComparisonReport};
