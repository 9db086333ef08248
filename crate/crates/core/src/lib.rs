//! Runtime failure detection for chunked-action robot policies.
//!
//! Per-step failure scores are computed from observations and planned action
//! chunks, then compared against a time-varying threshold band calibrated on
//! successful rollouts with functional conformal prediction.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN.

pub mod bench;
pub mod conformal;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod flow;
pub mod nn;
pub mod persist;
pub mod scores;
pub mod synth;
pub mod types;

pub use conformal::{build_band, CpBand, Variant};
pub use dataset::{Dataset, DatasetHeader};
pub use detector::{detect_rollout, DecisionRule, DetectionResult};
pub use error::{Error, Result};
pub use eval::{MetricsReport, ReportRow};
pub use types::{FailureMode, Label, Rollout, ScoreMethodId, ScoreSeries, Step};
