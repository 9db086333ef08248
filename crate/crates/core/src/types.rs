//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth outcome of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Success,
    Failure,
    Unknown,
}

/// Failure modes the synthetic environment can inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    Slip,
    Jitter,
    SensorShift,
    OodInit,
    Stall,
}

impl FailureMode {
    pub const ALL: [FailureMode; 5] = [
        FailureMode::Slip,
        FailureMode::Jitter,
        FailureMode::SensorShift,
        FailureMode::OodInit,
        FailureMode::Stall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureMode::Slip => "slip",
            FailureMode::Jitter => "jitter",
            FailureMode::SensorShift => "sensor_shift",
            FailureMode::OodInit => "ood_init",
            FailureMode::Stall => "stall",
        }
    }
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FailureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FailureMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown failure mode `{s}`")))
    }
}

/// One execution step: the observation window and the planned action chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Execution-step time; step `k` of a rollout has `t = k * H'`.
    pub t: usize,
    /// Flattened window of the latest `T_O` raw observations.
    pub obs: Vec<f64>,
    /// `H` rows of `d_a` planned actions.
    pub action_chunk: Vec<Vec<f64>>,
}

impl Step {
    /// Row-major flattening of the action chunk.
    pub fn flat_actions(&self) -> Vec<f64> {
        self.action_chunk.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_mode: Option<FailureMode>,
    /// Execution-step time at which the injected failure first took effect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_time: Option<usize>,
    pub steps: Vec<Step>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Time of the last recorded step.
    pub fn last_t(&self) -> Option<usize> {
        self.steps.last().map(|s| s.t)
    }
}

/// Identifier of a scoring method. The string forms match the `--method` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreMethodId {
    #[serde(rename = "logpzo")]
    LogpZO,
    #[serde(rename = "logpo")]
    LogpO,
    #[serde(rename = "rnd")]
    Rnd,
    #[serde(rename = "cfm")]
    Cfm,
    #[serde(rename = "sparc")]
    Sparc,
    #[serde(rename = "stac")]
    Stac,
    #[serde(rename = "pca-kmeans")]
    PcaKMeans,
}

impl ScoreMethodId {
    pub const ALL: [ScoreMethodId; 7] = [
        ScoreMethodId::LogpZO,
        ScoreMethodId::LogpO,
        ScoreMethodId::Rnd,
        ScoreMethodId::Cfm,
        ScoreMethodId::Sparc,
        ScoreMethodId::Stac,
        ScoreMethodId::PcaKMeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethodId::LogpZO => "logpzo",
            ScoreMethodId::LogpO => "logpo",
            ScoreMethodId::Rnd => "rnd",
            ScoreMethodId::Cfm => "cfm",
            ScoreMethodId::Sparc => "sparc",
            ScoreMethodId::Stac => "stac",
            ScoreMethodId::PcaKMeans => "pca-kmeans",
        }
    }

    /// SPARC and STAC are computed post hoc and have nothing to train.
    pub fn requires_training(self) -> bool {
        !matches!(self, ScoreMethodId::Sparc | ScoreMethodId::Stac)
    }
}

impl fmt::Display for ScoreMethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown score method `{s}`")))
    }
}

/// Per-rollout time series of scalar scores; higher means more failure-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub rollout_id: String,
    pub method: ScoreMethodId,
    /// `(t, score)` pairs on the rollout's execution-step grid.
    pub values: Vec<(usize, f64)>,
}

impl ScoreSeries {
    pub fn new(rollout_id: impl Into<String>, method: ScoreMethodId, values: Vec<(usize, f64)>) -> Result<Self> {
        if let Some((t, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score at t = {t}")));
        }
        Ok(Self {
            rollout_id: rollout_id.into(),
            method,
            values,
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.values.iter().map(|&(_, v)| v).collect()
    }

    pub fn times(&self) -> Vec<usize> {
        self.values.iter().map(|&(t, _)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
