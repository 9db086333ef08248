//! Sequential failure decisions against a calibrated threshold.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conformal::CpBand;
use crate::dataset::StepRecord;
use crate::error::{Error, Result};
use crate::scores::{rollout_seed, StepScorer};
use crate::types::{Rollout, ScoreSeries, Step};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub rollout_id: String,
    pub flagged: bool,
    /// First execution-step time at which the score crossed the threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_time: Option<usize>,
    /// Whether the score exceeded the threshold at each step.
    pub per_step: Vec<bool>,
}

/// How a score is turned into a decision.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionRule {
    /// Flag when the step score exceeds the band at that step.
    Band(CpBand),
    /// Flag when the running sum of scores exceeds a constant.
    Cumulative(f64),
}

impl DecisionRule {
    /// STAC bands carrying a cumulative threshold use it; everything else uses the band.
    pub fn from_band(band: &CpBand) -> Self {
        match band.stac_threshold {
            Some(thr) => DecisionRule::Cumulative(thr),
            None => DecisionRule::Band(band.clone()),
        }
    }
}

/// Per-rollout detector state. Once raised, the flag stays raised.
#[derive(Debug, Clone)]
pub struct DetectorState<'a> {
    rule: &'a DecisionRule,
    cursor: usize,
    cumulative: f64,
    detection_time: Option<usize>,
    per_step: Vec<bool>,
}

impl<'a> DetectorState<'a> {
    pub fn new(rule: &'a DecisionRule) -> Self {
        Self {
            rule,
            cursor: 0,
            cumulative: 0.0,
            detection_time: None,
            per_step: Vec::new(),
        }
    }

    /// Threshold value the next score will be compared with.
    pub fn threshold(&self) -> f64 {
        match self.rule {
            DecisionRule::Band(b) => b.threshold_at(self.cursor),
            DecisionRule::Cumulative(c) => *c,
        }
    }

    /// Feeds the score observed at time `t`; returns whether it crosses now.
    pub fn observe(&mut self, t: usize, score: f64) -> bool {
        let crossed = match self.rule {
            DecisionRule::Band(b) => score > b.threshold_at(self.cursor),
            DecisionRule::Cumulative(c) => {
                self.cumulative += score;
                self.cumulative > *c
            }
        };
        if crossed && self.detection_time.is_none() {
            self.detection_time = Some(t);
        }
        self.per_step.push(crossed);
        self.cursor += 1;
        crossed
    }

    pub fn raised(&self) -> bool {
        self.detection_time.is_some()
    }

    pub fn finish(self, rollout_id: impl Into<String>) -> DetectionResult {
        DetectionResult {
            rollout_id: rollout_id.into(),
            flagged: self.detection_time.is_some(),
            detection_time: self.detection_time,
            per_step: self.per_step,
        }
    }
}

/// Decisions for a precomputed score series.
pub fn detect_rollout(rule: &DecisionRule, series: &ScoreSeries) -> Result<DetectionResult> {
    if series.is_empty() {
        return Err(Error::invalid(format!("score series `{}` is empty", series.rollout_id)));
    }
    let mut state = DetectorState::new(rule);
    for &(t, v) in &series.values {
        state.observe(t, v);
    }
    Ok(state.finish(series.rollout_id.clone()))
}

/// One scored step of a streamed rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub rollout_id: String,
    pub t: usize,
    pub score: f64,
    pub threshold: f64,
    pub crossed: bool,
    pub latency_ms: f64,
}

fn score_logged<S, F>(
    scorer: &mut S,
    state: &mut DetectorState<'_>,
    rollout_id: &str,
    step: &Step,
    sink: &mut F,
) -> Result<()>
where
    S: StepScorer + ?Sized,
    F: FnMut(StepLog) -> Result<()>,
{
    let start = Instant::now();
    let score = scorer.score_step(step)?;
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    let threshold = state.threshold();
    let crossed = state.observe(step.t, score);
    sink(StepLog {
        rollout_id: rollout_id.to_string(),
        t: step.t,
        score,
        threshold,
        crossed,
        latency_ms,
    })
}

/// Streams rollouts through a scorer and detector one step at a time.
/// Each step's score and scoring latency is handed to `sink`.
pub fn run_stream<S, I, F>(
    rule: &DecisionRule,
    scorer: &mut S,
    rollouts: I,
    seed: u64,
    mut sink: F,
) -> Result<Vec<DetectionResult>>
where
    S: StepScorer + ?Sized,
    I: IntoIterator<Item = Result<Rollout>>,
    F: FnMut(StepLog) -> Result<()>,
{
    let mut results = Vec::new();
    for rollout in rollouts {
        let rollout = rollout?;
        scorer.reset(rollout_seed(seed, &rollout.id));
        let mut state = DetectorState::new(rule);
        for step in &rollout.steps {
            score_logged(scorer, &mut state, &rollout.id, step, &mut sink)?;
        }
        results.push(state.finish(rollout.id.clone()));
    }
    Ok(results)
}

/// Like [`run_stream`], but consumes individual step records. Steps of one
/// rollout must be contiguous and in time order.
pub fn run_step_stream<S, I, F>(
    rule: &DecisionRule,
    scorer: &mut S,
    records: I,
    seed: u64,
    mut sink: F,
) -> Result<Vec<DetectionResult>>
where
    S: StepScorer + ?Sized,
    I: IntoIterator<Item = Result<StepRecord>>,
    F: FnMut(StepLog) -> Result<()>,
{
    let mut results = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<(String, DetectorState<'_>, Option<usize>)> = None;
    for rec in records {
        let (id, step) = rec?.into_step();
        let same = matches!(&current, Some((cur, _, _)) if *cur == id);
        if !same {
            if let Some((done, state, _)) = current.take() {
                results.push(state.finish(done));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::schema(format!("steps of rollout `{id}` are not contiguous")));
            }
            scorer.reset(rollout_seed(seed, &id));
            current = Some((id.clone(), DetectorState::new(rule), None));
        }
        let (_, state, last_t) = current.as_mut().expect("set above");
        let in_order = match *last_t {
            None => step.t == 0,
            Some(prev) => step.t > prev,
        };
        if !in_order {
            return Err(Error::schema(format!(
                "rollout `{id}`: step at t = {} is out of order",
                step.t
            )));
        }
        *last_t = Some(step.t);
        score_logged(scorer, state, &id, &step, &mut sink)?;
    }
    if let Some((done, state, _)) = current {
        results.push(state.finish(done));
    }
    Ok(results)
}
