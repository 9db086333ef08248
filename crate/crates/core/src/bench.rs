//! Per-step scoring latency measurement.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{rollout_seed, StepScorer};
use crate::types::Rollout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub method: String,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

/// Nearest-rank percentile of sorted samples, `q` in `(0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn latency_stats(method: impl Into<String>, samples_ms: &[f64]) -> Result<LatencyStats> {
    if samples_ms.is_empty() {
        return Err(Error::invalid("no latency samples"));
    }
    let mut s = samples_ms.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        method: method.into(),
        p50_ms: percentile(&s, 0.5),
        p95_ms: percentile(&s, 0.95),
        mean_ms: s.iter().sum::<f64>() / s.len() as f64,
    })
}

/// Times every step of every rollout `reps` times after one warm-up pass.
pub fn bench_score<S: StepScorer + ?Sized>(
    scorer: &mut S,
    rollouts: &[Rollout],
    reps: usize,
    seed: u64,
) -> Result<LatencyStats> {
    if reps == 0 {
        return Err(Error::invalid("benchmark needs at least one repetition"));
    }
    if rollouts.iter().all(Rollout::is_empty) {
        return Err(Error::invalid("benchmark needs at least one step"));
    }
    let mut samples = Vec::new();
    for rep in 0..=reps {
        for r in rollouts {
            scorer.reset(rollout_seed(seed, &r.id));
            for step in &r.steps {
                let start = Instant::now();
                std::hint::black_box(scorer.score_step(step)?);
                if rep > 0 {
                    samples.push(start.elapsed().as_secs_f64() * 1e3);
                }
            }
        }
    }
    latency_stats(scorer.method().name(), &samples)
}
