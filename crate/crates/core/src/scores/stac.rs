//! Temporal action consistency: MMD between the overlapping parts of action
//! chunk batches sampled at consecutive execution steps.

use serde::{Deserialize, Serialize};

use crate::conformal::conformal_rank;
use crate::error::{Error, Result};
use crate::scores::mmd::{median_bandwidth, mmd2_score};

/// `B` sampled action chunks, each `H` rows of `d_a` actions.
pub type ChunkBatch = Vec<Vec<Vec<f64>>>;

/// Flattened chunk segments, one row per sample.
pub type Segment = Vec<Vec<f64>>;

/// Source of action-chunk samples for an observation.
pub trait PolicySampler {
    fn sample(&self, obs: &[f64], batch_size: usize, seed: u64) -> Result<ChunkBatch>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Running cumulative score against one time-invariant quantile.
    CumulativeQuantile,
    /// Per-step score against a conformal band.
    CpBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StacConfig {
    pub batch_size: usize,
    /// Fixed RBF bandwidth; `None` takes the median heuristic on the first
    /// batch pair seen and keeps it.
    pub bandwidth: Option<f64>,
    pub h: usize,
    pub h_prime: usize,
    pub threshold_mode: ThresholdMode,
}

impl StacConfig {
    pub fn new(h: usize, h_prime: usize) -> Self {
        Self {
            batch_size: 256,
            bandwidth: None,
            h,
            h_prime,
            threshold_mode: ThresholdMode::CumulativeQuantile,
        }
    }

    pub fn overlap(&self) -> usize {
        self.h.saturating_sub(self.h_prime)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config {
                field: "batch_size".into(),
                msg: "STAC needs a batch of at least 2".into(),
            });
        }
        if self.h_prime == 0 || self.h_prime >= self.h {
            return Err(Error::Config {
                field: "H_prime".into(),
                msg: "STAC needs 0 < H' < H so consecutive chunks overlap".into(),
            });
        }
        Ok(())
    }
}

/// Flattened rows `[from, from + len)` of every chunk in the batch.
pub fn segment(batch: &ChunkBatch, from: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|chunk| {
            if chunk.len() < from + len {
                return Err(Error::DimMismatch {
                    expected: from + len,
                    got: chunk.len(),
                });
            }
            Ok(chunk[from..from + len].iter().flatten().copied().collect())
        })
        .collect()
}

/// The pair of overlapping segments: rows `H'..H` of the previous batch and
/// rows `0..H-H'` of the current one.
pub fn overlap_pair(prev: &ChunkBatch, cur: &ChunkBatch, cfg: &StacConfig) -> Result<(Segment, Segment)> {
    let k = cfg.overlap();
    Ok((segment(prev, cfg.h_prime, k)?, segment(cur, 0, k)?))
}

/// One STAC step. Returns the score (0 without a predecessor batch), the
/// freshly sampled batch, and the bandwidth used (if any).
pub fn stac_score<S: PolicySampler + ?Sized>(
    sampler: &S,
    obs: &[f64],
    prev_batch: Option<&ChunkBatch>,
    cfg: &StacConfig,
    seed: u64,
) -> Result<(f64, ChunkBatch, Option<f64>)> {
    cfg.validate()?;
    let cur = sampler.sample(obs, cfg.batch_size, seed)?;
    let Some(prev) = prev_batch else {
        return Ok((0.0, cur, cfg.bandwidth));
    };
    let (a, b) = overlap_pair(prev, &cur, cfg)?;
    let sigma = cfg.bandwidth.unwrap_or_else(|| median_bandwidth(&a, &b));
    Ok((mmd2_score(&a, &b, sigma)?, cur, Some(sigma)))
}

/// Stateful per-rollout STAC scorer carrying the previous batch.
pub struct StacScorer<S> {
    sampler: S,
    cfg: StacConfig,
    prev: Option<ChunkBatch>,
    seed: u64,
    step: u64,
}

impl<S: PolicySampler> StacScorer<S> {
    pub fn new(sampler: S, cfg: StacConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sampler,
            cfg,
            prev: None,
            seed,
            step: 0,
        })
    }

    pub fn config(&self) -> &StacConfig {
        &self.cfg
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.cfg.bandwidth
    }

    /// Starts a new rollout with its own sampling stream.
    pub fn reset(&mut self, seed: u64) {
        self.prev = None;
        self.seed = seed;
        self.step = 0;
    }

    pub fn score(&mut self, obs: &[f64]) -> Result<f64> {
        let seed = mix_seed(self.seed, self.step);
        let (score, batch, sigma) = stac_score(&self.sampler, obs, self.prev.as_ref(), &self.cfg, seed)?;
        if self.cfg.bandwidth.is_none() {
            self.cfg.bandwidth = sigma;
        }
        self.prev = Some(batch);
        self.step += 1;
        Ok(score)
    }
}

/// SplitMix64 finaliser over `(seed, index)`, for independent per-step streams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Running sums of a score series.
pub fn cumulative(scores: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Conformal quantile of the terminal cumulative scores of calibration rollouts.
pub fn stac_calibrate_threshold(series: &[Vec<f64>], alpha: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::invalid("STAC calibration needs at least one series"));
    }
    let mut totals: Vec<f64> = series.iter().map(|s| s.iter().sum()).collect();
    totals.sort_by(f64::total_cmp);
    let n = totals.len();
    let k = conformal_rank(n, alpha)?.clamp(1, n);
    Ok(totals[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Plans a straight line whose position depends only on the step index
    /// encoded in `obs[0]`; optional noise and an offset jump after `jump_at`.
    struct LinePolicy {
        h: usize,
        noise: f64,
        jump_at: Option<f64>,
    }

    impl PolicySampler for LinePolicy {
        fn sample(&self, obs: &[f64], b: usize, seed: u64) -> Result<ChunkBatch> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nd = Normal::new(0.0, self.noise.max(1e-300)).unwrap();
            let start = obs[0] * 4.0;
            let offset = match self.jump_at {
                Some(k) if obs[0] >= k => 3.0,
                _ => 0.0,
            };
            Ok((0..b)
                .map(|_| {
                    let e = if self.noise > 0.0 { nd.sample(&mut rng) } else { 0.0 };
                    (0..self.h)
                        .map(|r| vec![(start + r as f64) * 0.1 + offset + e, 0.0])
                        .collect()
                })
                .collect())
        }
    }

    fn cfg(b: usize) -> StacConfig {
        StacConfig {
            batch_size: b,
            ..StacConfig::new(8, 4)
        }
    }

    #[test]
    fn overlap_rows() {
        let prev: ChunkBatch = vec![(0..8).map(|r| vec![r as f64]).collect()];
        let cur: ChunkBatch = vec![(0..8).map(|r| vec![10.0 + r as f64]).collect()];
        let (a, b) = overlap_pair(&prev, &cur, &cfg(2)).unwrap();
        assert_eq!(a, vec![vec![4.0, 5.0, 6.0, 7.0]]);
        assert_eq!(b, vec![vec![10.0, 11.0, 12.0, 13.0]]);
    }

    #[test]
    fn consistent_deterministic_policy_scores_zero() {
        let policy = LinePolicy {
            h: 8,
            noise: 0.0,
            jump_at: None,
        };
        let mut s = StacScorer::new(policy, cfg(16), 0).unwrap();
        for k in 0..6 {
            assert_eq!(s.score(&[k as f64]).unwrap(), 0.0);
        }
    }

    #[test]
    fn first_step_is_zero() {
        let policy = LinePolicy {
            h: 8,
            noise: 0.5,
            jump_at: Some(0.0),
        };
        let (score, batch, _) = stac_score(&policy, &[0.0], None, &cfg(8), 1).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(batch.len(), 8);
    }

    #[test]
    fn discontinuity_stands_out() {
        let policy = LinePolicy {
            h: 8,
            noise: 0.05,
            jump_at: Some(5.0),
        };
        let mut s = StacScorer::new(policy, cfg(64), 2).unwrap();
        let scores: Vec<f64> = (0..8).map(|k| s.score(&[k as f64]).unwrap()).collect();
        let mut prior = scores[1..5].to_vec();
        prior.sort_by(f64::total_cmp);
        let median = (prior[1] + prior[2]) / 2.0;
        assert!(scores[5] > 10.0 * median, "{scores:?}");
    }

    #[test]
    fn threshold_order_statistic() {
        let sums: Vec<Vec<f64>> = (1..=20).map(|v| vec![v as f64 / 2.0, v as f64 / 2.0]).collect();
        assert_eq!(stac_calibrate_threshold(&sums, 0.05).unwrap(), 20.0);
        let same = vec![vec![1.0, 2.0]; 7];
        assert_eq!(stac_calibrate_threshold(&same, 0.1).unwrap(), 3.0);
        assert_eq!(stac_calibrate_threshold(&sums, 0.999).unwrap(), 1.0);
        assert!(stac_calibrate_threshold(&[], 0.05).is_err());
    }

    #[test]
    fn cumulative_sums() {
        assert_eq!(cumulative(&[1.0, 2.0, 0.5]), vec![1.0, 3.0, 3.5]);
    }

    #[test]
    fn invalid_config() {
        assert!(StacConfig {
            batch_size: 1,
            ..StacConfig::new(8, 4)
        }
        .validate()
        .is_err());
        assert!(StacConfig::new(8, 8).validate().is_err());
    }
}
