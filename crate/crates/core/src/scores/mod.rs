//! Score methods behind one per-step scoring interface.

pub mod cfm;
pub mod mmd;
pub mod pca_kmeans;
pub mod rnd;
pub mod sparc;
pub mod stac;

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{FlowModel, Integrator};
use crate::types::{Rollout, ScoreMethodId, ScoreSeries, Step};

pub use cfm::{cfm_train, CfmConfig, CfmModel};
pub use pca_kmeans::{pca_kmeans_fit, PcaKmeansConfig, PcaKmeansModel};
pub use rnd::{rnd_train, RndConfig, RndModel};
pub use sparc::{sparc, sparc_chunk, SparcParams};
pub use stac::{stac_calibrate_threshold, stac_score, PolicySampler, StacConfig, StacScorer};

/// A scorer consumed one execution step at a time.
pub trait StepScorer {
    fn method(&self) -> ScoreMethodId;

    /// Clears per-rollout state before a new rollout.
    fn reset(&mut self, _rollout_seed: u64) {}

    fn score_step(&mut self, step: &Step) -> Result<f64>;
}

/// A stateless, fitted (or parameter-free) score model.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    LogpZO(FlowModel),
    LogpO(FlowModel, Integrator),
    Rnd(RndModel),
    Cfm(CfmModel),
    Sparc(SparcParams),
    PcaKMeans(PcaKmeansModel),
}

impl ScoreModel {
    pub fn method(&self) -> ScoreMethodId {
        match self {
            ScoreModel::LogpZO(_) => ScoreMethodId::LogpZO,
            ScoreModel::LogpO(..) => ScoreMethodId::LogpO,
            ScoreModel::Rnd(_) => ScoreMethodId::Rnd,
            ScoreModel::Cfm(_) => ScoreMethodId::Cfm,
            ScoreModel::Sparc(_) => ScoreMethodId::Sparc,
            ScoreModel::PcaKMeans(_) => ScoreMethodId::PcaKMeans,
        }
    }

    pub fn score(&self, step: &Step) -> Result<f64> {
        let v = match self {
            ScoreModel::LogpZO(m) => m.logpzo_score(&step.obs)?,
            ScoreModel::LogpO(m, integ) => m.logpo_score(&step.obs, integ)?,
            ScoreModel::Rnd(m) => m.score(&step.flat_actions(), &step.obs)?,
            ScoreModel::Cfm(m) => m.score(&step.obs)?,
            ScoreModel::Sparc(p) => sparc_chunk(&step.action_chunk, p)?,
            ScoreModel::PcaKMeans(m) => m.score(&step.obs)?,
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{} score at t = {}", self.method(), step.t)));
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            ScoreModel::LogpZO(m) | ScoreModel::LogpO(m, _) => m.save(path),
            ScoreModel::Rnd(m) => m.save(path),
            ScoreModel::Cfm(m) => m.save(path),
            ScoreModel::PcaKMeans(m) => m.save(path),
            ScoreModel::Sparc(_) => Err(Error::invalid("SPARC has no model file")),
        }
    }

    /// Loads the model stored for `method`; SPARC needs no file.
    pub fn load(method: ScoreMethodId, path: impl AsRef<Path>) -> Result<Self> {
        Ok(match method {
            ScoreMethodId::LogpZO => ScoreModel::LogpZO(FlowModel::load(path)?),
            ScoreMethodId::LogpO => {
                let m = FlowModel::load(path)?;
                let integ = Integrator::for_dim(m.data_dim());
                ScoreModel::LogpO(m, integ)
            }
            ScoreMethodId::Rnd => ScoreModel::Rnd(RndModel::load(path)?),
            ScoreMethodId::Cfm => ScoreModel::Cfm(CfmModel::load(path)?),
            ScoreMethodId::PcaKMeans => ScoreModel::PcaKMeans(PcaKmeansModel::load(path)?),
            ScoreMethodId::Sparc => ScoreModel::Sparc(SparcParams::default()),
            ScoreMethodId::Stac => {
                return Err(Error::invalid("STAC is scored with a policy sampler, not a model file"))
            }
        })
    }
}

impl StepScorer for ScoreModel {
    fn method(&self) -> ScoreMethodId {
        ScoreModel::method(self)
    }

    fn score_step(&mut self, step: &Step) -> Result<f64> {
        self.score(step)
    }
}

impl<S: PolicySampler> StepScorer for StacScorer<S> {
    fn method(&self) -> ScoreMethodId {
        ScoreMethodId::Stac
    }

    fn reset(&mut self, rollout_seed: u64) {
        StacScorer::reset(self, rollout_seed);
    }

    fn score_step(&mut self, step: &Step) -> Result<f64> {
        self.score(&step.obs)
    }
}

/// FNV-1a hash of a rollout id, used to derive per-rollout seeds.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed for a rollout's scoring stream.
pub fn rollout_seed(seed: u64, rollout_id: &str) -> u64 {
    stac::mix_seed(seed, id_hash(rollout_id))
}

/// Scores every step of a rollout.
pub fn score_rollout<S: StepScorer + ?Sized>(scorer: &mut S, rollout: &Rollout, seed: u64) -> Result<ScoreSeries> {
    scorer.reset(rollout_seed(seed, &rollout.id));
    let values = rollout
        .steps
        .iter()
        .map(|s| Ok((s.t, scorer.score_step(s)?)))
        .collect::<Result<Vec<_>>>()?;
    ScoreSeries::new(rollout.id.clone(), scorer.method(), values)
}

pub fn score_rollouts<S: StepScorer + ?Sized>(
    scorer: &mut S,
    rollouts: &[Rollout],
    seed: u64,
) -> Result<Vec<ScoreSeries>> {
    rollouts.iter().map(|r| score_rollout(scorer, r, seed)).collect()
}
