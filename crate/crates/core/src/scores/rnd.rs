//! Random network distillation over (action chunk, observation) pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Normalizer;
use crate::nn::{fit_mse, rows_to_array, Activation, Mlp, TrainConfig};
use crate::persist::Container;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RndConfig {
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Default for RndConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
            hidden: vec![128, 128],
            out_dim: 64,
            activation: Activation::SmoothRelu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RndModel {
    target: Mlp,
    predictor: Mlp,
    normalizer: Normalizer,
}

/// Network input: flattened action chunk followed by the observation.
pub fn rnd_input(actions: &[f64], obs: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(actions.len() + obs.len());
    v.extend_from_slice(actions);
    v.extend_from_slice(obs);
    v
}

/// Trains the predictor on `(flattened actions, observation)` pairs.
pub fn rnd_train(pairs: &[(Vec<f64>, Vec<f64>)], cfg: &RndConfig) -> Result<RndModel> {
    if pairs.is_empty() {
        return Err(Error::invalid("RND training needs at least one pair"));
    }
    let (da, d_o) = (pairs[0].0.len(), pairs[0].1.len());
    let inputs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(a, o)| {
            Error::check_dim(da, a.len())?;
            Error::check_dim(d_o, o.len())?;
            Ok(rnd_input(a, o))
        })
        .collect::<Result<_>>()?;
    let normalizer = if inputs.len() > 1 {
        Normalizer::fit(&inputs).unwrap_or_else(|_| Normalizer::identity(da + d_o))
    } else {
        Normalizer::identity(da + d_o)
    };
    let mut dims = vec![da + d_o];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(cfg.out_dim);
    let target = Mlp::new(&dims, cfg.activation, cfg.train.seed)?;
    let mut predictor = Mlp::new(&dims, cfg.activation, cfg.train.seed.wrapping_add(1))?;
    let x = normalizer.apply_rows(&inputs)?;
    let y = target.forward_batch(x.view())?;
    fit_mse(&mut predictor, x.view(), y.view(), &cfg.train)?;
    Ok(RndModel {
        target,
        predictor,
        normalizer,
    })
}

impl RndModel {
    pub fn from_parts(target: Mlp, predictor: Mlp, normalizer: Normalizer) -> Result<Self> {
        if target.dims() != predictor.dims() {
            return Err(Error::invalid("target and predictor must share an architecture"));
        }
        Error::check_dim(target.input_dim(), normalizer.dim())?;
        Ok(Self {
            target,
            predictor,
            normalizer,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor
    }

    /// Squared distance between target and predictor outputs.
    pub fn score(&self, actions: &[f64], obs: &[f64]) -> Result<f64> {
        let x = self.normalizer.apply(&rnd_input(actions, obs))?;
        let t = self.target.forward(&x)?;
        let p = self.predictor.forward(&x)?;
        Ok(t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Scores many pairs with two batched forward passes.
    pub fn score_batch(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
        let inputs: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(a, o)| self.normalizer.apply(&rnd_input(a, o)))
            .collect::<Result<_>>()?;
        let x = rows_to_array(&inputs)?;
        let t = self.target.forward_batch(x.view())?;
        let p = self.predictor.forward_batch(x.view())?;
        Ok((t - p)
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new();
        c.push(b"TGT ", self.target.to_bytes());
        c.push(b"PRD ", self.predictor.to_bytes());
        c.push(b"NORM", serde_json::to_vec(&self.normalizer)?);
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::load(path)?;
        let target = Mlp::read_from(&mut c.get(b"TGT ")?)?;
        let predictor = Mlp::read_from(&mut c.get(b"PRD ")?)?;
        let normalizer: Normalizer = serde_json::from_slice(c.get(b"NORM")?)?;
        Self::from_parts(target, predictor, normalizer)
    }
}
