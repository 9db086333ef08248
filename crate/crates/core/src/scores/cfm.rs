//! Consistency-regularized flow matching and its curvature score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{train_flow_with_consistency, FlowConfig, FlowModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfmConfig {
    pub flow: FlowConfig,
    pub consistency_weight: f64,
    pub eval_grid: Vec<f64>,
    /// RK4 steps per unit flow time when moving between grid points.
    pub substeps: usize,
}

impl Default for CfmConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            consistency_weight: 1.0,
            eval_grid: vec![0.0, 0.25, 0.5, 0.75],
            substeps: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfmModel {
    pub flow: FlowModel,
    eval_grid: Vec<f64>,
    substeps: usize,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("CFM evaluation grid needs at least two times"));
    }
    if grid.iter().any(|s| !(0.0..=1.0).contains(s)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "CFM evaluation grid must be strictly increasing within [0, 1]",
        ));
    }
    Ok(())
}

pub fn cfm_train(observations: &[Vec<f64>], cfg: &CfmConfig) -> Result<CfmModel> {
    check_grid(&cfg.eval_grid)?;
    let flow = train_flow_with_consistency(observations, &cfg.flow, cfg.consistency_weight)?;
    CfmModel::new(flow, cfg.eval_grid.clone(), cfg.substeps)
}

/// Mean over dimensions of the per-dimension sample variance.
pub fn mean_dim_variance(points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("variance needs at least two points"));
    }
    let d = points[0].len();
    let mut total = 0.0;
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        total += points.iter().map(|p| (p[j] - mean) * (p[j] - mean)).sum::<f64>() / (n - 1) as f64;
    }
    Ok(total / d as f64)
}

impl CfmModel {
    pub fn new(flow: FlowModel, eval_grid: Vec<f64>, substeps: usize) -> Result<Self> {
        check_grid(&eval_grid)?;
        if substeps == 0 {
            return Err(Error::invalid("CFM needs at least one integration step per unit time"));
        }
        Ok(Self {
            flow,
            eval_grid,
            substeps,
        })
    }

    pub fn eval_grid(&self) -> &[f64] {
        &self.eval_grid
    }

    /// Terminal-noise estimates `x_s + (1 - s) f(x_s, s)` along the ODE path from `O`.
    pub fn noise_estimates(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        let states = self.flow.ode_states(obs, &self.eval_grid, self.substeps)?;
        states
            .iter()
            .zip(&self.eval_grid)
            .map(|(x, &s)| {
                let f = self.flow.velocity_at(x, s)?;
                Ok(x.iter().zip(&f).map(|(a, b)| a + (1.0 - s) * b).collect())
            })
            .collect()
    }

    pub fn score(&self, obs: &[f64]) -> Result<f64> {
        mean_dim_variance(&self.noise_estimates(obs)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.flow.save(path)?;
        let grid = serde_json::json!({"eval_grid": self.eval_grid, "substeps": self.substeps});
        std::fs::write(grid_path(path), serde_json::to_vec(&grid)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        #[derive(Deserialize)]
        struct Grid {
            eval_grid: Vec<f64>,
            substeps: usize,
        }
        let g: Grid = serde_json::from_slice(&std::fs::read(grid_path(path))?)?;
        Self::new(FlowModel::load(path)?, g.eval_grid, g.substeps)
    }
}

fn grid_path(model: &Path) -> std::path::PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".grid.json");
    s.into()
}
