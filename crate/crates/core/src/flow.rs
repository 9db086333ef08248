//! Flow-matching density scores over observations.
//!
//! A velocity field `f(x, s)` is regressed onto `Z - x` along the straight
//! interpolant `x_s = x + s (Z - x)` between (normalized) observations and
//! standard-normal noise. Two scores read the trained field:
//!
//! * `logpzo`: squared norm of the one-step latent estimate `x + f(x, 0)`.
//! * `logpo`: negative log density from the instantaneous change of
//!   variables, integrating `x' = f(x, s)` and `div f` with classical RK4.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{epoch_batches, gather_rows, rows_to_array, Activation, AdamState, Mlp, TrainConfig};

/// Per-dimension z-normalization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Dimensions with zero variance keep unit scale; all-constant data is rejected.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("cannot fit a normalizer on no data"));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            Error::check_dim(d, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        if std.iter().all(|&s| s <= 1e-12) {
            return Err(Error::DegenerateData("every dimension has zero variance".into()));
        }
        let std = std.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn apply_rows(&self, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
        let normed = rows.iter().map(|r| self.apply(r)).collect::<Result<Vec<_>>>()?;
        rows_to_array(&normed)
    }

    /// `Σ log std`, the log-Jacobian of the inverse transform.
    pub fn log_scale(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            hidden: vec![128, 128],
            activation: Activation::SmoothRelu,
        }
    }
}

/// How the divergence of the velocity field is evaluated during integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// Full Jacobian trace from forward differences.
    Exact,
    /// Rademacher trace estimator with a fixed probe set.
    Hutchinson { probes: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub steps: usize,
    pub divergence: Divergence,
}

impl Integrator {
    pub const FD_STEP: f64 = 1e-6;

    /// Exact trace up to 64 dimensions, 8 Hutchinson probes beyond.
    pub fn for_dim(dim: usize) -> Self {
        let divergence = if dim <= 64 {
            Divergence::Exact
        } else {
            Divergence::Hutchinson { probes: 8, seed: 0 }
        };
        Self { steps: 32, divergence }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub velocity: Mlp,
    pub normalizer: Normalizer,
}

pub fn train_flow(observations: &[Vec<f64>], cfg: &FlowConfig) -> Result<FlowModel> {
    train_flow_with_consistency(observations, cfg, 0.0)
}

/// Shared trainer for plain and consistency-regularized flow matching.
///
/// With `consistency_weight == 0` the random stream is consumed exactly as
/// plain flow matching does, so both produce identical networks.
pub(crate) fn train_flow_with_consistency(
    observations: &[Vec<f64>],
    cfg: &FlowConfig,
    consistency_weight: f64,
) -> Result<FlowModel> {
    let distinct = observations.iter().skip(1).any(|o| o != &observations[0]);
    if observations.len() < 2 || !distinct {
        return Err(Error::DegenerateData("need at least two distinct observations".into()));
    }
    if consistency_weight < 0.0 || !consistency_weight.is_finite() {
        return Err(Error::invalid("consistency weight must be finite and non-negative"));
    }
    let normalizer = Normalizer::fit(observations)?;
    let x = normalizer.apply_rows(observations)?;
    let d = x.ncols();
    let mut dims = vec![d + 1];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(d);
    let mut velocity = Mlp::new(&dims, cfg.activation, cfg.train.seed)?;
    let mut adam = AdamState::new(&velocity, cfg.train.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x5EED));

    for _ in 0..cfg.train.epochs {
        for batch in epoch_batches(x.nrows(), cfg.train.batch_size, &mut rng) {
            let xb = gather_rows(x.view(), &batch);
            let grads = flow_batch_grads(&velocity, xb.view(), consistency_weight, &mut rng)?;
            adam.step(&mut velocity, &grads)?;
        }
        if !velocity.all_finite() {
            return Err(Error::NonFinite("flow training diverged".into()));
        }
    }
    Ok(FlowModel { velocity, normalizer })
}

fn flow_batch_grads(
    velocity: &Mlp,
    xb: ArrayView2<f64>,
    consistency_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<crate::nn::Grads> {
    let (b, d) = xb.dim();
    let bf = b as f64;
    let mut inp1 = Array2::zeros((b, d + 1));
    let mut target = Array2::zeros((b, d));
    let mut s1 = vec![0.0; b];
    let mut s2 = vec![0.0; b];
    let mut inp2 = Array2::zeros((if consistency_weight > 0.0 { b } else { 0 }, d + 1));
    for i in 0..b {
        s1[i] = rng.random::<f64>();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if consistency_weight > 0.0 {
            s2[i] = rng.random::<f64>();
        }
        for j in 0..d {
            let x = xb[[i, j]];
            inp1[[i, j]] = x + s1[i] * (z[j] - x);
            target[[i, j]] = z[j] - x;
            if consistency_weight > 0.0 {
                inp2[[i, j]] = x + s2[i] * (z[j] - x);
            }
        }
        inp1[[i, d]] = s1[i];
        if consistency_weight > 0.0 {
            inp2[[i, d]] = s2[i];
        }
    }
    let cache1 = velocity.forward_cached(inp1.view())?;
    let mut g1 = (cache1.output() - &target) * (2.0 / bf);
    if consistency_weight == 0.0 {
        return velocity.backward(&cache1, g1.view());
    }
    let cache2 = velocity.forward_cached(inp2.view())?;
    let f1 = cache1.output();
    let f2 = cache2.output();
    let mut g2 = Array2::zeros((b, d));
    for i in 0..b {
        for j in 0..d {
            let z1 = inp1[[i, j]] + (1.0 - s1[i]) * f1[[i, j]];
            let z2 = inp2[[i, j]] + (1.0 - s2[i]) * f2[[i, j]];
            let diff = z1 - z2;
            g1[[i, j]] += 2.0 * consistency_weight * diff * (1.0 - s1[i]) / bf;
            g2[[i, j]] = -2.0 * consistency_weight * diff * (1.0 - s2[i]) / bf;
        }
    }
    let mut grads = velocity.backward(&cache1, g1.view())?;
    grads.add_assign(&velocity.backward(&cache2, g2.view())?);
    Ok(grads)
}

impl FlowModel {
    pub fn new(velocity: Mlp, normalizer: Normalizer) -> Result<Self> {
        let d = normalizer.dim();
        Error::check_dim(d + 1, velocity.input_dim())?;
        Error::check_dim(d, velocity.output_dim())?;
        Ok(Self { velocity, normalizer })
    }

    pub fn data_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Velocity at a point of normalized space.
    pub fn velocity_at(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        input.push(s);
        self.velocity.forward(&input)
    }

    /// One-step latent estimate `Õ + f(Õ, 0)`.
    pub fn noise_estimate(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = self.normalizer.apply(obs)?;
        let f = self.velocity_at(&x, 0.0)?;
        Ok(x.iter().zip(&f).map(|(a, b)| a + b).collect())
    }

    pub fn logpzo_score(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.noise_estimate(obs)?.iter().map(|z| z * z).sum())
    }

    /// `-log p(obs)` in the original observation space.
    pub fn logpo_score(&self, obs: &[f64], integrator: &Integrator) -> Result<f64> {
        if integrator.steps < 4 {
            return Err(Error::invalid("logpO integration needs at least 4 steps"));
        }
        let x0 = self.normalizer.apply(obs)?;
        let d = x0.len();
        let probes = match integrator.divergence {
            Divergence::Exact => None,
            Divergence::Hutchinson { probes, seed } => {
                if probes == 0 {
                    return Err(Error::invalid("Hutchinson estimator needs at least one probe"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Some(
                    (0..probes)
                        .map(|_| (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
                        .collect::<Vec<Vec<f64>>>(),
                )
            }
        };
        let field = |x: &[f64], s: f64| self.field_and_divergence(x, s, probes.as_deref());
        let (x1, div_integral) = rk4_with_divergence(&x0, integrator.steps, field)?;
        let sq: f64 = x1.iter().map(|v| v * v).sum();
        let log_latent = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * sq;
        let log_p = log_latent + div_integral - self.normalizer.log_scale();
        Ok(-log_p)
    }

    fn field_and_divergence(&self, x: &[f64], s: f64, probes: Option<&[Vec<f64>]>) -> Result<(Vec<f64>, f64)> {
        let d = x.len();
        let h = Integrator::FD_STEP;
        let directions: Vec<Vec<f64>> = match probes {
            None => (0..d)
                .map(|i| {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            Some(p) => p.to_vec(),
        };
        let mut input = Array2::zeros((directions.len() + 1, d + 1));
        for j in 0..d {
            input[[0, j]] = x[j];
        }
        input[[0, d]] = s;
        for (r, dir) in directions.iter().enumerate() {
            for j in 0..d {
                input[[r + 1, j]] = x[j] + h * dir[j];
            }
            input[[r + 1, d]] = s;
        }
        let out = self.velocity.forward_batch(input.view())?;
        let f0: Vec<f64> = out.row(0).to_vec();
        let mut acc = 0.0;
        for (r, dir) in directions.iter().enumerate() {
            let row = out.row(r + 1);
            acc += (0..d).map(|j| dir[j] * (row[j] - f0[j])).sum::<f64>() / h;
        }
        let div = match probes {
            None => acc,
            Some(p) => acc / p.len() as f64,
        };
        Ok((f0, div))
    }

    /// States of the forward ODE from `Õ` at the requested (sorted) times,
    /// with `substeps` RK4 steps per unit time (at least one per interval).
    pub fn ode_states(&self, obs: &[f64], times: &[f64], substeps: usize) -> Result<Vec<Vec<f64>>> {
        let mut x = self.normalizer.apply(obs)?;
        let mut s = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            if target < s {
                return Err(Error::invalid("ODE evaluation times must be sorted"));
            }
            let n = ((target - s) * substeps as f64).ceil().max(1.0) as usize;
            if target > s {
                let dt = (target - s) / n as f64;
                for _ in 0..n {
                    x = rk4_step(&x, s, dt, |y, t| self.velocity_at(y, t))?;
                    s += dt;
                }
            }
            s = target;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Writes the network to `path` and the normalizer to its sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        self.velocity.write_to(&mut w)?;
        w.flush()?;
        let sidecar = BufWriter::new(File::create(normalizer_path(path))?);
        serde_json::to_writer(sidecar, &self.normalizer)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let velocity = Mlp::read_from(&mut BufReader::new(File::open(path)?))?;
        let normalizer: Normalizer = serde_json::from_reader(BufReader::new(File::open(normalizer_path(path))?))?;
        FlowModel::new(velocity, normalizer)
    }
}

/// Sidecar location for a flow model's normalizer record.
pub fn normalizer_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".norm.json");
    PathBuf::from(s)
}

fn check_finite(v: &[f64], s: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationDiverged { s })
    }
}

fn rk4_step<F>(x: &[f64], s: f64, dt: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>>,
{
    let axpy = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(x, y)| x + c * y).collect() };
    let k1 = f(x, s)?;
    let k2 = f(&axpy(x, &k1, dt / 2.0), s + dt / 2.0)?;
    let k3 = f(&axpy(x, &k2, dt / 2.0), s + dt / 2.0)?;
    let k4 = f(&axpy(x, &k3, dt), s + dt)?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check_finite(&next, s + dt)?;
    Ok(next)
}

/// Integrates `x' = f(x, s)` over `[0, 1]` together with `∫ div f ds`.
fn rk4_with_divergence<F>(x0: &[f64], steps: usize, field: F) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64], f64) -> Result<(Vec<f64>, f64)>,
{
    let dt = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    let mut ell = 0.0;
    let axpy = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(x, y)| x + c * y).collect() };
    for n in 0..steps {
        let s = n as f64 * dt;
        let (k1, d1) = field(&x, s)?;
        let (k2, d2) = field(&axpy(&x, &k1, dt / 2.0), s + dt / 2.0)?;
        let (k3, d3) = field(&axpy(&x, &k2, dt / 2.0), s + dt / 2.0)?;
        let (k4, d4) = field(&axpy(&x, &k3, dt), s + dt)?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        ell += dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
        check_finite(&x, s + dt)?;
        if !ell.is_finite() {
            return Err(Error::IntegrationDiverged { s: s + dt });
        }
    }
    Ok((x, ell))
}
