//! Scripted 2-D pick-and-place environment producing labeled rollouts.
//!
//! The effector starts at a home pose, moves to an object, grasps it, carries
//! it to a target and releases it. Each execution step the policy plans an
//! `H`-row chunk of absolute waypoints `(x, y, gripper)` from the latest
//! observation window and the first `H'` rows are executed.
//!
//! Observations are a frozen random linear embedding of the raw state (a
//! stand-in for visual features) plus raw proprioception. The policy decodes
//! object and target from the embedding by least squares, so perturbing the
//! embedded features misleads it without touching the environment.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetHeader};
use crate::error::{Error, Result};
use crate::scores::stac::{ChunkBatch, PolicySampler};
use crate::types::{FailureMode, Label, Rollout, ScoreMethodId, ScoreSeries, Step};

pub const HOME: [f64; 2] = [0.5, 0.1];
/// Waypoint spacing of the nominal planner.
pub const SPEED: f64 = 0.015;
/// Largest distance the effector covers in one low-level step.
pub const MAX_STEP: f64 = 0.05;
pub const GRASP_RADIUS: f64 = 0.02;
/// A carried object falls out when the effector moves further than this in one step.
pub const SHAKE_LIMIT: f64 = 0.035;
/// Raw state: effector x/y, gripper, object x/y, target x/y, carrying.
pub const RAW_DIM: usize = 8;
/// Action rows: waypoint x/y and gripper command.
pub const ACTION_DIM: usize = 3;
const PROPRIO_DIM: usize = 3;
const DONE_RADIUS: f64 = 0.03;
const PILOT_ROLLOUTS: u64 = 64;
const EMBEDDING_STREAM: u64 = 1 << 62;
const PILOT_STREAM: u64 = 1 << 61;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub mode: FailureMode,
    pub probability: f64,
    /// Mode-specific strength; `None` uses the mode default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
}

impl FailureSpec {
    /// Parses `mode:probability[:param]` entries separated by commas.
    pub fn parse_list(s: &str) -> Result<Vec<FailureSpec>> {
        s.split(',')
            .map(str::trim)
            .filter(|e| !e.is_empty())
            .map(|entry| {
                let parts: Vec<&str> = entry.split(':').map(str::trim).collect();
                let bad = |msg: String| Error::Config {
                    field: "failures".into(),
                    msg,
                };
                if !(2..=3).contains(&parts.len()) {
                    return Err(bad(format!("`{entry}` is not mode:probability[:param]")));
                }
                let mode: FailureMode = parts[0]
                    .parse()
                    .map_err(|_| bad(format!("unknown failure mode `{}`", parts[0])))?;
                let probability: f64 = parts[1]
                    .parse()
                    .map_err(|_| bad(format!("bad probability `{}`", parts[1])))?;
                let param = match parts.get(2) {
                    Some(p) => Some(p.parse::<f64>().map_err(|_| bad(format!("bad parameter `{p}`")))?),
                    None => None,
                };
                Ok(FailureSpec {
                    mode,
                    probability,
                    param,
                })
            })
            .collect()
    }

    fn param_or(&self, default: f64) -> f64 {
        self.param.unwrap_or(default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_rollouts: usize,
    /// Maximum number of execution steps per rollout.
    pub t_max: usize,
    pub h: usize,
    pub h_prime: usize,
    pub t_o: usize,
    /// Std of the per-plan goal offsets drawn by the policy.
    pub noise: f64,
    /// Std of the additive noise on embedded features.
    pub obs_noise: f64,
    pub d_feature: usize,
    pub failures: Vec<FailureSpec>,
    pub success_eps: f64,
    pub seed: u64,
    /// Index of the first rollout. Splits generated from the same seed with
    /// disjoint index ranges share the embedding but not their episodes.
    #[serde(default)]
    pub first_index: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 100,
            t_max: 20,
            h: 16,
            h_prime: 8,
            t_o: 2,
            noise: 0.005,
            obs_noise: 0.002,
            d_feature: 16,
            failures: Vec::new(),
            success_eps: 0.05,
            seed: 0,
            first_index: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| {
            Err(Error::Config {
                field: field.into(),
                msg: msg.into(),
            })
        };
        if self.h == 0 || self.h_prime == 0 || self.h_prime >= self.h {
            return bad("H_prime", "need 0 < H' < H");
        }
        if self.t_o == 0 {
            return bad("T_O", "need at least one observation frame");
        }
        if self.t_max == 0 {
            return bad("t_max", "need at least one execution step");
        }
        if self.d_feature < RAW_DIM {
            return bad("d_feature", "embedding must have at least 8 features to be decodable");
        }
        if !(self.noise >= 0.0 && self.obs_noise >= 0.0 && self.noise.is_finite() && self.obs_noise.is_finite()) {
            return bad("noise", "noise levels must be finite and non-negative");
        }
        if !(self.success_eps >= 0.0) {
            return bad("success_eps", "must be non-negative");
        }
        let mut total = 0.0;
        for f in &self.failures {
            if !(0.0..=1.0).contains(&f.probability) {
                return bad("failures", "probabilities must lie in [0, 1]");
            }
            total += f.probability;
        }
        if total > 1.0 + 1e-9 {
            return bad("failures", "failure probabilities sum to more than 1");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.t_o * (self.d_feature + PROPRIO_DIM)
    }

    pub fn header(&self, embedding: &[Vec<f64>]) -> DatasetHeader {
        let mut h = DatasetHeader::new(self.obs_dim(), ACTION_DIM, self.h, self.h_prime, self.t_o);
        h.embedding = Some(embedding.to_vec());
        h.policy_noise = Some(self.noise);
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub effector: [f64; 2],
    pub gripper_closed: bool,
    pub object: [f64; 2],
    pub target: [f64; 2],
    pub carrying: bool,
}

impl EnvState {
    pub fn raw(&self) -> [f64; RAW_DIM] {
        [
            self.effector[0],
            self.effector[1],
            f64::from(u8::from(self.gripper_closed)),
            self.object[0],
            self.object[1],
            self.target[0],
            self.target[1],
            f64::from(u8::from(self.carrying)),
        ]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// Moves `from` toward `to` by at most `max`.
fn step_toward(from: [f64; 2], to: [f64; 2], max: f64) -> [f64; 2] {
    let d = dist(from, to);
    if d <= max {
        to
    } else {
        [
            from[0] + (to[0] - from[0]) * max / d,
            from[1] + (to[1] - from[1]) * max / d,
        ]
    }
}

/// True iff the object lies within `eps` of the target and the gripper is open.
pub fn success_oracle(state: &EnvState, eps: f64) -> bool {
    !state.gripper_closed && dist(state.object, state.target) <= eps
}

/// Frozen `d_feature x 8` embedding with `N(0, 1/8)` entries.
pub fn embedding_matrix(d_feature: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EMBEDDING_STREAM);
    let scale = 1.0 / (RAW_DIM as f64).sqrt();
    (0..d_feature)
        .map(|_| {
            (0..RAW_DIM)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v * scale
                })
                .collect()
        })
        .collect()
}

/// The policy's belief decoded from an observation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Belief {
    pub effector: [f64; 2],
    pub gripper_closed: bool,
    pub object: [f64; 2],
    pub target: [f64; 2],
    pub carrying: bool,
}

/// Waypoint planner driven by least-squares decoding of embedded features.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    h: usize,
    t_o: usize,
    d_feature: usize,
    noise: f64,
    decoder: DMatrix<f64>,
}

impl ScriptedPolicy {
    pub fn new(embedding: &[Vec<f64>], h: usize, t_o: usize, noise: f64) -> Result<Self> {
        let d_feature = embedding.len();
        if d_feature < RAW_DIM || embedding.iter().any(|r| r.len() != RAW_DIM) {
            return Err(Error::invalid("embedding must be d_feature x 8 with d_feature >= 8"));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::invalid(format!(
                "policy noise must be finite and non-negative, got {noise}"
            )));
        }
        let w = DMatrix::from_fn(d_feature, RAW_DIM, |i, j| embedding[i][j]);
        let decoder = w
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::DegenerateData(format!("embedding not invertible: {e}")))?;
        Ok(Self {
            h,
            t_o,
            d_feature,
            noise,
            decoder,
        })
    }

    /// Rebuilds the policy that produced a simulated dataset.
    pub fn from_header(header: &DatasetHeader) -> Result<Self> {
        let missing = || Error::schema("dataset header lacks the simulator policy; it was not produced by `simulate`");
        let emb = header.embedding.as_ref().ok_or_else(missing)?;
        let noise = header.policy_noise.ok_or_else(missing)?;
        Self::new(emb, header.h, header.t_o, noise)
    }

    pub fn obs_dim(&self) -> usize {
        self.t_o * (self.d_feature + PROPRIO_DIM)
    }

    pub fn decode(&self, obs: &[f64]) -> Result<Belief> {
        Error::check_dim(self.obs_dim(), obs.len())?;
        let frame = &obs[(self.t_o - 1) * (self.d_feature + PROPRIO_DIM)..];
        let e = DMatrix::from_column_slice(self.d_feature, 1, &frame[..self.d_feature]);
        let r = &self.decoder * e;
        let p = &frame[self.d_feature..];
        Ok(Belief {
            effector: [p[0], p[1]],
            gripper_closed: p[2] >= 0.5,
            object: [r[3], r[4]],
            target: [r[5], r[6]],
            carrying: r[7] >= 0.5,
        })
    }

    /// Deterministic plan toward goals shifted by the given offsets.
    pub fn plan(&self, b: &Belief, object_offset: [f64; 2], target_offset: [f64; 2]) -> Vec<Vec<f64>> {
        let obj = [b.object[0] + object_offset[0], b.object[1] + object_offset[1]];
        let tgt = [b.target[0] + target_offset[0], b.target[1] + target_offset[1]];
        let mut e = b.effector;
        let mut closed = b.gripper_closed;
        let mut carrying = b.carrying;
        let mut done = !carrying && dist(b.object, b.target) < DONE_RADIUS;
        let mut rows = Vec::with_capacity(self.h);
        for _ in 0..self.h {
            let g = if done {
                closed = false;
                0.0
            } else if !carrying {
                if closed {
                    closed = false;
                } else if dist(e, obj) > 1e-12 {
                    e = step_toward(e, obj, SPEED);
                } else {
                    closed = true;
                    carrying = true;
                }
                f64::from(u8::from(closed))
            } else if dist(e, tgt) > 1e-12 {
                e = step_toward(e, tgt, SPEED);
                1.0
            } else {
                closed = false;
                carrying = false;
                done = true;
                0.0
            };
            rows.push(vec![e[0], e[1], g]);
        }
        rows
    }

    fn offsets(&self, rng: &mut ChaCha8Rng) -> ([f64; 2], [f64; 2]) {
        if self.noise == 0.0 {
            return ([0.0; 2], [0.0; 2]);
        }
        let n = Normal::new(0.0, self.noise).expect("noise validated as finite and non-negative");
        ([n.sample(rng), n.sample(rng)], [n.sample(rng), n.sample(rng)])
    }

    fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let belief = self.decode(obs)?;
        let (oo, to) = self.offsets(rng);
        Ok(self.plan(&belief, oo, to))
    }
}

impl PolicySampler for ScriptedPolicy {
    fn sample(&self, obs: &[f64], batch_size: usize, seed: u64) -> Result<ChunkBatch> {
        if batch_size == 0 {
            return Err(Error::invalid("policy batch size must be at least 1"));
        }
        let belief = self.decode(obs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..batch_size)
            .map(|_| {
                let (oo, to) = self.offsets(&mut rng);
                self.plan(&belief, oo, to)
            })
            .collect())
    }
}

/// Active failure for one episode, with its sampled parameters.
#[derive(Debug, Clone, Copy)]
enum Injection {
    None,
    Slip { delay: usize },
    Jitter { amplitude: f64, start: usize },
    SensorShift { start: usize },
    OodInit,
    Stall { start: usize, len: usize },
}

struct Episode<'a> {
    cfg: &'a SynthConfig,
    embedding: &'a [Vec<f64>],
    policy: &'a ScriptedPolicy,
    shift: Option<&'a [f64]>,
}

struct EpisodeOutcome {
    rollout: Rollout,
    features: Vec<Vec<f64>>,
}

impl Episode<'_> {
    fn frame(&self, state: &EnvState, shifted: bool, rng: &mut ChaCha8Rng, features: &mut Vec<Vec<f64>>) -> Vec<f64> {
        let raw = state.raw();
        let mut e: Vec<f64> = self
            .embedding
            .iter()
            .map(|row| row.iter().zip(&raw).map(|(w, r)| w * r).sum())
            .collect();
        if self.cfg.obs_noise > 0.0 {
            for v in e.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += self.cfg.obs_noise * z;
            }
        }
        features.push(e.clone());
        if shifted {
            if let Some(shift) = self.shift {
                for (v, s) in e.iter_mut().zip(shift) {
                    *v += s;
                }
            }
        }
        e.extend_from_slice(&raw[..PROPRIO_DIM]);
        e
    }

    fn run(&self, index: u64, allow_failures: bool) -> Result<EpisodeOutcome> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(if allow_failures { index } else { PILOT_STREAM + index });

        let injection = if allow_failures {
            self.draw_injection(&mut rng)
        } else {
            Injection::None
        };
        let object_x = if matches!(injection, Injection::OodInit) {
            rng.random_range(1.1..1.3)
        } else {
            rng.random_range(0.15..0.45)
        };
        let mut state = EnvState {
            effector: HOME,
            gripper_closed: false,
            object: [object_x, rng.random_range(0.5..0.9)],
            target: [rng.random_range(0.55..0.85), rng.random_range(0.5..0.9)],
            carrying: false,
        };

        let mut features = Vec::new();
        let mut frames = vec![self.frame(&state, false, &mut rng, &mut features)];
        let mut steps = Vec::new();
        let mut applied_at: Option<usize> = if matches!(injection, Injection::OodInit) {
            Some(0)
        } else {
            None
        };
        let mut carried_for = 0usize;
        let mut slipped = false;
        let mut released = false;

        for k in 0..cfg.t_max {
            let t = k * cfg.h_prime;
            let obs: Vec<f64> = (0..cfg.t_o)
                .rev()
                .flat_map(|back| frames[t.saturating_sub(back)].iter().copied())
                .collect();
            let mut chunk = self.policy.act(&obs, &mut rng)?;

            match injection {
                Injection::Jitter { amplitude, start } if k >= start => {
                    jitter_chunk(&mut chunk, amplitude, &mut rng);
                    applied_at.get_or_insert(t);
                }
                Injection::Stall { start, len } if k >= start && k < start + len => {
                    let hold = vec![
                        state.effector[0],
                        state.effector[1],
                        f64::from(u8::from(state.gripper_closed)),
                    ];
                    chunk = vec![hold; cfg.h];
                    applied_at.get_or_insert(t);
                }
                Injection::SensorShift { start } if k == start => {
                    applied_at.get_or_insert(t);
                }
                _ => {}
            }

            for row in chunk.iter().take(cfg.h_prime) {
                let before = state.effector;
                state.effector = clamp_unit(step_toward(state.effector, [row[0], row[1]], MAX_STEP));
                let close = row[2] >= 0.5;
                if close && !state.gripper_closed {
                    if dist(state.effector, state.object) <= GRASP_RADIUS {
                        if slipped {
                            kick(&mut state, 0.1, &mut rng);
                        } else {
                            state.carrying = true;
                            carried_for = 0;
                        }
                    }
                } else if !close && state.gripper_closed && state.carrying {
                    state.carrying = false;
                    released = true;
                }
                state.gripper_closed = close;
                if state.carrying {
                    carried_for += 1;
                    if dist(before, state.effector) > SHAKE_LIMIT {
                        state.carrying = false;
                    } else if let Injection::Slip { delay } = injection {
                        if !slipped && carried_for > delay {
                            slipped = true;
                            state.carrying = false;
                            kick(&mut state, 0.2, &mut rng);
                            applied_at.get_or_insert(t);
                        }
                    }
                }
                if state.carrying {
                    state.object = state.effector;
                }
                let shifted =
                    matches!(injection, Injection::SensorShift { start } if frames.len() >= start * cfg.h_prime);
                frames.push(self.frame(&state, shifted, &mut rng, &mut features));
                if released {
                    break;
                }
            }
            steps.push(Step {
                t,
                obs,
                action_chunk: chunk,
            });
            if released {
                break;
            }
        }

        let label = if success_oracle(&state, cfg.success_eps) {
            Label::Success
        } else {
            Label::Failure
        };
        let failure_mode = applied_at.map(|_| injection_mode(injection).expect("applied injections have a mode"));
        Ok(EpisodeOutcome {
            rollout: Rollout {
                id: format!("r{index:05}"),
                label,
                failure_mode,
                injection_time: applied_at,
                steps,
            },
            features,
        })
    }

    fn draw_injection(&self, rng: &mut ChaCha8Rng) -> Injection {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let picked = self.cfg.failures.iter().find(|f| {
            acc += f.probability;
            u < acc
        });
        let Some(spec) = picked else {
            return Injection::None;
        };
        match spec.mode {
            FailureMode::Slip => Injection::Slip {
                delay: spec.param_or(6.0).max(0.0) as usize,
            },
            FailureMode::Jitter => Injection::Jitter {
                amplitude: spec.param_or(0.08),
                start: rng.random_range(1..=4),
            },
            FailureMode::SensorShift => Injection::SensorShift {
                start: (self.cfg.t_max / 3).max(1),
            },
            FailureMode::OodInit => Injection::OodInit,
            FailureMode::Stall => Injection::Stall {
                start: rng.random_range(1..=3),
                len: spec.param.map_or(self.cfg.t_max, |p| p.max(1.0) as usize),
            },
        }
    }
}

fn injection_mode(inj: Injection) -> Option<FailureMode> {
    match inj {
        Injection::None => None,
        Injection::Slip { .. } => Some(FailureMode::Slip),
        Injection::Jitter { .. } => Some(FailureMode::Jitter),
        Injection::SensorShift { .. } => Some(FailureMode::SensorShift),
        Injection::OodInit => Some(FailureMode::OodInit),
        Injection::Stall { .. } => Some(FailureMode::Stall),
    }
}

/// Pushes the object away from the target by `distance`, within 45 degrees.
fn kick(state: &mut EnvState, distance: f64, rng: &mut ChaCha8Rng) {
    let away = [state.object[0] - state.target[0], state.object[1] - state.target[1]];
    let base = away[1].atan2(away[0]);
    let angle = base + rng.random_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4);
    let p = [
        state.object[0] + distance * angle.cos(),
        state.object[1] + distance * angle.sin(),
    ];
    state.object = [p[0].clamp(0.02, 0.98), p[1].clamp(0.02, 0.98)];
}

/// Random-sign lateral offsets on every waypoint of the chunk.
fn jitter_chunk(chunk: &mut [Vec<f64>], amplitude: f64, rng: &mut ChaCha8Rng) {
    let original: Vec<[f64; 2]> = chunk.iter().map(|r| [r[0], r[1]]).collect();
    for (j, row) in chunk.iter_mut().enumerate() {
        let prev = if j == 0 { original[0] } else { original[j - 1] };
        let next = original[j];
        let (dx, dy) = (next[0] - prev[0], next[1] - prev[1]);
        let norm = (dx * dx + dy * dy).sqrt();
        let perp = if norm > 1e-12 {
            [-dy / norm, dx / norm]
        } else {
            [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]
        };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let p = clamp_unit([row[0] + sign * amplitude * perp[0], row[1] + sign * amplitude * perp[1]]);
        row[0] = p[0];
        row[1] = p[1];
    }
}

/// Per-feature offset of the sensor-shift failure: `3 * std` with a fixed sign pattern.
fn sensor_shift(cfg: &SynthConfig, feature_std: &[f64], scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(EMBEDDING_STREAM + 2);
    feature_std
        .iter()
        .map(|s| if rng.random::<bool>() { scale * s } else { -scale * s })
        .collect()
}

/// Simulates `cfg.n_rollouts` episodes. Episode `i` draws from its own
/// random stream, so rollouts do not depend on each other.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let embedding = embedding_matrix(cfg.d_feature, cfg.seed);
    let policy = ScriptedPolicy::new(&embedding, cfg.h, cfg.t_o, cfg.noise)?;

    let shift_scale = cfg
        .failures
        .iter()
        .find(|f| f.mode == FailureMode::SensorShift && f.probability > 0.0)
        .map(|f| f.param_or(3.0));
    let shift = match shift_scale {
        Some(scale) => {
            let pilot = Episode {
                cfg,
                embedding: &embedding,
                policy: &policy,
                shift: None,
            };
            let mut feats = Vec::new();
            for i in 0..PILOT_ROLLOUTS {
                feats.extend(pilot.run(i, false)?.features);
            }
            Some(sensor_shift(cfg, &feature_std(&feats), scale))
        }
        None => None,
    };

    let episode = Episode {
        cfg,
        embedding: &embedding,
        policy: &policy,
        shift: shift.as_deref(),
    };
    let rollouts = (cfg.first_index..cfg.first_index + cfg.n_rollouts as u64)
        .map(|i| episode.run(i, true).map(|o| o.rollout))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(cfg.header(&embedding), rollouts)
}

fn feature_std(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Synthetic score series for exercising calibration and evaluation without
/// training a model: smooth noisy curves for successes, and the same curves
/// plus a rising ramp after a random onset for failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScoreConfig {
    pub n_success: usize,
    pub n_failure: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise: f64,
    pub ramp: f64,
    pub step: usize,
    pub seed: u64,
}

impl Default for SyntheticScoreConfig {
    fn default() -> Self {
        Self {
            n_success: 100,
            n_failure: 0,
            min_len: 12,
            max_len: 20,
            noise: 0.3,
            ramp: 0.4,
            step: 8,
            seed: 0,
        }
    }
}

pub fn synthetic_score_series(cfg: &SyntheticScoreConfig) -> Result<Vec<(ScoreSeries, Label)>> {
    if cfg.min_len == 0 || cfg.max_len < cfg.min_len {
        return Err(Error::invalid("need 1 <= min_len <= max_len"));
    }
    let total = cfg.n_success + cfg.n_failure;
    (0..total)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let failure = i >= cfg.n_success;
            let len = if failure {
                cfg.max_len
            } else {
                rng.random_range(cfg.min_len..=cfg.max_len)
            };
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let level: f64 = 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal);
            let onset = rng.random_range(2..=(len / 2).max(2));
            let values = (0..len)
                .map(|k| {
                    let x = k as f64 / len as f64;
                    let base = level + 0.5 * (std::f64::consts::PI * x + phase).sin().abs();
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let bump = if failure && k >= onset {
                        cfg.ramp * (k - onset + 1) as f64
                    } else {
                        0.0
                    };
                    (k * cfg.step, base + cfg.noise * z.abs() + bump)
                })
                .collect();
            let label = if failure { Label::Failure } else { Label::Success };
            Ok((
                ScoreSeries::new(format!("s{i:05}"), ScoreMethodId::LogpZO, values)?,
                label,
            ))
        })
        .collect()
}
