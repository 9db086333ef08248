//! Small feed-forward networks with hand-written reverse-mode gradients and
//! an Adam optimizer.
//!
//! Weights of layer `l` are stored as an `(out, in)` matrix, so a batch
//! `X` of shape `(batch, in)` maps to `X Wᵀ + b`. Hidden layers share one
//! activation; the output layer is linear.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FBND";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`.
    SmoothRelu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::SmoothRelu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::SmoothRelu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::SmoothRelu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::SmoothRelu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            _ => Err(Error::ModelFormat(format!("unknown activation code {c}"))),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Gradients (or any other per-parameter buffer) shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Iterates over all entries in parameter order.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    fn shapes_match(&self, mlp: &Mlp) -> bool {
        self.weights.len() == mlp.weights.len()
            && self.weights.iter().zip(&mlp.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&mlp.biases).all(|(a, b)| a.dim() == b.dim())
    }
}

/// Activations recorded during a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Batch mean of the squared error summed over output dimensions.
    Mse,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
            let b = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound));
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            weights: dims.windows(2).map(|p| Array2::zeros((p[1], p[0]))).collect(),
            biases: dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
        })
    }

    /// Builds a network from explicit `(out, in)` weight matrices and biases.
    pub fn from_parts(activation: Activation, weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid("need one bias per weight matrix"));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            Error::check_dim(*dims.last().unwrap(), w.ncols())?;
            Error::check_dim(w.nrows(), b.len())?;
            dims.push(w.nrows());
        }
        Ok(Self {
            dims,
            activation,
            weights,
            biases,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output dims"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer dims must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameter `i` in storage order (per layer: weights row-major, then bias).
    pub fn param(&self, i: usize) -> f64 {
        let mut i = i;
        for (wl, bl) in self.weights.iter().zip(&self.biases) {
            if i < wl.len() {
                return wl.as_slice().unwrap()[i];
            }
            i -= wl.len();
            if i < bl.len() {
                return bl[i];
            }
            i -= bl.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let mut i = i;
        for (wl, bl) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if i < wl.len() {
                wl.as_slice_mut().unwrap()[i] = v;
                return;
            }
            i -= wl.len();
            if i < bl.len() {
                bl[i] = v;
                return;
            }
            i -= bl.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.input_dim(), x.len())?;
        let mut a = Array1::from_vec(x.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(&a);
            z += b;
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Batched forward pass without caching; rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Error::check_dim(self.input_dim(), x.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        Error::check_dim(self.input_dim(), x.ncols())?;
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = if l == 0 { x } else { post[l - 1].view() };
            let mut z = input.dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            let h = if l < last {
                let act = self.activation;
                z.mapv(|v| act.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(h);
        }
        Ok(ForwardCache {
            input: x.to_owned(),
            pre,
            post,
        })
    }

    /// Reverse pass: gradients of a loss whose derivative with respect to the
    /// network output is `grad_out` (same shape as the cached output).
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Grads> {
        let out = cache.output();
        if out.dim() != grad_out.dim() {
            return Err(Error::DimMismatch {
                expected: out.len(),
                got: grad_out.len(),
            });
        }
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_out.to_owned();
        for l in (0..n).rev() {
            if l < n - 1 {
                let act = self.activation;
                Zip::from(&mut delta)
                    .and(&cache.pre[l])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            let a_prev = if l == 0 {
                cache.input.view()
            } else {
                cache.post[l - 1].view()
            };
            gw.push(delta.t().dot(&a_prev));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                delta = delta.dot(&self.weights[l]);
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(Grads {
            weights: gw,
            biases: gb,
        })
    }

    pub fn loss_and_grad(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>, loss: Loss) -> Result<(f64, Grads)> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::DimMismatch {
                expected: inputs.nrows(),
                got: targets.nrows(),
            });
        }
        Error::check_dim(self.output_dim(), targets.ncols())?;
        if inputs.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let cache = self.forward_cached(inputs)?;
        match loss {
            Loss::Mse => {
                let batch = inputs.nrows() as f64;
                let resid = cache.output() - &targets;
                let value = resid.iter().map(|r| r * r).sum::<f64>() / batch;
                let grad_out = resid * (2.0 / batch);
                let grads = self.backward(&cache, grad_out.view())?;
                Ok((value, grads))
            }
        }
    }

    /// Binary encoding: magic `FBND`, version, activation code, layer-width
    /// count and widths, then per layer the row-major weights followed by the
    /// bias, all little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.activation.code()])?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for (wl, bl) in self.weights.iter().zip(&self.biases) {
            for v in wl.iter().chain(bl.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic, expected FBND".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = Activation::from_code(act[0])?;
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::ModelFormat(format!("implausible layer count {n}")));
        }
        let dims = (0..n)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut mlp = Mlp::zeros(&dims, activation).map_err(|e| Error::ModelFormat(e.to_string()))?;
        for (wl, bl) in mlp.weights.iter_mut().zip(mlp.biases.iter_mut()) {
            for v in wl.iter_mut().chain(bl.iter_mut()) {
                *v = read_f64(r)?;
            }
        }
        if !mlp.all_finite() {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        Ok(mlp)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Grads,
    v: Grads,
    step: u64,
}

impl AdamState {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Grads::zeros_like(mlp),
            v: Grads::zeros_like(mlp),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Grads) -> Result<()> {
        if !grads.shapes_match(mlp) || !self.m.shapes_match(mlp) {
            return Err(Error::invalid("gradient shapes do not match the network"));
        }
        self.step += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..mlp.weights.len() {
            Zip::from(&mut mlp.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(update);
            Zip::from(&mut mlp.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(update);
        }
        Ok(())
    }
}

/// Minibatch training schedule shared by every learned score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Shuffled minibatch index lists covering `0..n` once.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Gathers the given rows of `data` into a new matrix.
pub fn gather_rows(data: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    data.select(Axis(0), rows)
}

/// Plain supervised MSE regression; returns the mean loss of each epoch.
pub fn fit_mse(
    mlp: &mut Mlp,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::DimMismatch {
            expected: inputs.nrows(),
            got: targets.nrows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(mlp, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in epoch_batches(inputs.nrows(), cfg.batch_size, &mut rng) {
            let x = gather_rows(inputs, &batch);
            let y = gather_rows(targets, &batch);
            let (loss, grads) = mlp.loss_and_grad(x.view(), y.view(), Loss::Mse)?;
            adam.step(mlp, &grads)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        if !mlp.all_finite() {
            return Err(Error::NonFinite("network parameters diverged during training".into()));
        }
        history.push(total / count.max(1) as f64);
    }
    Ok(history)
}

/// Converts a slice of equal-length vectors into a row matrix.
pub fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(rows.len() * ncols);
    for r in rows {
        Error::check_dim(ncols, r.len())?;
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::invalid(e.to_string()))
}

pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
