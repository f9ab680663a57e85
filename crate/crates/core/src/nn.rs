//! Minimal layer set on top of candle with seeded initialisation.
//!
//! candle's CPU device cannot be seeded, so every parameter here is drawn
//! from a ChaCha stream owned by the [`ParamStore`]. Parameters live in the
//! store as [`Var`]s keyed by dotted path; layers hold tensors sharing their
//! storage, so optimizer updates are visible without rebuilding the layer.
//! A frozen store hands out detached tensors, which keeps its parameters out
//! of every autograd graph.

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Module, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub struct ParamStore {
    vars: RefCell<BTreeMap<String, Var>>,
    rng: RefCell<ChaCha8Rng>,
    frozen: bool,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.borrow().len())
            .field("frozen", &self.frozen)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: RefCell::new(BTreeMap::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            frozen: false,
            device: Device::Cpu,
        }
    }

    pub fn root(&self) -> Params<'_> {
        Params {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// All variables in name order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.vars
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vars.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.borrow().is_empty()
    }

    /// Detached copies of every parameter, for snapshots and checkpoints.
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        self.vars
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.as_detached_tensor().copy().expect("cpu copy")))
            .collect()
    }

    /// Inserts (or overwrites) a parameter, e.g. when restoring a checkpoint.
    pub fn insert(&self, name: &str, value: &Tensor) -> Result<()> {
        let mut vars = self.vars.borrow_mut();
        match vars.get(name) {
            Some(var) => {
                if var.dims() != value.dims() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name}: stored shape {:?} does not match {:?}",
                        value.dims(),
                        var.dims()
                    )));
                }
                var.set(&value.to_dtype(DType::F32)?)?;
            }
            None => {
                let var = Var::from_tensor(&value.to_dtype(DType::F32)?.copy()?)?;
                vars.insert(name.to_string(), var);
            }
        }
        Ok(())
    }

    fn get_or_init(&self, name: String, shape: &[usize], bound: f64) -> Result<Tensor> {
        let existing = self.vars.borrow().get(&name).cloned();
        let var = match existing {
            Some(var) => {
                if var.dims() != shape {
                    return Err(Error::Shape(format!(
                        "parameter {name} has shape {:?}, layer expects {shape:?}",
                        var.dims()
                    )));
                }
                var
            }
            None => {
                let n: usize = shape.iter().product();
                let values: Vec<f32> = {
                    let mut rng = self.rng.borrow_mut();
                    (0..n)
                        .map(|_| {
                            if bound == 0.0 {
                                0.0
                            } else {
                                rng.random_range(-bound..bound) as f32
                            }
                        })
                        .collect()
                };
                let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
                self.vars.borrow_mut().insert(name, var.clone());
                var
            }
        };
        Ok(if self.frozen {
            var.as_detached_tensor()
        } else {
            var.as_tensor().clone()
        })
    }
}

/// Path-scoped view into a [`ParamStore`].
#[derive(Clone)]
pub struct Params<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Params<'a> {
    pub fn pp(&self, name: &str) -> Params<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Params {
            store: self.store,
            prefix,
        }
    }

    /// Uniform in `(-bound, bound)`; `bound = 0` gives zeros.
    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        self.store.get_or_init(self.pp(name).prefix, shape, bound)
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(p: Params, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = fan_in_bound(in_dim);
        Ok(Self {
            weight: p.uniform("weight", &[out_dim, in_dim], bound)?,
            bias: p.uniform("bias", &[out_dim], bound)?,
        })
    }

    /// A layer whose weight starts at zero, so its initial output is the bias.
    pub fn zero_weight(p: Params, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: p.uniform("weight", &[out_dim, in_dim], 0.0)?,
            bias: p.uniform("bias", &[out_dim], fan_in_bound(in_dim))?,
        })
    }
}

impl Module for Linear {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let w = self.weight.t()?;
        let ys = match xs.rank() {
            2 => xs.matmul(&w)?,
            _ => xs.broadcast_matmul(&w)?,
        };
        ys.broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        p: Params,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = fan_in_bound(in_ch * kernel * kernel);
        Ok(Self {
            weight: p.uniform("weight", &[out_ch, in_ch, kernel, kernel], bound)?,
            bias: p.uniform("bias", &[out_ch], bound)?,
            stride,
            padding,
        })
    }
}

impl Module for Conv2d {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let out_ch = self.bias.dims()[0];
        xs.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
            .broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(p: Params, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: p.uniform("table", &[vocab, dim], 1.0)?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.dims()[0]
    }

    /// `ids` is `(B, T)` u32; returns `(B, T, dim)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let dim = self.table.dims()[1];
        let flat = self.table.index_select(&ids.flatten_all()?, 0)?;
        Ok(flat.reshape((b, t, dim))?)
    }
}

/// One LSTM direction with gates in `i, f, g, o` order.
#[derive(Debug, Clone)]
pub struct Lstm {
    input: Linear,
    hidden: Tensor,
    hidden_dim: usize,
}

impl Lstm {
    pub fn new(p: Params, in_dim: usize, hidden_dim: usize) -> Result<Self> {
        let bound = fan_in_bound(hidden_dim);
        Ok(Self {
            input: Linear::new(p.pp("input"), in_dim, 4 * hidden_dim)?,
            hidden: p.uniform("hidden.weight", &[4 * hidden_dim, hidden_dim], bound)?,
            hidden_dim,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Runs over `(B, T, in)` inputs with a `(B, T)` 0/1 mask. Masked steps
    /// carry the previous state through unchanged, so padding never touches
    /// the state. Returns per-step hidden states `(B, T, h)` (zero at masked
    /// steps) and the final hidden state `(B, h)`.
    pub fn run(&self, xs: &Tensor, mask: &Tensor, reverse: bool) -> Result<(Tensor, Tensor)> {
        let (b, t, _) = xs.dims3()?;
        let h_dim = self.hidden_dim;
        let projected = self.input.forward(xs)?;
        let mut h = Tensor::zeros((b, h_dim), xs.dtype(), xs.device())?;
        let mut c = h.clone();
        let mut outputs: Vec<Tensor> = vec![h.clone(); t];
        let hidden_t = self.hidden.t()?;
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for step in order {
            let m = mask.narrow(1, step, 1)?;
            let gates = (projected.narrow(1, step, 1)?.squeeze(1)? + h.matmul(&hidden_t)?)?;
            let gi = candle_nn::ops::sigmoid(&gates.narrow(1, 0, h_dim)?)?;
            let gf = candle_nn::ops::sigmoid(&gates.narrow(1, h_dim, h_dim)?)?;
            let gg = gates.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let go = candle_nn::ops::sigmoid(&gates.narrow(1, 3 * h_dim, h_dim)?)?;
            let c_new = ((gf * &c)? + (gi * gg)?)?;
            let h_new = (go * c_new.tanh()?)?;
            c = (&c + (c_new - &c)?.broadcast_mul(&m)?)?;
            h = (&h + (h_new - &h)?.broadcast_mul(&m)?)?;
            outputs[step] = h.broadcast_mul(&m)?;
        }
        Ok((Tensor::stack(&outputs, 1)?, h))
    }
}

/// Leaky ReLU with slope 0.2, as `0.2 x + 0.8 relu(x)` (cheaper backward
/// than candle's op).
pub fn leaky_relu(xs: &Tensor) -> Result<Tensor> {
    Ok(((xs * 0.2)? + (xs.relu()? * 0.8)?)?)
}

/// Row-wise cosine similarity matrix of `(A, d)` and `(B, d)`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let an = a.broadcast_div(&a.sqr()?.sum_keepdim(D::Minus1)?.clamp(1e-16, f64::MAX)?.sqrt()?)?;
    let bn = b.broadcast_div(&b.sqr()?.sum_keepdim(D::Minus1)?.clamp(1e-16, f64::MAX)?.sqrt()?)?;
    Ok(an.matmul(&bn.t()?)?)
}

/// Mean cross-entropy of `logits` rows against the diagonal targets.
pub fn diagonal_cross_entropy(logits: &Tensor) -> Result<Tensor> {
    let n = logits.dims()[0];
    let lp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let idx = Tensor::from_vec((0..n as u32).collect::<Vec<_>>(), (n, 1), logits.device())?;
    Ok(lp.gather(&idx, 1)?.mean_all()?.neg()?)
}

/// Binary cross-entropy on logits, mean over the batch.
pub fn bce_with_logits(logits: &Tensor, target: f64) -> Result<Tensor> {
    // softplus(x) - t * x, written stably as max(x, 0) - t x + log(1 + exp(-|x|))
    let relu = logits.relu()?;
    let soft = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    let loss = ((relu - (logits * target)?)? + soft)?;
    Ok(loss.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed, named parameter list. Moments are exposed so they can
/// be checkpointed.
#[derive(Debug)]
pub struct Adam {
    params: Vec<(String, Var)>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    config: AdamConfig,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, config: AdamConfig) -> Result<Self> {
        let zeros = |v: &Var| Tensor::zeros(v.shape(), v.dtype(), v.device());
        let first = params.iter().map(|(_, v)| zeros(v)).collect::<candle_core::Result<_>>()?;
        let second = params.iter().map(|(_, v)| zeros(v)).collect::<candle_core::Result<_>>()?;
        Ok(Self {
            params,
            first,
            second,
            step: 0,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var) else { continue };
            let g = g.detach();
            let m = ((&self.first[k] * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            let v = ((&self.second[k] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let update = ((&m / bias1)? / ((&v / bias2)?.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.first[k] = m;
            self.second[k] = v;
        }
        Ok(())
    }

    /// Moment tensors named `<prefix>.m.<param>` / `<prefix>.v.<param>`.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.params.len());
        for (k, (name, _)) in self.params.iter().enumerate() {
            out.push((format!("{prefix}.m.{name}"), self.first[k].clone()));
            out.push((format!("{prefix}.v.{name}"), self.second[k].clone()));
        }
        out
    }

    pub fn load_state(
        &mut self,
        prefix: &str,
        tensors: &BTreeMap<String, Tensor>,
        step: u64,
    ) -> Result<()> {
        for (k, (name, var)) in self.params.iter().enumerate() {
            for (slot, tag) in [(&mut self.first[k], "m"), (&mut self.second[k], "v")] {
                let key = format!("{prefix}.{tag}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {key}")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!("optimizer state {key} has wrong shape")));
                }
                *slot = t.clone();
            }
        }
        self.step = step;
        Ok(())
    }
}
