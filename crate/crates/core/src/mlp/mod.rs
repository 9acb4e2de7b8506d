//! One feed-forward DNN: a stack of hidden blocks (dense → batch norm → ReLU →
//! dropout) followed by zero or more output heads attached to the last hidden
//! layer.
//!
//! An MLP without heads is a plain feature extractor: its single output is the
//! last hidden activation. The multitask baseline uses this for its shared
//! trunk.

mod io;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::layers::{
    batchnorm, batchnorm_backward, dense, dense_backward, dropout, dropout_backward, relu, relu_backward,
    softmax, BatchNormCache, BatchNormParams, DenseCache, DenseParams, DropoutCache, Mode, ReluCache,
    RunningStats,
};
use crate::numeric::{glorot_init, Matrix, RngStream};

pub use io::{mlp_from_bytes, mlp_to_bytes, read_mlp, write_mlp, MLP_MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
    pub kind: HeadKind,
}

impl HeadSpec {
    pub fn new(name: &str, dim: usize, kind: HeadKind) -> Self {
        HeadSpec { name: name.to_owned(), dim, kind }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub heads: Vec<HeadSpec>,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return usage("mlp: input_dim must be at least 1");
        }
        if self.hidden_dims.is_empty() {
            return usage("mlp: at least one hidden layer is required");
        }
        if self.hidden_dims.contains(&0) {
            return usage("mlp: hidden layer of width 0");
        }
        if let Some(h) = self.heads.iter().find(|h| h.dim == 0) {
            return usage(format!("mlp: head '{}' has dimension 0", h.name));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return usage(format!("mlp: dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn last_hidden(&self) -> usize {
        *self.hidden_dims.last().expect("validated spec has hidden layers")
    }

    /// Width of each output: one per head, or the last hidden width when
    /// there are no heads.
    pub fn output_dims(&self) -> Vec<usize> {
        if self.heads.is_empty() {
            vec![self.last_hidden()]
        } else {
            self.heads.iter().map(|h| h.dim).collect()
        }
    }

    /// Number of stored scalars, batch-norm running statistics included.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            total += prev * h + h;
            if self.use_batchnorm {
                total += 4 * h;
            }
            prev = h;
        }
        total + self.heads.iter().map(|hd| prev * hd.dim + hd.dim).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    pub dense: DenseParams,
    pub bn: Option<BatchNormParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    pub hidden: Vec<HiddenLayer>,
    pub heads: Vec<DenseParams>,
    /// Bumped by every parameter update; traces remember the version they saw.
    version: u64,
}

fn dense_init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Result<DenseParams> {
    Ok(DenseParams { weight: glorot_init(fan_in, fan_out, rng)?, bias: vec![0.0; fan_out] })
}

/// Glorot weights, zero biases, identity batch norm.
pub fn build_mlp(spec: &MlpSpec, rng: &mut RngStream) -> Result<MlpParams> {
    spec.validate()?;
    let mut hidden = Vec::with_capacity(spec.hidden_dims.len());
    let mut prev = spec.input_dim;
    for &h in &spec.hidden_dims {
        hidden.push(HiddenLayer {
            dense: dense_init(prev, h, rng)?,
            bn: spec.use_batchnorm.then(|| BatchNormParams::new(h)),
        });
        prev = h;
    }
    let heads = spec.heads.iter().map(|hd| dense_init(prev, hd.dim, rng)).collect::<Result<_>>()?;
    Ok(MlpParams { spec: spec.clone(), hidden, heads, version: 0 })
}

impl MlpParams {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Total stored scalars, counted from the actual allocations.
    pub fn allocated_len(&self) -> usize {
        let hidden: usize = self
            .hidden
            .iter()
            .map(|l| {
                l.dense.weight.len()
                    + l.dense.bias.len()
                    + l.bn.as_ref().map_or(0, |b| {
                        b.gamma.len() + b.beta.len() + b.running_mean.len() + b.running_var.len()
                    })
            })
            .sum();
        hidden + self.heads.iter().map(|h| h.weight.len() + h.bias.len()).sum::<usize>()
    }

    /// Names of the trainable tensors in update order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            names.push(format!("hidden{i}.weight"));
            names.push(format!("hidden{i}.bias"));
            if l.bn.is_some() {
                names.push(format!("hidden{i}.gamma"));
                names.push(format!("hidden{i}.beta"));
            }
        }
        for h in &self.spec.heads {
            names.push(format!("{}.weight", h.name));
            names.push(format!("{}.bias", h.name));
        }
        names
    }

    /// Trainable tensors (no running statistics) in update order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.hidden {
            out.push(l.dense.weight.data());
            out.push(&l.dense.bias);
            if let Some(bn) = &l.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        for h in &self.heads {
            out.push(h.weight.data());
            out.push(&h.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.hidden {
            out.push(l.dense.weight.data_mut());
            out.push(&mut l.dense.bias);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        for h in &mut self.heads {
            out.push(h.weight.data_mut());
            out.push(&mut h.bias);
        }
        out
    }

    /// `θ += alpha · g` for every trainable tensor; running statistics are
    /// left alone.
    pub fn add_scaled(&mut self, grads: &MlpGrads, alpha: f64) -> Result<()> {
        self.check_grads(grads)?;
        for (t, g) in self.tensors_mut().into_iter().zip(&grads.tensors) {
            for (p, d) in t.iter_mut().zip(g) {
                *p += alpha * d;
            }
        }
        self.version += 1;
        Ok(())
    }

    fn check_grads(&self, grads: &MlpGrads) -> Result<()> {
        let ok = grads.tensors.len() == self.tensors().len()
            && self.tensors().iter().zip(&grads.tensors).all(|(t, g)| t.len() == g.len());
        if !ok {
            return usage("gradient tensors do not match parameter shapes");
        }
        Ok(())
    }

    /// Copies the running statistics a train-mode forward pass produced.
    pub fn commit_running_stats(&mut self, trace: &ForwardTrace) -> Result<()> {
        if trace.running.len() != self.hidden.len() {
            return usage("trace does not belong to this network");
        }
        for (layer, rs) in self.hidden.iter_mut().zip(&trace.running) {
            if let (Some(bn), Some(rs)) = (&mut layer.bn, rs) {
                bn.running_mean.clone_from(&rs.mean);
                bn.running_var.clone_from(&rs.var);
            }
        }
        Ok(())
    }
}

/// Gradients aligned with [`MlpParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads { tensors: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn axpy(&mut self, alpha: f64, other: &MlpGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> MlpGrads {
        MlpGrads { tensors: self.tensors.iter().map(|t| t.iter().map(|x| x * s).collect()).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Clone, Debug)]
struct HiddenCache {
    dense: DenseCache,
    bn: Option<BatchNormCache>,
    relu: ReluCache,
    dropout: DropoutCache,
}

/// Everything one forward pass cached for its backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    version: u64,
    rows: usize,
    mode: Mode,
    hidden: Vec<HiddenCache>,
    running: Vec<Option<RunningStats>>,
    heads: Vec<DenseCache>,
    /// Head pre-activations (logits for softmax heads).
    pub logits: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Inputs of every ReLU, in layer order.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Matrix> {
        self.hidden.iter().map(|h| h.relu.pre_activation())
    }
}

/// Runs the network. Returns one output per head (probabilities for softmax
/// heads, raw values for linear heads) and the trace for [`mlp_backward`].
///
/// Train mode draws dropout masks from `rng`; eval mode is deterministic and
/// needs no stream.
pub fn mlp_forward(
    x: &Matrix,
    params: &MlpParams,
    mode: Mode,
    mut rng: Option<&mut RngStream>,
) -> Result<(Vec<Matrix>, ForwardTrace)> {
    let spec = &params.spec;
    if x.cols() != spec.input_dim {
        return usage(format!("mlp_forward: input has {} columns, network expects {}", x.cols(), spec.input_dim));
    }
    let mut hidden = Vec::with_capacity(params.hidden.len());
    let mut running = Vec::with_capacity(params.hidden.len());
    let mut h = x.clone();
    for layer in &params.hidden {
        let (z, dense_cache) = dense(&h, &layer.dense)?;
        let (z, bn_cache) = match &layer.bn {
            Some(bn) => {
                let (y, cache, rs) = batchnorm(&z, bn, mode)?;
                running.push(Some(rs));
                (y, Some(cache))
            }
            None => {
                running.push(None);
                (z, None)
            }
        };
        let (a, relu_cache) = relu(&z);
        let (a, dropout_cache) = dropout(&a, spec.dropout_rate, mode, rng.as_deref_mut())?;
        hidden.push(HiddenCache { dense: dense_cache, bn: bn_cache, relu: relu_cache, dropout: dropout_cache });
        h = a;
    }
    let mut outputs = Vec::with_capacity(params.heads.len().max(1));
    let mut logits = Vec::with_capacity(params.heads.len());
    let mut head_caches = Vec::with_capacity(params.heads.len());
    if params.heads.is_empty() {
        outputs.push(h);
    } else {
        for (head, hs) in params.heads.iter().zip(&spec.heads) {
            let (z, cache) = dense(&h, head)?;
            outputs.push(match hs.kind {
                HeadKind::Linear => z.clone(),
                HeadKind::Softmax => softmax(&z),
            });
            logits.push(z);
            head_caches.push(cache);
        }
    }
    let trace = ForwardTrace {
        version: params.version,
        rows: x.rows(),
        mode,
        hidden,
        running,
        heads: head_caches,
        logits,
    };
    Ok((outputs, trace))
}

/// Back-propagates head gradients through the whole network.
///
/// `head_grads` holds one gradient per head with respect to the head's
/// pre-activation (logits for softmax heads); for a headless network it holds
/// the gradient on the last hidden activation. Gradients of several heads sum
/// where they meet at the last hidden layer. Returns the parameter gradients
/// and `∂L/∂input`.
pub fn mlp_backward(head_grads: &[Matrix], trace: &ForwardTrace, params: &MlpParams) -> Result<(MlpGrads, Matrix)> {
    if trace.version != params.version || trace.hidden.len() != params.hidden.len() {
        return usage("mlp_backward: trace is stale or belongs to another network");
    }
    let dims = params.spec.output_dims();
    if head_grads.len() != dims.len() {
        return usage(format!("mlp_backward: {} head gradients for {} outputs", head_grads.len(), dims.len()));
    }
    for (g, &d) in head_grads.iter().zip(&dims) {
        if g.shape() != (trace.rows, d) {
            return usage(format!(
                "mlp_backward: head gradient {}x{} vs expected {}x{}",
                g.rows(),
                g.cols(),
                trace.rows,
                d
            ));
        }
    }

    let mut head_tensors = Vec::with_capacity(2 * params.heads.len());
    let mut dh = if params.heads.is_empty() {
        head_grads[0].clone()
    } else {
        let mut acc = Matrix::zeros(trace.rows, params.spec.last_hidden());
        for ((g, cache), head) in head_grads.iter().zip(&trace.heads).zip(&params.heads) {
            let (dx, grads) = dense_backward(g, cache, head)?;
            acc.axpy(1.0, &dx)?;
            head_tensors.push(grads.weight.into_vec());
            head_tensors.push(grads.bias);
        }
        acc
    };

    let mut layer_tensors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(params.hidden.len());
    for (layer, cache) in params.hidden.iter().zip(&trace.hidden).rev() {
        let g = dropout_backward(&dh, &cache.dropout)?;
        let g = relu_backward(&g, &cache.relu)?;
        let mut tensors = Vec::with_capacity(4);
        let (g, bn_grads) = match (&layer.bn, &cache.bn) {
            (Some(bn), Some(bc)) => {
                let (dx, dgamma, dbeta) = batchnorm_backward(&g, bc, bn)?;
                (dx, Some((dgamma, dbeta)))
            }
            (None, None) => (g, None),
            _ => return usage("mlp_backward: batch-norm layout mismatch"),
        };
        let (dx, dense_grads) = dense_backward(&g, &cache.dense, &layer.dense)?;
        tensors.push(dense_grads.weight.into_vec());
        tensors.push(dense_grads.bias);
        if let Some((dgamma, dbeta)) = bn_grads {
            tensors.push(dgamma);
            tensors.push(dbeta);
        }
        layer_tensors.push(tensors);
        dh = dx;
    }
    let mut all: Vec<Vec<f64>> = layer_tensors.into_iter().rev().flatten().collect();
    all.extend(head_tensors);
    Ok((MlpGrads { tensors: all }, dh))
}

/// `θ' = θ − eta · g` for every trainable tensor.
pub fn sgd_step(params: &MlpParams, grads: &MlpGrads, eta: f64) -> Result<MlpParams> {
    if !(eta > 0.0) {
        return usage(format!("sgd_step: learning rate {eta} must be positive"));
    }
    let mut next = params.clone();
    next.add_scaled(grads, -eta)?;
    Ok(next)
}
