//! Joint training of the SE/SR graph.
//!
//! Every network gets its own loss gradient. Networks below the top level
//! also get a cross gradient from the level above: SE_ℓ through SR_{ℓ+1}'s
//! input edge, SR_ℓ through the monophone-posterior input of SE_{ℓ+1}. The
//! two are mixed as `(1 − λ)·own + λ·cross` and all networks are updated
//! together from one frozen forward pass.

mod engine;
mod gradcheck;
mod schedule;

use serde::{Deserialize, Serialize};

pub use engine::{
    frame_errors, train_loop, write_reports_csv, EpochReport, Metrics, MetricsAccumulator, Model, TrainOutcome, CSV_HEADER,
};
pub use gradcheck::{grad_check, tiny_spec, Corruption, GradCheckConfig, GradCheckReport, NetworkId, TensorCheck};
pub use schedule::{Decision, Schedule};

use crate::datagen::Batch;
use crate::error::{usage, Result};
use crate::layers::{mse, mse_backward, nll_from_logits, softmax_backward, softmax_nll_backward};
use crate::mlp::{mlp_backward, MlpGrads};
use crate::netgraph::{GraphParams, GraphSpec, GraphTrace};
use crate::numeric::Matrix;

/// Weight of the top level's own gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopLevelScale {
    #[default]
    One,
    OneMinusLambda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub eta0: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub levels: usize,
    pub dropout: f64,
    pub lr_halving_threshold: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub mono_loss_weight: f64,
    pub seed: u64,
    pub top_level_scale: TopLevelScale,
    pub deep_cross_grads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta0: 0.08,
            lambda: 0.1,
            batch_size: 128,
            levels: 3,
            dropout: 0.2,
            lr_halving_threshold: 0.001,
            patience: 4,
            max_epochs: 20,
            mono_loss_weight: 1.0,
            seed: 1,
            top_level_scale: TopLevelScale::One,
            deep_cross_grads: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return usage(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.batch_size < 2 {
            return usage("batch_size must be at least 2 for batch norm");
        }
        if self.patience == 0 || self.max_epochs == 0 || self.levels == 0 {
            return usage("patience, max_epochs and levels must be at least 1");
        }
        if !(self.eta0 > 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return usage("eta0 must be positive and dropout in [0, 1)");
        }
        if !(self.mono_loss_weight >= 0.0) || !(self.lr_halving_threshold >= 0.0) {
            return usage("mono_loss_weight and lr_halving_threshold must be non-negative");
        }
        Ok(())
    }

    pub fn backprop_options(&self) -> BackpropOptions {
        BackpropOptions { mono_loss_weight: self.mono_loss_weight, deep_cross_grads: self.deep_cross_grads }
    }

    pub fn top_scale(&self) -> f64 {
        match self.top_level_scale {
            TopLevelScale::One => 1.0,
            TopLevelScale::OneMinusLambda => 1.0 - self.lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackpropOptions {
    pub mono_loss_weight: f64,
    pub deep_cross_grads: bool,
}

impl Default for BackpropOptions {
    fn default() -> Self {
        BackpropOptions { mono_loss_weight: 1.0, deep_cross_grads: false }
    }
}

/// Per-level losses of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelLosses {
    pub mse: Vec<f64>,
    pub nll_cd: Vec<f64>,
    pub nll_mono: Vec<f64>,
}

impl LevelLosses {
    /// `NLL_cd + α·NLL_mono` at `level`.
    pub fn sr_loss(&self, level: usize, alpha: f64) -> f64 {
        self.nll_cd[level] + alpha * self.nll_mono[level]
    }

    /// Everything trained at `level`: `MSE + NLL_cd + α·NLL_mono`.
    pub fn level_total(&self, level: usize, alpha: f64) -> f64 {
        self.mse[level] + self.sr_loss(level, alpha)
    }
}

fn check_batch(trace: &GraphTrace, batch: &Batch) -> Result<()> {
    let n = trace.rows();
    if batch.cd.len() != n || batch.mono.len() != n || batch.clean.rows() != n {
        return usage(format!("batch of {} targets for a trace of {n} rows", batch.cd.len()));
    }
    if let Some(e) = trace.enhanced.first() {
        if batch.clean.cols() != e.cols() {
            return usage(format!("clean targets have {} columns, SE emits {}", batch.clean.cols(), e.cols()));
        }
    }
    Ok(())
}

pub fn compute_losses(trace: &GraphTrace, batch: &Batch) -> Result<LevelLosses> {
    check_batch(trace, batch)?;
    let levels = trace.levels();
    let mut out = LevelLosses {
        mse: Vec::with_capacity(levels),
        nll_cd: Vec::with_capacity(levels),
        nll_mono: Vec::with_capacity(levels),
    };
    for l in 0..levels {
        out.mse.push(mse(&trace.enhanced[l], &batch.clean)?);
        out.nll_cd.push(nll_from_logits(&trace.sr[l].logits[0], &batch.cd)?);
        out.nll_mono.push(nll_from_logits(&trace.sr[l].logits[1], &batch.mono)?);
    }
    Ok(out)
}

/// Own and cross gradients of every network.
///
/// Cross entries are indexed by the receiving network: `se_cross[ℓ]` comes
/// from SR_{ℓ+1} (and, in residual mode, from MSE_{ℓ+1} through the skip
/// path), `sr_cross[ℓ]` from SE_{ℓ+1}. The top level has none.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub se_own: Vec<MlpGrads>,
    pub sr_own: Vec<MlpGrads>,
    pub se_cross: Vec<Option<MlpGrads>>,
    pub sr_cross: Vec<Option<MlpGrads>>,
}

impl GradientSet {
    pub fn levels(&self) -> usize {
        self.se_own.len()
    }
}

/// Back-propagation through the network for one traced minibatch.
///
/// With `deep_cross_grads` off, the cross gradient of a level-ℓ network is
/// the derivative of level ℓ+1's losses only. With it on, the adjoint keeps
/// flowing down, so the cross gradient is the derivative of the sum of all
/// higher-level losses.
pub fn backprop_through_network(
    trace: &GraphTrace,
    batch: &Batch,
    params: &GraphParams,
    spec: &GraphSpec,
    opts: BackpropOptions,
) -> Result<GradientSet> {
    check_batch(trace, batch)?;
    let levels = spec.levels;
    if trace.levels() != levels || params.levels() != levels {
        return usage("trace, parameters and spec disagree on the number of levels");
    }
    let n = trace.rows();
    let residual = spec.residual;

    let mut dmse = Vec::with_capacity(levels);
    let mut se_own = Vec::with_capacity(levels);
    let mut sr_own = Vec::with_capacity(levels);
    let mut se_in = Vec::with_capacity(levels);
    let mut sr_in = Vec::with_capacity(levels);
    for l in 0..levels {
        let d = mse_backward(&trace.enhanced[l], &batch.clean)?;
        let head = if residual && l >= 1 { d.scale(-1.0) } else { d.clone() };
        let (g, din) = mlp_backward(&[head], &trace.se[l], &params.se[l])?;
        se_own.push(g);
        se_in.push(din);
        dmse.push(d);

        let gcd = softmax_nll_backward(&trace.cd_probs[l], &batch.cd)?;
        let gmono = softmax_nll_backward(&trace.mono_probs[l], &batch.mono)?.scale(opts.mono_loss_weight);
        let (g, din) = mlp_backward(&[gcd, gmono], &trace.sr[l], &params.sr[l])?;
        sr_own.push(g);
        sr_in.push(din);
    }

    let mut se_cross: Vec<Option<MlpGrads>> = vec![None; levels];
    let mut sr_cross: Vec<Option<MlpGrads>> = vec![None; levels];
    // Adjoint of x̂_{SE_ℓ} with respect to all losses above level ℓ (deep mode).
    let mut enh_adjoint: Vec<Option<Matrix>> = vec![None; levels];
    let mono_off = spec.noisy_dim();
    for k in (0..levels.saturating_sub(1)).rev() {
        let j = k + 1;
        let mut a_enh = sr_in[j].clone();
        if residual {
            let mut through = dmse[j].clone();
            if opts.deep_cross_grads {
                if let Some(a) = &enh_adjoint[j] {
                    through = through.add(a)?;
                }
            }
            a_enh = a_enh.add(&through)?;
        }
        let a_mono = se_in[j].columns(mono_off, spec.n_mono)?;

        let head = if residual && k >= 1 { a_enh.scale(-1.0) } else { a_enh.clone() };
        let (g, din) = mlp_backward(&[head], &trace.se[k], &params.se[k])?;
        se_cross[k] = Some(g);
        let dlogits = softmax_backward(&trace.mono_probs[k], &a_mono)?;
        let (g, din_sr) = mlp_backward(&[Matrix::zeros(n, spec.n_cd), dlogits], &trace.sr[k], &params.sr[k])?;
        sr_cross[k] = Some(g);

        if opts.deep_cross_grads {
            se_in[k] = se_in[k].add(&din)?;
            sr_in[k] = sr_in[k].add(&din_sr)?;
            enh_adjoint[k] = Some(a_enh);
        }
    }
    Ok(GradientSet { se_own, sr_own, se_cross, sr_cross })
}

fn mixed(own: &MlpGrads, cross: Option<&MlpGrads>, lambda: f64) -> MlpGrads {
    let mut g = own.scaled(1.0 - lambda);
    if let Some(c) = cross {
        g.axpy(lambda, c);
    }
    g
}

/// Synchronous update of every network from one gradient set.
///
/// Below the top: `θ ← θ − η[(1 − λ)·own + λ·cross]`. At the top:
/// `θ ← θ − η·s·own` with `s` from [`TrainConfig::top_level_scale`].
pub fn apply_updates(
    params: &GraphParams,
    grads: &GradientSet,
    eta: f64,
    lambda: f64,
    top_scale: f64,
) -> Result<GraphParams> {
    let levels = params.levels();
    if grads.levels() != levels {
        return usage("gradient set and parameters disagree on the number of levels");
    }
    if !(0.0..=1.0).contains(&lambda) {
        return usage(format!("lambda {lambda} outside [0, 1]"));
    }
    let mut next = params.clone();
    for l in 0..levels {
        if l + 1 == levels {
            next.se[l].add_scaled(&grads.se_own[l], -eta * top_scale)?;
            next.sr[l].add_scaled(&grads.sr_own[l], -eta * top_scale)?;
        } else {
            next.se[l].add_scaled(&mixed(&grads.se_own[l], grads.se_cross[l].as_ref(), lambda), -eta)?;
            next.sr[l].add_scaled(&mixed(&grads.sr_own[l], grads.sr_cross[l].as_ref(), lambda), -eta)?;
        }
    }
    Ok(next)
}
