//! Finite-difference verification of [`backprop_through_network`].
//!
//! Every trainable scalar of every network is nudged by ±h and the central
//! difference of the matching scalar objective is compared with the analytic
//! own and cross gradients. Dropout is disabled so the objective is a
//! deterministic function of the parameters. Entries whose nudge flips any
//! ReLU input across zero are skipped, since the objective is not
//! differentiable there.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use super::{backprop_through_network, compute_losses, BackpropOptions, GradientSet, LevelLosses};
use crate::datagen::Batch;
use crate::error::Result;
use crate::layers::Mode;
use crate::mlp::{MlpGrads, MlpParams};
use crate::netgraph::{assemble_graph, graph_forward, GraphParams, GraphSpec, GraphTrace};
use crate::numeric::{gaussian, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NetworkId {
    Se(usize),
    Sr(usize),
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkId::Se(l) => write!(f, "SE_{l}"),
            NetworkId::Sr(l) => write!(f, "SR_{l}"),
        }
    }
}

/// Test hook: flips the sign of one analytic gradient tensor before the
/// comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corruption {
    pub network: NetworkId,
    pub tensor: usize,
    pub cross: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    pub rows: usize,
    pub seed: u64,
    /// Batch-norm statistics source: `Eval` freezes them, `Train` uses the
    /// batch.
    pub mode: Mode,
    pub backprop: BackpropOptions,
    pub corrupt: Option<Corruption>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            rows: 8,
            seed: 7,
            mode: Mode::Eval,
            backprop: BackpropOptions::default(),
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub network: NetworkId,
    /// `"own"` or `"cross"`.
    pub term: &'static str,
    pub tensor: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub levels: usize,
    pub residual: bool,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck L={} residual={} : {} entries checked, {} skipped at kinks, max rel err {:.3e} (tol {:.0e}) -> {}",
            self.levels,
            self.residual,
            self.checked,
            self.skipped,
            self.max_rel_err,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for t in &self.tensors {
            writeln!(f, "  {:<6} {:<5} {:<18} {:>5} {:.3e}", t.network, t.term, t.tensor, t.checked, t.max_rel_err)?;
        }
        Ok(())
    }
}

fn network_mut(params: &mut GraphParams, id: NetworkId) -> &mut MlpParams {
    match id {
        NetworkId::Se(l) => &mut params.se[l],
        NetworkId::Sr(l) => &mut params.sr[l],
    }
}

fn analytic(grads: &mut GradientSet, id: NetworkId, cross: bool) -> Option<&mut MlpGrads> {
    match (id, cross) {
        (NetworkId::Se(l), false) => Some(&mut grads.se_own[l]),
        (NetworkId::Sr(l), false) => Some(&mut grads.sr_own[l]),
        (NetworkId::Se(l), true) => grads.se_cross[l].as_mut(),
        (NetworkId::Sr(l), true) => grads.sr_cross[l].as_mut(),
    }
}

fn objectives(losses: &LevelLosses, id: NetworkId, opts: BackpropOptions, levels: usize) -> (f64, Option<f64>) {
    let alpha = opts.mono_loss_weight;
    let (own, l) = match id {
        NetworkId::Se(l) => (losses.mse[l], l),
        NetworkId::Sr(l) => (losses.sr_loss(l, alpha), l),
    };
    let cross = (l + 1 < levels).then(|| {
        if opts.deep_cross_grads {
            (l + 1..levels).map(|j| losses.level_total(j, alpha)).sum()
        } else {
            losses.level_total(l + 1, alpha)
        }
    });
    (own, cross)
}

fn relu_pattern(trace: &GraphTrace) -> Vec<bool> {
    trace
        .se
        .iter()
        .chain(&trace.sr)
        .flat_map(|t| t.relu_inputs())
        .flat_map(|m| m.data().iter().map(|&v| v > 0.0))
        .collect()
}

/// Random but well-conditioned graph, batch and batch-norm state.
fn fixture(spec: &GraphSpec, cfg: &GradCheckConfig) -> Result<(GraphParams, Batch)> {
    let root = RngStream::new(cfg.seed);
    let mut params = assemble_graph(spec, &root.substream("init"))?;
    let mut r = root.substream("perturb");
    for net in params.se.iter_mut().chain(params.sr.iter_mut()) {
        for layer in &mut net.hidden {
            for b in &mut layer.dense.bias {
                *b = 0.1 * r.standard_normal();
            }
            if let Some(bn) = &mut layer.bn {
                for i in 0..bn.dim() {
                    bn.gamma[i] = 1.0 + 0.2 * r.standard_normal();
                    bn.beta[i] = 0.1 * r.standard_normal();
                    bn.running_mean[i] = 0.1 * r.standard_normal();
                    bn.running_var[i] = 0.5 + r.uniform();
                }
            }
        }
        for head in &mut net.heads {
            if head.weight.data().iter().all(|&w| w == 0.0) {
                head.weight.data_mut().iter_mut().for_each(|w| *w = 0.3 * r.standard_normal());
            }
            for b in &mut head.bias {
                *b = 0.1 * r.standard_normal();
            }
        }
    }
    let mut d = root.substream("data");
    let n = cfg.rows;
    let x = gaussian(&mut d, 0.0, 1.0, n, spec.noisy_dim())?;
    let clean = gaussian(&mut d, 0.0, 1.0, n, spec.enhanced_dim())?;
    let cd = (0..n).map(|_| d.below(spec.n_cd)).collect();
    let mono = (0..n).map(|_| d.below(spec.n_mono)).collect();
    Ok((params, Batch { x, clean, cd, mono }))
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic own and cross gradients of every network against
/// central differences on a random batch.
pub fn grad_check(spec: &GraphSpec, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut spec = spec.clone();
    spec.se_dropout = 0.0;
    spec.sr_dropout = 0.0;
    spec.validate()?;
    let (mut params, batch) = fixture(&spec, cfg)?;
    let levels = spec.levels;

    let forward = |p: &GraphParams| -> Result<GraphTrace> { graph_forward(&batch.x, p, &spec, cfg.mode, None) };
    let base = forward(&params)?;
    let base_pattern = relu_pattern(&base);
    let mut grads = backprop_through_network(&base, &batch, &params, &spec, cfg.backprop)?;
    if let Some(c) = cfg.corrupt {
        if let Some(g) = analytic(&mut grads, c.network, c.cross) {
            if let Some(t) = g.tensors.get_mut(c.tensor) {
                t.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }

    let ids: Vec<NetworkId> = (0..levels).flat_map(|l| [NetworkId::Se(l), NetworkId::Sr(l)]).collect();
    let mut tensors = Vec::new();
    for id in ids {
        let names = network_mut(&mut params, id).tensor_names();
        let has_cross = analytic(&mut grads, id, true).is_some();
        let mut own_checks: Vec<TensorCheck> = Vec::new();
        let mut cross_checks: Vec<TensorCheck> = Vec::new();
        for (t, name) in names.iter().enumerate() {
            let mut own = TensorCheck { network: id, term: "own", tensor: name.clone(), checked: 0, skipped: 0, max_rel_err: 0.0 };
            let mut cross = TensorCheck { term: "cross", ..own.clone() };
            let len = network_mut(&mut params, id).tensors()[t].len();
            for i in 0..len {
                let orig = network_mut(&mut params, id).tensors()[t][i];
                let mut eval = |delta: f64| -> Result<(LevelLosses, bool)> {
                    network_mut(&mut params, id).tensors_mut()[t][i] = orig + delta;
                    let tr = forward(&params)?;
                    network_mut(&mut params, id).tensors_mut()[t][i] = orig;
                    Ok((compute_losses(&tr, &batch)?, relu_pattern(&tr) == base_pattern))
                };
                let (plus, ok_p) = eval(cfg.step)?;
                let (minus, ok_m) = eval(-cfg.step)?;
                if !(ok_p && ok_m) {
                    own.skipped += 1;
                    cross.skipped += 1;
                    continue;
                }
                let (op, cp) = objectives(&plus, id, cfg.backprop, levels);
                let (om, cm) = objectives(&minus, id, cfg.backprop, levels);
                let a_own = analytic(&mut grads, id, false).expect("own gradient").tensors[t][i];
                own.max_rel_err = own.max_rel_err.max(rel_err(a_own, (op - om) / (2.0 * cfg.step), cfg.floor));
                own.checked += 1;
                if let (Some(cp), Some(cm), Some(g)) = (cp, cm, analytic(&mut grads, id, true)) {
                    let a = g.tensors[t][i];
                    cross.max_rel_err = cross.max_rel_err.max(rel_err(a, (cp - cm) / (2.0 * cfg.step), cfg.floor));
                    cross.checked += 1;
                }
            }
            own_checks.push(own);
            if has_cross {
                cross_checks.push(cross);
            }
        }
        tensors.extend(own_checks);
        tensors.extend(cross_checks);
    }

    let checked = tensors.iter().map(|t| t.checked).sum();
    let skipped = tensors.iter().map(|t| t.skipped).sum();
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        levels,
        residual: spec.residual,
        tolerance: cfg.tolerance,
        passed: checked > 0 && max_rel_err < cfg.tolerance,
        tensors,
        checked,
        skipped,
        max_rel_err,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// The small graph used for end-to-end checks: D=2, contexts 5→3, M=3,
/// C=6, one hidden layer of 4 units per network.
pub fn tiny_spec(levels: usize, residual: bool) -> GraphSpec {
    GraphSpec {
        levels,
        feat_dim: 2,
        ctx_in: 5,
        ctx_out: 3,
        n_mono: 3,
        n_cd: 6,
        se_hidden: vec![4],
        sr_hidden: vec![4],
        se_dropout: 0.0,
        sr_dropout: 0.0,
        use_batchnorm: true,
        residual,
    }
}
