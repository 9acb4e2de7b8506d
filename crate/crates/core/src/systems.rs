//! The five compared systems behind one [`Model`] interface.
//!
//! * `single-dnn`: one recognizer on the central `ctx_out` noisy frames.
//! * `multitask`: a shared trunk on the full noisy window feeding an
//!   enhancement branch and a recognition branch; losses are summed.
//! * `joint-se-sr`: an enhancer feeding a recognizer, with a λ-weighted share
//!   of the recognizer's gradient flowing back into the enhancer.
//! * `netdnn` / `netdnn-residual`: the full multi-level graph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datagen::{Batch, WindowedSet};
use crate::error::{format_err, usage, Error, Result};
use crate::layers::{mse, mse_backward, nll_from_logits, softmax_nll_backward, Mode};
use crate::mlp::{build_mlp, mlp_backward, mlp_forward, HeadKind, HeadSpec, MlpGrads, MlpParams, MlpSpec};
use crate::netgraph::{
    assemble_graph, decode, graph_forward, GraphParams, GraphRngs, GraphSpec, GraphTrace,
};
use crate::numeric::{Matrix, RngStream};
use crate::trainer::{
    apply_updates, backprop_through_network, compute_losses, frame_errors, Metrics, Model, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    SingleDnn,
    Multitask,
    JointSeSr,
    Netdnn,
    NetdnnResidual,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] =
        [SystemKind::SingleDnn, SystemKind::Multitask, SystemKind::JointSeSr, SystemKind::Netdnn, SystemKind::NetdnnResidual];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::SingleDnn => "single-dnn",
            SystemKind::Multitask => "multitask",
            SystemKind::JointSeSr => "joint-se-sr",
            SystemKind::Netdnn => "netdnn",
            SystemKind::NetdnnResidual => "netdnn-residual",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown system '{s}'")))
    }
}

/// Network shape shared by every system, so comparisons hold the per-network
/// budget fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub ctx_in: usize,
    pub ctx_out: usize,
    pub use_batchnorm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { hidden: vec![128; 3], ctx_in: 21, ctx_out: 11, use_batchnorm: true }
    }
}

/// Sizes fixed by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataDims {
    pub feat_dim: usize,
    pub n_mono: usize,
    pub n_cd: usize,
}

impl DataDims {
    pub fn of(set: &WindowedSet) -> Self {
        DataDims { feat_dim: set.feat_dim(), n_mono: set.n_mono(), n_cd: set.n_cd() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    kind: SystemKind,
    arch: ArchConfig,
    dims: DataDims,
    train: TrainConfig,
}

fn cd_metrics(mse_value: Option<f64>, cd_logits: &Matrix, cd_probs: &Matrix, cd: &[usize]) -> Result<Metrics> {
    Ok(Metrics {
        mse: mse_value,
        nll_cd: nll_from_logits(cd_logits, cd)?,
        nll_mono: None,
        fer: frame_errors(&cd_probs.argmax_rows(), cd),
        mono_fer: None,
    })
}

fn cd_recognizer(arch: &ArchConfig, dims: DataDims, dropout: f64) -> MlpSpec {
    MlpSpec {
        input_dim: arch.ctx_out * dims.feat_dim,
        hidden_dims: arch.hidden.clone(),
        heads: vec![HeadSpec::new("cd", dims.n_cd, HeadKind::Softmax)],
        dropout_rate: dropout,
        use_batchnorm: arch.use_batchnorm,
    }
}

fn se_spec(arch: &ArchConfig, dims: DataDims, dropout: f64) -> MlpSpec {
    MlpSpec {
        input_dim: arch.ctx_in * dims.feat_dim,
        hidden_dims: arch.hidden.clone(),
        heads: vec![HeadSpec::new("enh", arch.ctx_out * dims.feat_dim, HeadKind::Linear)],
        dropout_rate: dropout,
        use_batchnorm: arch.use_batchnorm,
    }
}

fn center(x: &Matrix, arch: &ArchConfig, feat_dim: usize) -> Result<Matrix> {
    x.columns((arch.ctx_in - arch.ctx_out) / 2 * feat_dim, arch.ctx_out * feat_dim)
}

fn sgd(params: &mut MlpParams, grads: &MlpGrads, eta: f64) -> Result<()> {
    params.add_scaled(grads, -eta)
}

/// Recognizer on the central `ctx_out` noisy frames, cd head only.
#[derive(Clone, Debug)]
pub struct SingleDnn {
    meta: Meta,
    pub net: MlpParams,
    rng: RngStream,
}

impl SingleDnn {
    fn new(meta: Meta, root: &RngStream) -> Result<Self> {
        let spec = cd_recognizer(&meta.arch, meta.dims, meta.train.dropout);
        let net = build_mlp(&spec, &mut root.substream("init").substream("sr"))?;
        Ok(SingleDnn { net, rng: root.substream("dropout").substream("sr"), meta })
    }
}

impl Model for SingleDnn {
    fn train_step(&mut self, batch: &Batch, eta: f64) -> Result<Vec<Metrics>> {
        let x = center(&batch.x, &self.meta.arch, self.meta.dims.feat_dim)?;
        let (out, trace) = mlp_forward(&x, &self.net, Mode::Train, Some(&mut self.rng))?;
        let m = cd_metrics(None, &trace.logits[0], &out[0], &batch.cd)?;
        self.net.commit_running_stats(&trace)?;
        let (g, _) = mlp_backward(&[softmax_nll_backward(&out[0], &batch.cd)?], &trace, &self.net)?;
        sgd(&mut self.net, &g, eta)?;
        Ok(vec![m])
    }

    fn eval_batch(&self, batch: &Batch) -> Result<Vec<Metrics>> {
        let x = center(&batch.x, &self.meta.arch, self.meta.dims.feat_dim)?;
        let (out, trace) = mlp_forward(&x, &self.net, Mode::Eval, None)?;
        Ok(vec![cd_metrics(None, &trace.logits[0], &out[0], &batch.cd)?])
    }

    fn checkpoint(&self) -> Checkpoint {
        checkpoint_of(&self.meta, vec![("sr".into(), self.net.clone())])
    }
}

/// Shared trunk (first ⌈H/2⌉ hidden layers) with an enhancement branch and a
/// recognition branch (the remaining layers each).
#[derive(Clone, Debug)]
pub struct Multitask {
    meta: Meta,
    pub trunk: MlpParams,
    pub se: MlpParams,
    pub sr: MlpParams,
    rngs: [RngStream; 3],
}

fn multitask_specs(arch: &ArchConfig, dims: DataDims, dropout: f64) -> Result<[MlpSpec; 3]> {
    let h = arch.hidden.len();
    if h < 2 {
        return usage("multitask needs at least two hidden layers to split");
    }
    let shared = h.div_ceil(2);
    let trunk = MlpSpec {
        input_dim: arch.ctx_in * dims.feat_dim,
        hidden_dims: arch.hidden[..shared].to_vec(),
        heads: vec![],
        dropout_rate: dropout,
        use_batchnorm: arch.use_batchnorm,
    };
    let width = arch.hidden[shared - 1];
    let branch = |heads| MlpSpec {
        input_dim: width,
        hidden_dims: arch.hidden[shared..].to_vec(),
        heads,
        dropout_rate: dropout,
        use_batchnorm: arch.use_batchnorm,
    };
    Ok([
        trunk,
        branch(vec![HeadSpec::new("enh", arch.ctx_out * dims.feat_dim, HeadKind::Linear)]),
        branch(vec![HeadSpec::new("cd", dims.n_cd, HeadKind::Softmax)]),
    ])
}

impl Multitask {
    fn new(meta: Meta, root: &RngStream) -> Result<Self> {
        let [t, e, r] = multitask_specs(&meta.arch, meta.dims, meta.train.dropout)?;
        let init = root.substream("init");
        let drop = root.substream("dropout");
        Ok(Multitask {
            trunk: build_mlp(&t, &mut init.substream("trunk"))?,
            se: build_mlp(&e, &mut init.substream("se"))?,
            sr: build_mlp(&r, &mut init.substream("sr"))?,
            rngs: [drop.substream("trunk"), drop.substream("se"), drop.substream("sr")],
            meta,
        })
    }
}

impl Model for Multitask {
    fn train_step(&mut self, batch: &Batch, eta: f64) -> Result<Vec<Metrics>> {
        let [rt, re, rr] = &mut self.rngs;
        let (h, tt) = mlp_forward(&batch.x, &self.trunk, Mode::Train, Some(rt))?;
        let (enh, te) = mlp_forward(&h[0], &self.se, Mode::Train, Some(re))?;
        let (cd, tr) = mlp_forward(&h[0], &self.sr, Mode::Train, Some(rr))?;
        let m = cd_metrics(Some(mse(&enh[0], &batch.clean)?), &tr.logits[0], &cd[0], &batch.cd)?;
        self.trunk.commit_running_stats(&tt)?;
        self.se.commit_running_stats(&te)?;
        self.sr.commit_running_stats(&tr)?;
        let (ge, dh_e) = mlp_backward(&[mse_backward(&enh[0], &batch.clean)?], &te, &self.se)?;
        let (gr, dh_r) = mlp_backward(&[softmax_nll_backward(&cd[0], &batch.cd)?], &tr, &self.sr)?;
        let (gt, _) = mlp_backward(&[dh_e.add(&dh_r)?], &tt, &self.trunk)?;
        sgd(&mut self.trunk, &gt, eta)?;
        sgd(&mut self.se, &ge, eta)?;
        sgd(&mut self.sr, &gr, eta)?;
        Ok(vec![m])
    }

    fn eval_batch(&self, batch: &Batch) -> Result<Vec<Metrics>> {
        let (h, _) = mlp_forward(&batch.x, &self.trunk, Mode::Eval, None)?;
        let (enh, _) = mlp_forward(&h[0], &self.se, Mode::Eval, None)?;
        let (cd, tr) = mlp_forward(&h[0], &self.sr, Mode::Eval, None)?;
        Ok(vec![cd_metrics(Some(mse(&enh[0], &batch.clean)?), &tr.logits[0], &cd[0], &batch.cd)?])
    }

    fn checkpoint(&self) -> Checkpoint {
        checkpoint_of(
            &self.meta,
            vec![("trunk".into(), self.trunk.clone()), ("se".into(), self.se.clone()), ("sr".into(), self.sr.clone())],
        )
    }
}

/// Enhancer followed by a cd recognizer. The enhancer steps along
/// `(1 − λ)·∂MSE + λ·∂NLL`; the recognizer along its own gradient.
#[derive(Clone, Debug)]
pub struct JointSeSr {
    meta: Meta,
    pub se: MlpParams,
    pub sr: MlpParams,
    rngs: [RngStream; 2],
}

impl JointSeSr {
    fn new(meta: Meta, root: &RngStream) -> Result<Self> {
        let e = se_spec(&meta.arch, meta.dims, meta.train.dropout);
        let r = cd_recognizer(&meta.arch, meta.dims, meta.train.dropout);
        let init = root.substream("init");
        let drop = root.substream("dropout");
        Ok(JointSeSr {
            se: build_mlp(&e, &mut init.substream("se"))?,
            sr: build_mlp(&r, &mut init.substream("sr"))?,
            rngs: [drop.substream("se"), drop.substream("sr")],
            meta,
        })
    }

    /// `(∂MSE/∂θ_SE, ∂NLL/∂θ_SE, ∂NLL/∂θ_SR)` for one batch, plus metrics.
    pub fn gradients(&mut self, batch: &Batch) -> Result<(MlpGrads, MlpGrads, MlpGrads, Metrics)> {
        let [rs, rr] = &mut self.rngs;
        let (enh, te) = mlp_forward(&batch.x, &self.se, Mode::Train, Some(rs))?;
        let (cd, tr) = mlp_forward(&enh[0], &self.sr, Mode::Train, Some(rr))?;
        let m = cd_metrics(Some(mse(&enh[0], &batch.clean)?), &tr.logits[0], &cd[0], &batch.cd)?;
        self.se.commit_running_stats(&te)?;
        self.sr.commit_running_stats(&tr)?;
        let (g_sr, d_enh) = mlp_backward(&[softmax_nll_backward(&cd[0], &batch.cd)?], &tr, &self.sr)?;
        let (g_mse, _) = mlp_backward(&[mse_backward(&enh[0], &batch.clean)?], &te, &self.se)?;
        let (g_nll, _) = mlp_backward(&[d_enh], &te, &self.se)?;
        Ok((g_mse, g_nll, g_sr, m))
    }
}

impl Model for JointSeSr {
    fn train_step(&mut self, batch: &Batch, eta: f64) -> Result<Vec<Metrics>> {
        let (g_mse, g_nll, g_sr, m) = self.gradients(batch)?;
        let lambda = self.meta.train.lambda;
        let mut g_se = g_mse.scaled(1.0 - lambda);
        g_se.axpy(lambda, &g_nll);
        sgd(&mut self.se, &g_se, eta)?;
        sgd(&mut self.sr, &g_sr, eta)?;
        Ok(vec![m])
    }

    fn eval_batch(&self, batch: &Batch) -> Result<Vec<Metrics>> {
        let (enh, _) = mlp_forward(&batch.x, &self.se, Mode::Eval, None)?;
        let (cd, tr) = mlp_forward(&enh[0], &self.sr, Mode::Eval, None)?;
        Ok(vec![cd_metrics(Some(mse(&enh[0], &batch.clean)?), &tr.logits[0], &cd[0], &batch.cd)?])
    }

    fn checkpoint(&self) -> Checkpoint {
        checkpoint_of(&self.meta, vec![("se".into(), self.se.clone()), ("sr".into(), self.sr.clone())])
    }
}

/// The multi-level graph trained by back-propagation through the network.
#[derive(Clone, Debug)]
pub struct NetDnn {
    meta: Meta,
    pub spec: GraphSpec,
    pub params: GraphParams,
    rngs: GraphRngs,
}

fn graph_spec(meta: &Meta) -> GraphSpec {
    GraphSpec {
        levels: meta.train.levels,
        feat_dim: meta.dims.feat_dim,
        ctx_in: meta.arch.ctx_in,
        ctx_out: meta.arch.ctx_out,
        n_mono: meta.dims.n_mono,
        n_cd: meta.dims.n_cd,
        se_hidden: meta.arch.hidden.clone(),
        sr_hidden: meta.arch.hidden.clone(),
        se_dropout: meta.train.dropout,
        sr_dropout: meta.train.dropout,
        use_batchnorm: meta.arch.use_batchnorm,
        residual: meta.kind == SystemKind::NetdnnResidual,
    }
}

impl NetDnn {
    fn new(meta: Meta, root: &RngStream) -> Result<Self> {
        let spec = graph_spec(&meta);
        let params = assemble_graph(&spec, &root.substream("init"))?;
        let rngs = GraphRngs::new(&root.substream("dropout"), spec.levels);
        Ok(NetDnn { meta, spec, params, rngs })
    }

    fn metrics(&self, trace: &GraphTrace, batch: &Batch) -> Result<Vec<Metrics>> {
        let losses = compute_losses(trace, batch)?;
        (0..self.spec.levels)
            .map(|l| {
                Ok(Metrics {
                    mse: Some(losses.mse[l]),
                    nll_cd: losses.nll_cd[l],
                    nll_mono: Some(losses.nll_mono[l]),
                    fer: frame_errors(&decode(trace, l)?, &batch.cd),
                    mono_fer: Some(frame_errors(&trace.mono_probs[l].argmax_rows(), &batch.mono)),
                })
            })
            .collect()
    }
}

impl Model for NetDnn {
    fn train_step(&mut self, batch: &Batch, eta: f64) -> Result<Vec<Metrics>> {
        let trace = graph_forward(&batch.x, &self.params, &self.spec, Mode::Train, Some(&mut self.rngs))?;
        let m = self.metrics(&trace, batch)?;
        self.params.commit_running_stats(&trace)?;
        let t = &self.meta.train;
        let grads = backprop_through_network(&trace, batch, &self.params, &self.spec, t.backprop_options())?;
        self.params = apply_updates(&self.params, &grads, eta, t.lambda, t.top_scale())?;
        Ok(m)
    }

    fn eval_batch(&self, batch: &Batch) -> Result<Vec<Metrics>> {
        let trace = graph_forward(&batch.x, &self.params, &self.spec, Mode::Eval, None)?;
        self.metrics(&trace, batch)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.params.to_checkpoint(&self.spec);
        ck.system = self.meta.kind.name().into();
        ck.meta = serde_json::json!({ "system": self.meta, "graph": self.spec });
        ck
    }
}

fn checkpoint_of(meta: &Meta, networks: Vec<(String, MlpParams)>) -> Checkpoint {
    Checkpoint {
        system: meta.kind.name().into(),
        meta: serde_json::json!({ "system": meta }),
        networks,
    }
}

/// Any of the five systems.
#[derive(Clone, Debug)]
pub enum System {
    Single(SingleDnn),
    Multitask(Multitask),
    Joint(JointSeSr),
    Net(NetDnn),
}

impl System {
    /// Fresh system. Initial weights come from substream
    /// `{kind}/init/...` of `seed`, dropout masks from `{kind}/dropout/...`,
    /// so no two systems share parameters or masks.
    pub fn build(kind: SystemKind, arch: &ArchConfig, dims: DataDims, train: &TrainConfig) -> Result<System> {
        train.validate()?;
        if arch.ctx_in % 2 == 0 || arch.ctx_out % 2 == 0 || arch.ctx_out > arch.ctx_in {
            return usage(format!("bad context sizes {} -> {}", arch.ctx_in, arch.ctx_out));
        }
        let meta = Meta { kind, arch: arch.clone(), dims, train: train.clone() };
        let root = RngStream::new(train.seed).substream(kind.name());
        Ok(match kind {
            SystemKind::SingleDnn => System::Single(SingleDnn::new(meta, &root)?),
            SystemKind::Multitask => System::Multitask(Multitask::new(meta, &root)?),
            SystemKind::JointSeSr => System::Joint(JointSeSr::new(meta, &root)?),
            SystemKind::Netdnn | SystemKind::NetdnnResidual => System::Net(NetDnn::new(meta, &root)?),
        })
    }

    /// Rebuilds a system from a checkpoint written by [`Model::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<System> {
        let meta: Meta = ck
            .meta
            .get("system")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint lacks system metadata".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Format(format!("bad system metadata: {e}"))))?;
        let mut sys = System::build(meta.kind, &meta.arch, meta.dims, &meta.train)
            .map_err(|e| Error::Format(e.to_string()))?;
        let take = |name: &str, want: &MlpParams| -> Result<MlpParams> {
            let p = ck.network(name)?;
            if p.spec() != want.spec() {
                return format_err(format!("network '{name}' has the wrong shape"));
            }
            Ok(p.clone())
        };
        match &mut sys {
            System::Single(s) => s.net = take("sr", &s.net)?,
            System::Multitask(s) => {
                s.trunk = take("trunk", &s.trunk)?;
                s.se = take("se", &s.se)?;
                s.sr = take("sr", &s.sr)?;
            }
            System::Joint(s) => {
                s.se = take("se", &s.se)?;
                s.sr = take("sr", &s.sr)?;
            }
            System::Net(s) => {
                let (_, params) = GraphParams::from_checkpoint(&Checkpoint {
                    meta: ck.meta.get("graph").cloned().unwrap_or_default(),
                    ..ck.clone()
                })?;
                if params.se.iter().zip(&s.params.se).any(|(a, b)| a.spec() != b.spec()) {
                    return format_err("graph networks have the wrong shape");
                }
                s.params = params;
            }
        }
        Ok(sys)
    }

    pub fn kind(&self) -> SystemKind {
        self.meta().kind
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.meta().train
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.meta().arch
    }

    fn meta(&self) -> &Meta {
        match self {
            System::Single(s) => &s.meta,
            System::Multitask(s) => &s.meta,
            System::Joint(s) => &s.meta,
            System::Net(s) => &s.meta,
        }
    }

    /// Number of levels reported by [`Model::evaluate`].
    pub fn levels(&self) -> usize {
        match self {
            System::Net(s) => s.spec.levels,
            _ => 1,
        }
    }

    /// Rejects batches cut from data with a different feature dimension,
    /// context geometry or label inventory than the system was built for.
    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let Meta { arch, dims, .. } = self.meta();
        if batch.x.cols() != arch.ctx_in * dims.feat_dim || batch.clean.cols() != arch.ctx_out * dims.feat_dim {
            return usage(format!(
                "batch is {}+{} wide, system expects {}x{} noisy and {}x{} clean",
                batch.x.cols(),
                batch.clean.cols(),
                arch.ctx_in,
                dims.feat_dim,
                arch.ctx_out,
                dims.feat_dim
            ));
        }
        if batch.cd.iter().any(|&c| c >= dims.n_cd) || batch.mono.iter().any(|&m| m >= dims.n_mono) {
            return usage(format!("labels exceed the system's {} cd / {} mono classes", dims.n_cd, dims.n_mono));
        }
        Ok(())
    }

    pub fn network_names(&self) -> Vec<String> {
        self.checkpoint().networks.into_iter().map(|(n, _)| n).collect()
    }
}

impl Model for System {
    fn train_step(&mut self, batch: &Batch, eta: f64) -> Result<Vec<Metrics>> {
        self.check_batch(batch)?;
        match self {
            System::Single(s) => s.train_step(batch, eta),
            System::Multitask(s) => s.train_step(batch, eta),
            System::Joint(s) => s.train_step(batch, eta),
            System::Net(s) => s.train_step(batch, eta),
        }
    }

    fn eval_batch(&self, batch: &Batch) -> Result<Vec<Metrics>> {
        self.check_batch(batch)?;
        match self {
            System::Single(s) => s.eval_batch(batch),
            System::Multitask(s) => s.eval_batch(batch),
            System::Joint(s) => s.eval_batch(batch),
            System::Net(s) => s.eval_batch(batch),
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        match self {
            System::Single(s) => s.checkpoint(),
            System::Multitask(s) => s.checkpoint(),
            System::Joint(s) => s.checkpoint(),
            System::Net(s) => s.checkpoint(),
        }
    }
}
