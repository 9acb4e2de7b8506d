//! The unrolled network of SE and SR networks.
//!
//! Level 0 holds two independent networks: SE₀ reads the noisy context
//! window and SR₀ reads its central `ctx_out` frames. At every level ℓ ≥ 1,
//! SR_ℓ reads the enhanced frames of SE_{ℓ−1}, and SE_ℓ reads the noisy window
//! concatenated with the monophone posteriors of SR_{ℓ−1}. In residual mode
//! SE_ℓ (ℓ ≥ 1) predicts a correction: `x̂_ℓ = x̂_{ℓ−1} − R̂_ℓ`.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{format_err, usage, Result};
use crate::layers::Mode;
use crate::mlp::{build_mlp, mlp_forward, ForwardTrace, HeadKind, HeadSpec, MlpParams, MlpSpec};
use crate::numeric::{Matrix, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub levels: usize,
    pub feat_dim: usize,
    pub ctx_in: usize,
    pub ctx_out: usize,
    pub n_mono: usize,
    pub n_cd: usize,
    pub se_hidden: Vec<usize>,
    pub sr_hidden: Vec<usize>,
    pub se_dropout: f64,
    pub sr_dropout: f64,
    pub use_batchnorm: bool,
    pub residual: bool,
}

impl GraphSpec {
    /// Desk-scale defaults: three levels, three hidden layers of 128 units per
    /// network, dropout 0.2 everywhere.
    pub fn new(feat_dim: usize, n_mono: usize, n_cd: usize) -> Self {
        GraphSpec {
            levels: 3,
            feat_dim,
            ctx_in: 21,
            ctx_out: 11,
            n_mono,
            n_cd,
            se_hidden: vec![128; 3],
            sr_hidden: vec![128; 3],
            se_dropout: 0.2,
            sr_dropout: 0.2,
            use_batchnorm: true,
            residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return usage("graph needs at least one level");
        }
        if self.feat_dim == 0 || self.n_mono == 0 {
            return usage("feature and monophone dimensions must be at least 1");
        }
        if self.ctx_in % 2 == 0 || self.ctx_out % 2 == 0 {
            return usage(format!("context sizes must be odd (got {} and {})", self.ctx_in, self.ctx_out));
        }
        if self.ctx_out > self.ctx_in {
            return usage(format!("ctx_out {} exceeds ctx_in {}", self.ctx_out, self.ctx_in));
        }
        if self.n_cd < self.n_mono {
            return usage(format!("{} cd classes fewer than {} monophones", self.n_cd, self.n_mono));
        }
        self.se_spec(0).validate()?;
        self.sr_spec(0).validate()
    }

    pub fn noisy_dim(&self) -> usize {
        self.ctx_in * self.feat_dim
    }

    pub fn enhanced_dim(&self) -> usize {
        self.ctx_out * self.feat_dim
    }

    /// Column where the central `ctx_out` frames start inside the noisy window.
    pub fn center_offset(&self) -> usize {
        (self.ctx_in - self.ctx_out) / 2 * self.feat_dim
    }

    pub fn se_spec(&self, level: usize) -> MlpSpec {
        let extra = if level == 0 { 0 } else { self.n_mono };
        MlpSpec {
            input_dim: self.noisy_dim() + extra,
            hidden_dims: self.se_hidden.clone(),
            heads: vec![HeadSpec::new("enh", self.enhanced_dim(), HeadKind::Linear)],
            dropout_rate: self.se_dropout,
            use_batchnorm: self.use_batchnorm,
        }
    }

    pub fn sr_spec(&self, _level: usize) -> MlpSpec {
        MlpSpec {
            input_dim: self.enhanced_dim(),
            hidden_dims: self.sr_hidden.clone(),
            heads: vec![
                HeadSpec::new("cd", self.n_cd, HeadKind::Softmax),
                HeadSpec::new("mono", self.n_mono, HeadKind::Softmax),
            ],
            dropout_rate: self.sr_dropout,
            use_batchnorm: self.use_batchnorm,
        }
    }
}

/// Parameters of all 2L networks; nothing is shared between levels.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphParams {
    pub se: Vec<MlpParams>,
    pub sr: Vec<MlpParams>,
}

impl GraphParams {
    pub fn levels(&self) -> usize {
        self.se.len()
    }

    pub fn commit_running_stats(&mut self, trace: &GraphTrace) -> Result<()> {
        for (p, t) in self.se.iter_mut().zip(&trace.se) {
            p.commit_running_stats(t)?;
        }
        for (p, t) in self.sr.iter_mut().zip(&trace.sr) {
            p.commit_running_stats(t)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, spec: &GraphSpec) -> Checkpoint {
        let mut networks = Vec::with_capacity(2 * self.levels());
        for (l, p) in self.se.iter().enumerate() {
            networks.push((format!("se{l}"), p.clone()));
        }
        for (l, p) in self.sr.iter().enumerate() {
            networks.push((format!("sr{l}"), p.clone()));
        }
        Checkpoint {
            system: "netdnn".into(),
            meta: serde_json::to_value(spec).expect("graph spec serializes"),
            networks,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(GraphSpec, GraphParams)> {
        let spec: GraphSpec = serde_json::from_value(ck.meta.clone())
            .map_err(|e| crate::Error::Format(format!("checkpoint does not hold a graph spec: {e}")))?;
        spec.validate().map_err(|e| crate::Error::Format(e.to_string()))?;
        let mut se = Vec::new();
        let mut sr = Vec::new();
        for l in 0..spec.levels {
            se.push(ck.network(&format!("se{l}"))?.clone());
            sr.push(ck.network(&format!("sr{l}"))?.clone());
        }
        let params = GraphParams { se, sr };
        for l in 0..spec.levels {
            if params.se[l].spec() != &spec.se_spec(l) || params.sr[l].spec() != &spec.sr_spec(l) {
                return format_err(format!("network shapes at level {l} disagree with the graph spec"));
            }
        }
        Ok((spec, params))
    }
}

/// Builds every network from its own `se{ℓ}` / `sr{ℓ}` substream of `rng`.
pub fn assemble_graph(spec: &GraphSpec, rng: &RngStream) -> Result<GraphParams> {
    spec.validate()?;
    let mut se = Vec::with_capacity(spec.levels);
    let mut sr = Vec::with_capacity(spec.levels);
    for l in 0..spec.levels {
        let mut net = build_mlp(&spec.se_spec(l), &mut rng.substream(&format!("se{l}")))?;
        if spec.residual && l >= 1 {
            for head in &mut net.heads {
                head.weight.data_mut().fill(0.0);
                head.bias.fill(0.0);
            }
        }
        se.push(net);
        sr.push(build_mlp(&spec.sr_spec(l), &mut rng.substream(&format!("sr{l}")))?);
    }
    Ok(GraphParams { se, sr })
}

/// One dropout stream per network, so each network's masks do not depend on
/// how many draws the others made.
#[derive(Clone, Debug)]
pub struct GraphRngs {
    pub se: Vec<RngStream>,
    pub sr: Vec<RngStream>,
}

impl GraphRngs {
    pub fn new(dropout: &RngStream, levels: usize) -> Self {
        GraphRngs {
            se: (0..levels).map(|l| dropout.substream(&format!("se{l}"))).collect(),
            sr: (0..levels).map(|l| dropout.substream(&format!("sr{l}"))).collect(),
        }
    }
}

/// Cached state of one forward pass through the graph.
#[derive(Clone, Debug)]
pub struct GraphTrace {
    pub se: Vec<ForwardTrace>,
    pub sr: Vec<ForwardTrace>,
    /// x̂_{SE_ℓ}, `N × ctx_out·D`.
    pub enhanced: Vec<Matrix>,
    /// R̂_ℓ for residual levels (ℓ ≥ 1 in residual mode).
    pub residuals: Vec<Option<Matrix>>,
    pub cd_probs: Vec<Matrix>,
    pub mono_probs: Vec<Matrix>,
    pub residual: bool,
}

impl GraphTrace {
    pub fn levels(&self) -> usize {
        self.se.len()
    }

    pub fn rows(&self) -> usize {
        self.enhanced.first().map_or(0, Matrix::rows)
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.levels() {
            return usage(format!("level {level} out of range for a {}-level graph", self.levels()));
        }
        Ok(())
    }
}

/// The central `ctx_out` frames of each noisy window.
pub fn center_frames(x: &Matrix, spec: &GraphSpec) -> Result<Matrix> {
    x.columns(spec.center_offset(), spec.enhanced_dim())
}

pub fn graph_forward(
    x: &Matrix,
    params: &GraphParams,
    spec: &GraphSpec,
    mode: Mode,
    mut rngs: Option<&mut GraphRngs>,
) -> Result<GraphTrace> {
    if x.cols() != spec.noisy_dim() {
        return usage(format!("graph_forward: input has {} columns, graph expects {}", x.cols(), spec.noisy_dim()));
    }
    if params.levels() != spec.levels || params.sr.len() != spec.levels {
        return usage("graph_forward: parameters do not match the number of levels");
    }
    let levels = spec.levels;
    let mut trace = GraphTrace {
        se: Vec::with_capacity(levels),
        sr: Vec::with_capacity(levels),
        enhanced: Vec::with_capacity(levels),
        residuals: Vec::with_capacity(levels),
        cd_probs: Vec::with_capacity(levels),
        mono_probs: Vec::with_capacity(levels),
        residual: spec.residual,
    };
    for l in 0..levels {
        let se_in = if l == 0 { x.clone() } else { x.hconcat(&trace.mono_probs[l - 1])? };
        let sr_in = if l == 0 { center_frames(x, spec)? } else { trace.enhanced[l - 1].clone() };

        let se_rng = rngs.as_deref_mut().map(|r| &mut r.se[l]);
        let (mut se_out, se_trace) = mlp_forward(&se_in, &params.se[l], mode, se_rng)?;
        let head = se_out.pop().expect("SE network has one head");
        if spec.residual && l >= 1 {
            trace.enhanced.push(trace.enhanced[l - 1].sub(&head)?);
            trace.residuals.push(Some(head));
        } else {
            trace.enhanced.push(head);
            trace.residuals.push(None);
        }
        trace.se.push(se_trace);

        let sr_rng = rngs.as_deref_mut().map(|r| &mut r.sr[l]);
        let (mut sr_out, sr_trace) = mlp_forward(&sr_in, &params.sr[l], mode, sr_rng)?;
        let mono = sr_out.pop().expect("SR mono head");
        let cd = sr_out.pop().expect("SR cd head");
        trace.cd_probs.push(cd);
        trace.mono_probs.push(mono);
        trace.sr.push(sr_trace);
    }
    Ok(trace)
}

/// ŷ^mono_{SR_ℓ}.
pub fn monophone_posteriors(trace: &GraphTrace, level: usize) -> Result<&Matrix> {
    trace.check_level(level)?;
    Ok(&trace.mono_probs[level])
}

/// Per-frame argmax of the cd posteriors at `level`, ties to the lowest class.
pub fn decode(trace: &GraphTrace, level: usize) -> Result<Vec<usize>> {
    trace.check_level(level)?;
    Ok(trace.cd_probs[level].argmax_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use crate::numeric::gaussian;
    use proptest::prelude::*;

    fn tiny(levels: usize, residual: bool) -> GraphSpec {
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

    fn input(spec: &GraphSpec, rows: usize, seed: u64) -> Matrix {
        gaussian(&mut RngStream::new(seed), 0.0, 1.0, rows, spec.noisy_dim()).unwrap()
    }

    #[test]
    fn dimensions_for_full_sized_graph() {
        let mut spec = GraphSpec::new(13, 10, 30);
        spec.se_hidden = vec![8];
        spec.sr_hidden = vec![8];
        let p = assemble_graph(&spec, &RngStream::new(1)).unwrap();
        assert_eq!(p.se[0].spec().input_dim, 273);
        assert_eq!(p.se[1].spec().input_dim, 283);
        assert_eq!(p.se[2].spec().input_dim, 283);
        for l in 0..3 {
            assert_eq!(p.sr[l].spec().input_dim, 143);
            assert_eq!(p.se[l].spec().output_dims(), vec![143]);
            assert_eq!(p.sr[l].spec().output_dims(), vec![30, 10]);
        }
    }

    #[test]
    fn single_level_graph() {
        let spec = tiny(1, false);
        let p = assemble_graph(&spec, &RngStream::new(1)).unwrap();
        assert_eq!((p.se.len(), p.sr.len()), (1, 1));
        let t = graph_forward(&input(&spec, 4, 2), &p, &spec, Mode::Train, None).unwrap();
        assert_eq!(t.levels(), 1);
    }

    #[test]
    fn seeds_change_weights() {
        let spec = tiny(2, false);
        let a = assemble_graph(&spec, &RngStream::new(1)).unwrap();
        let b = assemble_graph(&spec, &RngStream::new(2)).unwrap();
        assert_ne!(a.se[0].hidden[0].dense.weight, b.se[0].hidden[0].dense.weight);
        assert_ne!(a.se[0].hidden[0].dense.weight.data()[..4], a.se[1].hidden[0].dense.weight.data()[..4]);
    }

    #[test]
    fn invalid_specs() {
        let mut s = tiny(2, false);
        s.ctx_out = 7;
        assert!(s.validate().is_err());
        let mut s = tiny(2, false);
        s.ctx_in = 4;
        assert!(s.validate().is_err());
        let mut s = tiny(2, false);
        s.n_cd = 2;
        assert!(s.validate().is_err());
        let mut s = tiny(2, false);
        s.levels = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn center_slice_selects_middle_frame() {
        let mut spec = tiny(1, false);
        spec.ctx_in = 3;
        spec.ctx_out = 1;
        let x = Matrix::from_rows(&[[0.0, 0.5, 1.0, 1.5, 2.0, 2.5]]);
        assert_eq!(center_frames(&x, &spec).unwrap(), Matrix::from_rows(&[[1.0, 1.5]]));
    }

    #[test]
    fn residual_with_zero_heads_copies_level_zero() {
        for levels in 2..=4 {
            let spec = tiny(levels, true);
            let mut p = assemble_graph(&spec, &RngStream::new(3)).unwrap();
            for se in p.se.iter_mut().skip(1) {
                for v in se.heads[0].weight.data_mut() {
                    *v = 0.0;
                }
            }
            let t = graph_forward(&input(&spec, 6, 4), &p, &spec, Mode::Eval, None).unwrap();
            for l in 1..levels {
                assert_eq!(t.enhanced[l], t.enhanced[0]);
            }
        }
    }

    #[test]
    fn fresh_residual_graph_starts_at_identity() {
        let spec = tiny(3, true);
        let p = assemble_graph(&spec, &RngStream::new(5)).unwrap();
        let t = graph_forward(&input(&spec, 6, 2), &p, &spec, Mode::Train, None).unwrap();
        assert_eq!(t.enhanced[2], t.enhanced[0]);
        assert!(t.residuals[1].as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        let plain = assemble_graph(&tiny(3, false), &RngStream::new(5)).unwrap();
        assert!(plain.se[1].heads[0].weight.data().iter().any(|&v| v != 0.0));
        assert_eq!(plain.se[0], p.se[0]);
    }

    #[test]
    fn two_level_forward_matches_manual_composition() {
        let spec = tiny(2, false);
        let p = assemble_graph(&spec, &RngStream::new(5)).unwrap();
        let x = input(&spec, 5, 6);
        let t = graph_forward(&x, &p, &spec, Mode::Eval, None).unwrap();

        let (se0, _) = mlp_forward(&x, &p.se[0], Mode::Eval, None).unwrap();
        let (sr0, _) = mlp_forward(&x.columns(2, 6).unwrap(), &p.sr[0], Mode::Eval, None).unwrap();
        let se1_in = x.hconcat(&sr0[1]).unwrap();
        let (se1, _) = mlp_forward(&se1_in, &p.se[1], Mode::Eval, None).unwrap();
        let (sr1, _) = mlp_forward(&se0[0], &p.sr[1], Mode::Eval, None).unwrap();
        assert_eq!(t.enhanced[0], se0[0]);
        assert_eq!(t.enhanced[1], se1[0]);
        assert_eq!(t.cd_probs[0], sr0[0]);
        assert_eq!(t.cd_probs[1], sr1[0]);
        assert_eq!(t.mono_probs[1], sr1[1]);
    }

    #[test]
    fn level_zero_networks_are_independent() {
        let spec = tiny(3, false);
        let p = assemble_graph(&spec, &RngStream::new(7)).unwrap();
        let x = input(&spec, 6, 8);
        let base = graph_forward(&x, &p, &spec, Mode::Train, None).unwrap();

        let mut q = p.clone();
        q.se[0].hidden[0].dense.weight.data_mut()[0] += 0.5;
        let t = graph_forward(&x, &q, &spec, Mode::Train, None).unwrap();
        assert_eq!(t.cd_probs[0], base.cd_probs[0]);
        assert_eq!(t.mono_probs[0], base.mono_probs[0]);
        assert_ne!(t.enhanced[0], base.enhanced[0]);

        let mut q = p.clone();
        q.sr[0].hidden[0].dense.weight.data_mut()[0] += 0.5;
        let t = graph_forward(&x, &q, &spec, Mode::Train, None).unwrap();
        assert_eq!(t.enhanced[0], base.enhanced[0]);
        assert_ne!(t.cd_probs[0], base.cd_probs[0]);
    }

    #[test]
    fn shape_audit_for_several_depths() {
        for levels in 1..=4 {
            for residual in [false, true] {
                let spec = tiny(levels, residual);
                let p = assemble_graph(&spec, &RngStream::new(9)).unwrap();
                let t = graph_forward(&input(&spec, 3, 10), &p, &spec, Mode::Eval, None).unwrap();
                for l in 0..levels {
                    assert_eq!(t.enhanced[l].shape(), (3, spec.enhanced_dim()));
                    assert_eq!(t.cd_probs[l].shape(), (3, spec.n_cd));
                    assert_eq!(t.mono_probs[l].shape(), (3, spec.n_mono));
                    let want = spec.noisy_dim() + if l == 0 { 0 } else { spec.n_mono };
                    assert_eq!(p.se[l].spec().input_dim, want);
                    assert_eq!(t.residuals[l].is_some(), residual && l >= 1);
                }
            }
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut spec = tiny(3, true);
        spec.se_dropout = 0.5;
        let p = assemble_graph(&spec, &RngStream::new(11)).unwrap();
        let x = input(&spec, 4, 12);
        let a = graph_forward(&x, &p, &spec, Mode::Eval, None).unwrap();
        let b = graph_forward(&x, &p, &spec, Mode::Eval, None).unwrap();
        assert_eq!(a.enhanced, b.enhanced);
        assert_eq!(a.cd_probs, b.cd_probs);
        assert!(graph_forward(&input(&spec, 4, 12).columns(0, 9).unwrap(), &p, &spec, Mode::Eval, None).is_err());
    }

    #[test]
    fn monophone_posteriors_are_softmax_of_cached_logits() {
        let spec = tiny(2, false);
        let p = assemble_graph(&spec, &RngStream::new(13)).unwrap();
        let t = graph_forward(&input(&spec, 5, 14), &p, &spec, Mode::Eval, None).unwrap();
        for l in 0..2 {
            let m = monophone_posteriors(&t, l).unwrap();
            assert!(m.max_abs_diff(&softmax(&t.sr[l].logits[1])) < 1e-15);
            for row in m.iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(monophone_posteriors(&t, 2).is_err());
        assert!(decode(&t, 2).is_err());
    }

    #[test]
    fn symmetric_mono_logits_give_uniform_posterior() {
        let mut spec = tiny(1, false);
        spec.n_mono = 2;
        let mut p = assemble_graph(&spec, &RngStream::new(15)).unwrap();
        for v in p.sr[0].heads[1].weight.data_mut() {
            *v = 0.0;
        }
        let t = graph_forward(&input(&spec, 3, 16), &p, &spec, Mode::Eval, None).unwrap();
        for row in t.mono_probs[0].iter_rows() {
            assert_eq!(row, &[0.5, 0.5]);
        }
    }

    #[test]
    fn decode_picks_argmax_with_low_tie_break() {
        let spec = tiny(1, false);
        let p = assemble_graph(&spec, &RngStream::new(17)).unwrap();
        let mut t = graph_forward(&input(&spec, 2, 18), &p, &spec, Mode::Eval, None).unwrap();
        t.cd_probs[0] = Matrix::from_rows(&[[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]);
        assert_eq!(decode(&t, 0).unwrap(), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn decode_invariant_under_monotone_maps(
            logits in prop::collection::vec(-5.0f64..5.0, 24),
            scale in 0.1f64..4.0,
            shift in -3.0f64..3.0,
        ) {
            let spec = tiny(1, false);
            let p = assemble_graph(&spec, &RngStream::new(19)).unwrap();
            let mut t = graph_forward(&input(&spec, 4, 20), &p, &spec, Mode::Eval, None).unwrap();
            let m = Matrix::from_vec(4, 6, logits).unwrap();
            t.cd_probs[0] = m.clone();
            let a = decode(&t, 0).unwrap();
            t.cd_probs[0] = m.map(|v| (scale * v + shift).exp() + v.powi(3));
            prop_assert_eq!(a, decode(&t, 0).unwrap());
        }
    }
}
