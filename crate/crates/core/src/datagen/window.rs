use super::Dataset;
use crate::error::{usage, Result};
use crate::numeric::Matrix;

/// One minibatch of windowed samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Noisy context windows, `N × ctx_in·D`, frame-major.
    pub x: Matrix,
    /// Clean central frames, `N × ctx_out·D`.
    pub clean: Matrix,
    pub cd: Vec<usize>,
    pub mono: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.cd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cd.is_empty()
    }
}

/// Lazily windowed view of a dataset.
///
/// Features are normalized once on construction; windows are copied out only
/// when a batch is requested.
#[derive(Clone, Debug)]
pub struct WindowedSet {
    ctx_in: usize,
    ctx_out: usize,
    feat_dim: usize,
    n_cd: usize,
    n_mono: usize,
    noisy: Vec<Vec<f64>>,
    clean: Vec<Vec<f64>>,
    cd: Vec<Vec<u16>>,
    mono: Vec<Vec<u16>>,
    /// `(utterance, centre frame)` of every sample.
    index: Vec<(u32, u32)>,
    skipped: usize,
}

impl WindowedSet {
    pub fn new(ds: &Dataset, ctx_in: usize, ctx_out: usize) -> Result<Self> {
        if ctx_in % 2 == 0 || ctx_out % 2 == 0 || ctx_out > ctx_in {
            return usage(format!("bad context sizes {ctx_in} -> {ctx_out}"));
        }
        let d = ds.feat_dim;
        let (mean, std) = match &ds.normalization {
            Some(n) => (n.mean.clone(), n.std.clone()),
            None => (vec![0.0; d], vec![1.0; d]),
        };
        let norm = |v: &[f32]| -> Vec<f64> {
            v.iter().enumerate().map(|(i, &x)| (x as f64 - mean[i % d]) / std[i % d]).collect()
        };
        let half = ctx_in / 2;
        let mut set = WindowedSet {
            ctx_in,
            ctx_out,
            feat_dim: d,
            n_cd: ds.n_cd(),
            n_mono: ds.n_mono,
            noisy: Vec::new(),
            clean: Vec::new(),
            cd: Vec::new(),
            mono: Vec::new(),
            index: Vec::new(),
            skipped: 0,
        };
        for u in &ds.utterances {
            let t = u.frames();
            if t < ctx_in {
                set.skipped += 1;
                continue;
            }
            let k = set.noisy.len() as u32;
            set.index.extend((half..t - half).map(|c| (k, c as u32)));
            set.noisy.push(norm(&u.noisy));
            set.clean.push(norm(&u.clean));
            set.cd.push(u.cd.clone());
            set.mono.push(u.mono.clone());
        }
        if set.skipped > 0 {
            log::warn!("skipped {} utterance(s) shorter than {ctx_in} frames", set.skipped);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Utterances too short for one full window.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn ctx_in(&self) -> usize {
        self.ctx_in
    }

    pub fn ctx_out(&self) -> usize {
        self.ctx_out
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn n_cd(&self) -> usize {
        self.n_cd
    }

    pub fn n_mono(&self) -> usize {
        self.n_mono
    }

    pub fn batch(&self, samples: &[usize]) -> Batch {
        let d = self.feat_dim;
        let (wi, wo) = (self.ctx_in * d, self.ctx_out * d);
        let mut x = Vec::with_capacity(samples.len() * wi);
        let mut clean = Vec::with_capacity(samples.len() * wo);
        let mut cd = Vec::with_capacity(samples.len());
        let mut mono = Vec::with_capacity(samples.len());
        for &s in samples {
            let (u, c) = self.index[s];
            let (u, c) = (u as usize, c as usize);
            let lo = (c - self.ctx_in / 2) * d;
            x.extend_from_slice(&self.noisy[u][lo..lo + wi]);
            let lo = (c - self.ctx_out / 2) * d;
            clean.extend_from_slice(&self.clean[u][lo..lo + wo]);
            cd.push(self.cd[u][c] as usize);
            mono.push(self.mono[u][c] as usize);
        }
        let n = samples.len();
        Batch {
            x: Matrix::from_vec(n, wi, x).expect("window width"),
            clean: Matrix::from_vec(n, wo, clean).expect("window width"),
            cd,
            mono,
        }
    }

    /// Consecutive batches of at most `size` samples in dataset order.
    pub fn sequential_batches(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.batch(&idx)
        })
    }
}
