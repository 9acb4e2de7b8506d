use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::Matrix;
use crate::error::{usage, Result};

/// Seeded, splittable random stream.
///
/// A stream is identified by a root seed and a slash-separated label path.
/// [`RngStream::substream`] derives a child whose key is the SHA-256 of
/// `(seed, path)`, so children are independent of how many draws the parent
/// has already made. The generator is ChaCha8, which gives the same sequence
/// on every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    path: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::keyed(seed, String::new())
    }

    fn keyed(seed: u64, path: String) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(path.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        RngStream { seed, path, rng: ChaCha8Rng::from_seed(key) }
    }

    /// Independent child stream named `label` under this stream's path.
    pub fn substream(&self, label: &str) -> RngStream {
        let path = if self.path.is_empty() {
            label.to_owned()
        } else {
            format!("{}/{}", self.path, label)
        };
        Self::keyed(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Glorot/Xavier uniform weights, shape `fan_out × fan_in`.
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return usage(format!("glorot_init with zero fan ({fan_in}, {fan_out})"));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
    Matrix::from_vec(fan_out, fan_in, data)
}

/// I.i.d. normal draws.
pub fn gaussian(rng: &mut RngStream, mean: f64, std: f64, rows: usize, cols: usize) -> Result<Matrix> {
    if !(std >= 0.0) {
        return usage(format!("gaussian with negative std {std}"));
    }
    if std == 0.0 {
        return Ok(Matrix::filled(rows, cols, mean));
    }
    let data = (0..rows * cols).map(|_| mean + std * rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data)
}
