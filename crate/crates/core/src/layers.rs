//! Forward and backward transforms for the layer types used by every network:
//! dense, ReLU, batch normalization, inverted dropout, softmax + NLL and MSE.
//!
//! Forward functions return the output together with a cache; the matching
//! `*_backward` function consumes `∂L/∂output` and that cache. Nothing here
//! mutates its inputs: batch-norm running statistics come back as a new
//! [`RunningStats`] value.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::numeric::{row_stats, Matrix, RngStream};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Weight `out × in` and bias `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// `y = x Wᵀ + b`.
pub fn dense(x: &Matrix, p: &DenseParams) -> Result<(Matrix, DenseCache)> {
    if p.bias.len() != p.out_dim() {
        return usage(format!("dense: bias length {} vs {} outputs", p.bias.len(), p.out_dim()));
    }
    let mut y = x.matmul_nt(&p.weight)?;
    y.add_row_vector(&p.bias)?;
    Ok((y, DenseCache { input: x.clone() }))
}

/// Returns `(∂L/∂x, ∂L/∂W, ∂L/∂b)`.
pub fn dense_backward(dy: &Matrix, cache: &DenseCache, p: &DenseParams) -> Result<(Matrix, DenseGrads)> {
    if dy.rows() != cache.input.rows() || dy.cols() != p.out_dim() {
        return usage(format!(
            "dense_backward: gradient {}x{} vs batch {} and {} outputs",
            dy.rows(),
            dy.cols(),
            cache.input.rows(),
            p.out_dim()
        ));
    }
    let dx = dy.matmul(&p.weight)?;
    let dw = dy.matmul_tn(&cache.input)?;
    Ok((dx, DenseGrads { weight: dw, bias: dy.column_sums() }))
}

#[derive(Clone, Debug)]
pub struct ReluCache {
    input: Matrix,
}

impl ReluCache {
    /// Pre-activation values, used to detect kinks during gradient checks.
    pub fn pre_activation(&self) -> &Matrix {
        &self.input
    }
}

pub fn relu(x: &Matrix) -> (Matrix, ReluCache) {
    (x.map(|v| v.max(0.0)), ReluCache { input: x.clone() })
}

pub fn relu_backward(dy: &Matrix, cache: &ReluCache) -> Result<Matrix> {
    dy.zip_map(&cache.input, |g, x| if x > 0.0 { g } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormParams {
    /// Identity scale and shift, running statistics of a standard normal.
    pub fn new(dim: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    mode: Mode,
    xhat: Matrix,
    inv_std: Vec<f64>,
}

/// Batch normalization over the rows of `x`.
///
/// Train mode normalizes with the batch mean and biased variance and returns
/// the exponentially averaged running statistics; eval mode normalizes with
/// the stored running statistics and returns them unchanged.
pub fn batchnorm(x: &Matrix, p: &BatchNormParams, mode: Mode) -> Result<(Matrix, BatchNormCache, RunningStats)> {
    let d = p.dim();
    if x.cols() != d || p.beta.len() != d || p.running_mean.len() != d || p.running_var.len() != d {
        return usage(format!("batchnorm: input has {} columns, parameters have {}", x.cols(), d));
    }
    if !(p.eps > 0.0) || !(p.momentum > 0.0 && p.momentum <= 1.0) {
        return usage(format!("batchnorm: eps {} / momentum {} out of range", p.eps, p.momentum));
    }
    let (mean, var, running) = match mode {
        Mode::Train => {
            if x.rows() < 2 {
                return usage("batchnorm in train mode needs at least 2 rows");
            }
            let (mean, var) = row_stats(x)?;
            let m = p.momentum;
            let running = RunningStats {
                mean: p.running_mean.iter().zip(&mean).map(|(r, b)| (1.0 - m) * r + m * b).collect(),
                var: p.running_var.iter().zip(&var).map(|(r, b)| (1.0 - m) * r + m * b).collect(),
            };
            (mean, var, running)
        }
        Mode::Eval => (
            p.running_mean.clone(),
            p.running_var.clone(),
            RunningStats { mean: p.running_mean.clone(), var: p.running_var.clone() },
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let xr = xhat.row_mut(r);
        for j in 0..d {
            xr[j] = (xr[j] - mean[j]) * inv_std[j];
        }
        let yr = y.row_mut(r);
        for j in 0..d {
            yr[j] = p.gamma[j] * xhat.get(r, j) + p.beta[j];
        }
    }
    Ok((y, BatchNormCache { mode, xhat, inv_std }, running))
}

/// Returns `(∂L/∂x, ∂L/∂gamma, ∂L/∂beta)`; in train mode the input gradient
/// includes the paths through the batch mean and variance.
pub fn batchnorm_backward(
    dy: &Matrix,
    cache: &BatchNormCache,
    p: &BatchNormParams,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    dy.same_shape(&cache.xhat, "batchnorm_backward")?;
    let (n, d) = dy.shape();
    let dbeta = dy.column_sums();
    let mut dgamma = vec![0.0; d];
    let mut sum_dxhat_xhat = vec![0.0; d];
    for r in 0..n {
        let g = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            dgamma[j] += g[j] * xh[j];
        }
    }
    for j in 0..d {
        sum_dxhat_xhat[j] = dgamma[j] * p.gamma[j];
    }
    let mut dx = Matrix::zeros(n, d);
    match cache.mode {
        Mode::Train => {
            let nf = n as f64;
            for r in 0..n {
                let g = dy.row(r);
                let xh = cache.xhat.row(r);
                let out = dx.row_mut(r);
                for j in 0..d {
                    let dxhat = g[j] * p.gamma[j];
                    let sum_dxhat = dbeta[j] * p.gamma[j];
                    out[j] = cache.inv_std[j] / nf * (nf * dxhat - sum_dxhat - xh[j] * sum_dxhat_xhat[j]);
                }
            }
        }
        Mode::Eval => {
            for r in 0..n {
                let g = dy.row(r);
                let out = dx.row_mut(r);
                for j in 0..d {
                    out[j] = g[j] * p.gamma[j] * cache.inv_std[j];
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

#[derive(Clone, Debug)]
pub struct DropoutCache {
    /// Per-entry multiplier (0 or 1/(1-rate)); `None` means identity.
    mask: Option<Vec<f64>>,
}

/// Inverted dropout. Train mode keeps each entry with probability `1 - rate`
/// and rescales survivors by `1/(1 - rate)`; eval mode, or `rate == 0`, is the
/// identity and draws nothing from `rng`.
pub fn dropout(x: &Matrix, rate: f64, mode: Mode, rng: Option<&mut RngStream>) -> Result<(Matrix, DropoutCache)> {
    if !(0.0..1.0).contains(&rate) {
        return usage(format!("dropout rate {rate} outside [0, 1)"));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutCache { mask: None }));
    }
    let Some(rng) = rng else {
        return usage("dropout in train mode needs a random stream");
    };
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len()).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, DropoutCache { mask: Some(mask) }))
}

pub fn dropout_backward(dy: &Matrix, cache: &DropoutCache) -> Result<Matrix> {
    match &cache.mask {
        None => Ok(dy.clone()),
        Some(mask) => {
            if mask.len() != dy.len() {
                return usage("dropout_backward: gradient does not match cached mask");
            }
            let mut dx = dy.clone();
            for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            Ok(dx)
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

fn check_labels(n_rows: usize, classes: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != n_rows {
        return usage(format!("{} labels for {} rows", targets.len(), n_rows));
    }
    if let Some(bad) = targets.iter().find(|&&t| t >= classes) {
        return usage(format!("label {bad} out of range for {classes} classes"));
    }
    Ok(())
}

/// Mean negative log-likelihood of `targets`, computed from logits through a
/// log-sum-exp so large logits cannot overflow.
pub fn nll_from_logits(logits: &Matrix, targets: &[usize]) -> Result<f64> {
    check_labels(logits.rows(), logits.cols(), targets)?;
    if logits.rows() == 0 {
        return usage("nll on an empty batch");
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter_rows().zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total -= row[t] - max - lse;
    }
    Ok(total / logits.rows() as f64)
}

/// Softmax probabilities and mean NLL.
pub fn softmax_nll(logits: &Matrix, targets: &[usize]) -> Result<(Matrix, f64)> {
    let loss = nll_from_logits(logits, targets)?;
    Ok((softmax(logits), loss))
}

/// `∂loss/∂logits = (probs − onehot)/N`.
pub fn softmax_nll_backward(probs: &Matrix, targets: &[usize]) -> Result<Matrix> {
    check_labels(probs.rows(), probs.cols(), targets)?;
    let n = probs.rows() as f64;
    let mut g = probs.scale(1.0 / n);
    for (r, &t) in targets.iter().enumerate() {
        let v = g.get(r, t);
        g.set(r, t, v - 1.0 / n);
    }
    Ok(g)
}

/// Pulls a gradient on softmax probabilities back to the logits.
pub fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Result<Matrix> {
    dprobs.same_shape(probs, "softmax_backward")?;
    let mut dl = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = dprobs.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (out, (pi, gi)) in dl.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
            *out = pi * (gi - dot);
        }
    }
    Ok(dl)
}

/// `(1/N) Σ_n ‖pred_n − target_n‖²`.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    pred.same_shape(target, "mse")?;
    if pred.rows() == 0 {
        return usage("mse on an empty batch");
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.rows() as f64)
}

/// `∂mse/∂pred = 2(pred − target)/N`.
pub fn mse_backward(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    let scale = 2.0 / pred.rows() as f64;
    pred.zip_map(target, |a, b| scale * (a - b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gaussian;

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + STEP;
                let up = f(&probe);
                probe[i] = x[i] - STEP;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * STEP)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
        assert_eq!(analytic.len(), numeric.len());
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            assert!(rel_err(*a, *n) < TOL, "{what}[{i}]: analytic {a} vs numeric {n}");
        }
    }

    fn probe_loss(y: &Matrix, r: &Matrix) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    fn rand(seed: u64, rows: usize, cols: usize) -> Matrix {
        gaussian(&mut RngStream::new(seed), 0.0, 1.0, rows, cols).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let p = DenseParams { weight: Matrix::identity(2), bias: vec![0.0; 2] };
        assert_eq!(dense(&x, &p).unwrap().0, x);
        let p = DenseParams { weight: Matrix::from_rows(&[[1.0, 2.0]]), bias: vec![0.5] };
        let (y, _) = dense(&Matrix::from_rows(&[[1.0, 1.0]]), &p).unwrap();
        assert_eq!(y, Matrix::from_rows(&[[3.5]]));
    }

    #[test]
    fn dense_shape_mismatch() {
        let p = DenseParams { weight: Matrix::zeros(2, 3), bias: vec![0.0; 2] };
        assert!(dense(&Matrix::zeros(1, 2), &p).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let x = rand(1, 3, 4);
        let p = DenseParams { weight: rand(2, 5, 4), bias: rand(3, 1, 5).into_vec() };
        let r = rand(4, 3, 5);
        let (_, cache) = dense(&x, &p).unwrap();
        let (dx, g) = dense_backward(&r, &cache, &p).unwrap();

        let num_x = numeric_grad(x.data(), &mut |v| {
            probe_loss(&dense(&Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &p).unwrap().0, &r)
        });
        assert_close(dx.data(), &num_x, "dx");
        let num_w = numeric_grad(p.weight.data(), &mut |v| {
            let q = DenseParams { weight: Matrix::from_vec(5, 4, v.to_vec()).unwrap(), bias: p.bias.clone() };
            probe_loss(&dense(&x, &q).unwrap().0, &r)
        });
        assert_close(g.weight.data(), &num_w, "dW");
        let num_b = numeric_grad(&p.bias, &mut |v| {
            let q = DenseParams { weight: p.weight.clone(), bias: v.to_vec() };
            probe_loss(&dense(&x, &q).unwrap().0, &r)
        });
        assert_close(&g.bias, &num_b, "db");
    }

    #[test]
    fn relu_values_and_gradient() {
        assert_eq!(relu(&Matrix::from_rows(&[[-1.0, 2.0]])).0, Matrix::from_rows(&[[0.0, 2.0]]));
        let pos = Matrix::from_rows(&[[0.0, 1.5, 3.0]]);
        assert_eq!(relu(&pos).0, pos);

        let x = rand(5, 4, 6);
        assert!(x.data().iter().all(|v| v.abs() > 1e-6));
        let r = rand(6, 4, 6);
        let (_, cache) = relu(&x);
        let dx = relu_backward(&r, &cache).unwrap();
        let num = numeric_grad(x.data(), &mut |v| probe_loss(&relu(&Matrix::from_vec(4, 6, v.to_vec()).unwrap()).0, &r));
        assert_close(dx.data(), &num, "relu dx");
    }

    #[test]
    fn batchnorm_constant_batch_maps_to_beta() {
        let x = Matrix::filled(4, 3, 2.5);
        let (y, _, _) = batchnorm(&x, &BatchNormParams::new(3), Mode::Train).unwrap();
        assert!(y.max_abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let x = rand(7, 64, 5).map(|v| 10.0 * v + 1.0);
        let (y, _, _) = batchnorm(&x, &BatchNormParams::new(5), Mode::Train).unwrap();
        let (mean, var) = row_stats(&y).unwrap();
        for j in 0..5 {
            assert!(mean[j].abs() < 1e-9);
            assert!((1.0 - 10.0 * BN_EPS..=1.0).contains(&var[j]), "var {}", var[j]);
            assert!((var[j] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_running_stats_update() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]);
        let (_, _, rs) = batchnorm(&x, &BatchNormParams::new(1), Mode::Train).unwrap();
        // mean 2, var 1: 0.9·0 + 0.1·2, 0.9·1 + 0.1·1
        assert!((rs.mean[0] - 0.2).abs() < 1e-15);
        assert!((rs.var[0] - 1.0).abs() < 1e-15);
        let mut p = BatchNormParams::new(1);
        p.running_mean = vec![2.0];
        p.running_var = vec![4.0 - BN_EPS];
        let (y, _, rs2) = batchnorm(&Matrix::from_rows(&[[6.0]]), &p, Mode::Eval).unwrap();
        assert!((y.get(0, 0) - 2.0).abs() < 1e-12);
        assert_eq!(rs2.mean, p.running_mean);
    }

    #[test]
    fn batchnorm_rejects_single_row_training() {
        assert!(batchnorm(&Matrix::zeros(1, 3), &BatchNormParams::new(3), Mode::Train).is_err());
        assert!(batchnorm(&Matrix::zeros(1, 3), &BatchNormParams::new(3), Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let x = rand(8, 8, 5);
        let mut p = BatchNormParams::new(5);
        p.gamma = rand(9, 1, 5).into_vec();
        p.beta = rand(10, 1, 5).into_vec();
        let r = rand(11, 8, 5);
        let (_, cache, _) = batchnorm(&x, &p, Mode::Train).unwrap();
        let (dx, dgamma, dbeta) = batchnorm_backward(&r, &cache, &p).unwrap();

        let num_x = numeric_grad(x.data(), &mut |v| {
            probe_loss(&batchnorm(&Matrix::from_vec(8, 5, v.to_vec()).unwrap(), &p, Mode::Train).unwrap().0, &r)
        });
        assert_close(dx.data(), &num_x, "bn dx");
        let num_g = numeric_grad(&p.gamma, &mut |v| {
            let q = BatchNormParams { gamma: v.to_vec(), ..p.clone() };
            probe_loss(&batchnorm(&x, &q, Mode::Train).unwrap().0, &r)
        });
        assert_close(&dgamma, &num_g, "bn dgamma");
        let num_b = numeric_grad(&p.beta, &mut |v| {
            let q = BatchNormParams { beta: v.to_vec(), ..p.clone() };
            probe_loss(&batchnorm(&x, &q, Mode::Train).unwrap().0, &r)
        });
        assert_close(&dbeta, &num_b, "bn dbeta");
    }

    #[test]
    fn batchnorm_eval_gradient_matches_finite_differences() {
        let x = rand(12, 3, 4);
        let mut p = BatchNormParams::new(4);
        p.gamma = rand(13, 1, 4).into_vec();
        p.running_mean = rand(14, 1, 4).into_vec();
        p.running_var = vec![0.5, 1.5, 2.0, 0.25];
        let r = rand(15, 3, 4);
        let (_, cache, _) = batchnorm(&x, &p, Mode::Eval).unwrap();
        let (dx, _, _) = batchnorm_backward(&r, &cache, &p).unwrap();
        let num = numeric_grad(x.data(), &mut |v| {
            probe_loss(&batchnorm(&Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &p, Mode::Eval).unwrap().0, &r)
        });
        assert_close(dx.data(), &num, "bn eval dx");
    }

    #[test]
    fn dropout_identity_cases() {
        let x = rand(16, 5, 5);
        let mut rng = RngStream::new(1);
        assert_eq!(dropout(&x, 0.0, Mode::Train, Some(&mut rng)).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Eval, None).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, Mode::Eval, None).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, Some(&mut rng)).is_err());
        assert!(dropout(&x, -0.1, Mode::Eval, None).is_err());
        assert!(dropout(&x, 0.2, Mode::Train, None).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Matrix::filled(1000, 1000, 1.0);
        let (y, _) = dropout(&x, 0.2, Mode::Train, Some(&mut RngStream::new(3).substream("dropout"))).unwrap();
        let mean = y.data().iter().sum::<f64>() / 1e6;
        assert!((0.997..=1.003).contains(&mean), "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn dropout_backward_reuses_mask() {
        let x = rand(17, 4, 4);
        let (y, cache) = dropout(&x, 0.5, Mode::Train, Some(&mut RngStream::new(2))).unwrap();
        let dx = dropout_backward(&Matrix::filled(4, 4, 1.0), &cache).unwrap();
        for i in 0..16 {
            assert_eq!(y.data()[i], x.data()[i] * dx.data()[i]);
        }
    }

    #[test]
    fn softmax_symmetric_case() {
        let (p, loss) = softmax_nll(&Matrix::from_rows(&[[0.0, 0.0]]), &[0]).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[0.5, 0.5]]));
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let (p, loss) = softmax_nll(&Matrix::from_rows(&[[1000.0, 0.0]]), &[0]).unwrap();
        assert!(p.is_finite());
        assert!(loss.abs() < 1e-12);
        let (_, loss) = softmax_nll(&Matrix::from_rows(&[[1000.0, 0.0]]), &[1]).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rejects_bad_labels() {
        assert!(softmax_nll(&Matrix::zeros(2, 3), &[0, 3]).is_err());
        assert!(softmax_nll(&Matrix::zeros(2, 3), &[0]).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let p = softmax(&rand(18, 20, 7).scale(10.0));
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_nll_gradient_matches_finite_differences() {
        let logits = rand(19, 4, 6);
        let targets = [0, 5, 2, 2];
        let (probs, _) = softmax_nll(&logits, &targets).unwrap();
        let g = softmax_nll_backward(&probs, &targets).unwrap();
        let num = numeric_grad(logits.data(), &mut |v| {
            nll_from_logits(&Matrix::from_vec(4, 6, v.to_vec()).unwrap(), &targets).unwrap()
        });
        assert_close(g.data(), &num, "nll dlogits");
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = rand(20, 3, 4);
        let r = rand(21, 3, 4);
        let probs = softmax(&logits);
        let g = softmax_backward(&probs, &r).unwrap();
        let num = numeric_grad(logits.data(), &mut |v| {
            probe_loss(&softmax(&Matrix::from_vec(3, 4, v.to_vec()).unwrap()), &r)
        });
        assert_close(g.data(), &num, "softmax dlogits");
    }

    #[test]
    fn mse_fixtures() {
        let a = rand(22, 3, 4);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let v = mse(&Matrix::from_rows(&[[1.0, 1.0]]), &Matrix::from_rows(&[[0.0, 0.0]])).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!(mse(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let pred = rand(23, 5, 3);
        let target = rand(24, 5, 3);
        let g = mse_backward(&pred, &target).unwrap();
        let num = numeric_grad(pred.data(), &mut |v| mse(&Matrix::from_vec(5, 3, v.to_vec()).unwrap(), &target).unwrap());
        assert_close(g.data(), &num, "mse dpred");
    }
}
