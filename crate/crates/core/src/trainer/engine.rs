use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Schedule, TrainConfig};
use crate::checkpoint::Checkpoint;
use crate::datagen::{Batch, WindowedSet};
use crate::error::{usage, Result};
use crate::numeric::RngStream;

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 1024;

pub const CSV_HEADER: [&str; 9] = ["epoch", "eta", "split", "level", "mse", "nll_cd", "nll_mono", "fer", "seconds"];

/// Per-level figures. Fields a system does not produce stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: Option<f64>,
    pub nll_cd: f64,
    pub nll_mono: Option<f64>,
    pub fer: f64,
    pub mono_fer: Option<f64>,
}

impl Metrics {
    fn is_finite(&self) -> bool {
        [self.mse, Some(self.nll_cd), self.nll_mono, Some(self.fer), self.mono_fer]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

pub fn frame_errors(predicted: &[usize], labels: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    wrong as f64 / labels.len().max(1) as f64
}

/// Sample-weighted average of per-batch metrics.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    sums: Vec<Metrics>,
    weight: f64,
}

impl MetricsAccumulator {
    pub fn add(&mut self, batch: &[Metrics], rows: usize) {
        let w = rows as f64;
        if self.sums.is_empty() {
            self.sums = vec![Metrics::default(); batch.len()];
            for (s, b) in self.sums.iter_mut().zip(batch) {
                s.mse = b.mse.map(|_| 0.0);
                s.nll_mono = b.nll_mono.map(|_| 0.0);
                s.mono_fer = b.mono_fer.map(|_| 0.0);
            }
        }
        let acc = |s: &mut Option<f64>, v: Option<f64>| {
            if let (Some(s), Some(v)) = (s.as_mut(), v) {
                *s += w * v;
            }
        };
        for (s, b) in self.sums.iter_mut().zip(batch) {
            acc(&mut s.mse, b.mse);
            acc(&mut s.nll_mono, b.nll_mono);
            acc(&mut s.mono_fer, b.mono_fer);
            s.nll_cd += w * b.nll_cd;
            s.fer += w * b.fer;
        }
        self.weight += w;
    }

    pub fn finish(self) -> Vec<Metrics> {
        let w = self.weight.max(f64::MIN_POSITIVE);
        self.sums
            .into_iter()
            .map(|s| Metrics {
                mse: s.mse.map(|v| v / w),
                nll_cd: s.nll_cd / w,
                nll_mono: s.nll_mono.map(|v| v / w),
                fer: s.fer / w,
                mono_fer: s.mono_fer.map(|v| v / w),
            })
            .collect()
    }
}

/// A trainable system. Metrics vectors hold one entry per decodable level,
/// lowest first; the last entry drives model selection.
pub trait Model: Clone {
    /// One SGD step on `batch`; returns the metrics of the training forward.
    fn train_step(&mut self, batch: &Batch, eta: f64) -> Result<Vec<Metrics>>;

    /// Eval-mode metrics on one batch.
    fn eval_batch(&self, batch: &Batch) -> Result<Vec<Metrics>>;

    fn checkpoint(&self) -> Checkpoint;

    fn evaluate(&self, set: &WindowedSet) -> Result<Vec<Metrics>> {
        if set.is_empty() {
            return usage("cannot evaluate on an empty split");
        }
        let mut acc = MetricsAccumulator::default();
        for batch in set.sequential_batches(EVAL_BATCH) {
            acc.add(&self.eval_batch(&batch)?, batch.len());
        }
        Ok(acc.finish())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub eta: f64,
    pub train: Vec<Metrics>,
    pub dev: Vec<Metrics>,
    pub seconds: f64,
}

impl EpochReport {
    /// Copy with the wall time zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> EpochReport {
        EpochReport { seconds: 0.0, ..self.clone() }
    }

    pub fn dev_top_fer(&self) -> f64 {
        self.dev.last().map_or(f64::NAN, |m| m.fer)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `epoch, eta, split, level, mse, nll_cd, nll_mono, fer, seconds`
/// rows, one per split and level.
pub fn write_reports_csv<W: Write>(out: W, reports: &[EpochReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(std::io::Error::from)?;
    for r in reports {
        for (split, metrics) in [("train", &r.train), ("dev", &r.dev)] {
            for (level, m) in metrics.iter().enumerate() {
                w.write_record([
                    r.epoch.to_string(),
                    r.eta.to_string(),
                    split.to_string(),
                    level.to_string(),
                    opt(m.mse),
                    m.nll_cd.to_string(),
                    opt(m.nll_mono),
                    m.fer.to_string(),
                    r.seconds.to_string(),
                ])
                .map_err(std::io::Error::from)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the lowest dev FER.
    pub best: M,
    pub best_epoch: usize,
    /// Model state after the last epoch.
    pub last: M,
    pub reports: Vec<EpochReport>,
}

/// Shuffled minibatch SGD with dev-FER-driven halving and early stopping.
///
/// The shuffle order comes from the `shuffle` substream of `cfg.seed`, so
/// every system trained with the same seed sees the same batches.
/// `on_epoch` runs after each epoch with the report and the current model.
pub fn train_loop<M: Model>(
    model: M,
    train: &WindowedSet,
    dev: &WindowedSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &M) -> Result<()>,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train.len() < 2 || dev.is_empty() {
        return usage("train split needs at least two samples and dev split at least one");
    }
    let mut model = model;
    let mut schedule = Schedule::new(cfg.eta0, cfg.lr_halving_threshold, cfg.patience, cfg.max_epochs);
    let mut shuffle = RngStream::new(cfg.seed).substream("shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut reports = Vec::new();
    loop {
        let start = Instant::now();
        shuffle.shuffle(&mut order);
        let eta = schedule.eta();
        let mut acc = MetricsAccumulator::default();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = train.batch(chunk);
            acc.add(&model.train_step(&batch, eta)?, chunk.len());
        }
        let train_metrics = acc.finish();
        if !train_metrics.iter().all(Metrics::is_finite) {
            return usage(format!("training diverged in epoch {}", schedule.epoch() + 1));
        }
        let dev_metrics = model.evaluate(dev)?;
        let decision = schedule.observe(dev_metrics.last().map_or(1.0, |m| m.fer));
        let report = EpochReport {
            epoch: schedule.epoch(),
            eta: decision.eta,
            train: train_metrics,
            dev: dev_metrics,
            seconds: start.elapsed().as_secs_f64(),
        };
        if decision.improved {
            best = model.clone();
            best_epoch = report.epoch;
        }
        log::debug!("epoch {} eta {} dev FER {:.4}", report.epoch, report.eta, report.dev_top_fer());
        on_epoch(&report, &model)?;
        reports.push(report);
        if decision.stop {
            break;
        }
    }
    Ok(TrainOutcome { best, best_epoch, last: model, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_weights_by_rows() {
        let mut acc = MetricsAccumulator::default();
        let m = |v: f64| Metrics { mse: Some(v), nll_cd: v, nll_mono: None, fer: v, mono_fer: None };
        acc.add(&[m(1.0)], 3);
        acc.add(&[m(5.0)], 1);
        let out = acc.finish();
        assert_eq!(out[0].mse, Some(2.0));
        assert_eq!(out[0].fer, 2.0);
        assert_eq!(out[0].nll_mono, None);
    }

    #[test]
    fn frame_error_counts() {
        assert_eq!(frame_errors(&[1, 2, 3, 4], &[1, 0, 3, 0]), 0.5);
    }

    #[test]
    fn csv_rows_per_split_and_level() {
        let m = Metrics { mse: None, nll_cd: 1.5, nll_mono: Some(0.5), fer: 0.25, mono_fer: None };
        let r = EpochReport { epoch: 1, eta: 0.08, train: vec![m.clone(); 2], dev: vec![m; 2], seconds: 1.0 };
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,eta,split,level,mse,nll_cd,nll_mono,fer,seconds");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "1,0.08,dev,1,,1.5,0.5,0.25,1");
    }
}
