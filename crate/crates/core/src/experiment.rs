//! Multi-seed comparison of the five systems.
//!
//! Each (system, seed) run trains from a fresh initialization, keeps the
//! parameters with the lowest dev FER and scores them on the test split.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::WindowedSet;
use crate::error::{usage, Result};
use crate::systems::{ArchConfig, DataDims, System, SystemKind};
use crate::trainer::{train_loop, EpochReport, Metrics, Model, TrainConfig};

/// Windowed train, dev and test splits.
pub struct Splits {
    pub train: WindowedSet,
    pub dev: WindowedSet,
    pub test: WindowedSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub system: SystemKind,
    pub seed: u64,
    /// Test metrics of the dev-selected parameters, one entry per level.
    pub test: Vec<Metrics>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_seconds: f64,
    pub reports: Vec<EpochReport>,
}

/// Trains one system on `splits` and scores it on the test split.
pub fn run_system(
    kind: SystemKind,
    arch: &ArchConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    on_epoch: impl FnMut(&EpochReport, &System) -> Result<()>,
) -> Result<(RunResult, System)> {
    let start = Instant::now();
    let dims = DataDims::of(&splits.train);
    if DataDims::of(&splits.dev) != dims || DataDims::of(&splits.test) != dims {
        return usage("train, dev and test splits disagree on dimensions");
    }
    let sys = System::build(kind, arch, dims, train_cfg)?;
    let out = train_loop(sys, &splits.train, &splits.dev, train_cfg, on_epoch)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let test = out.best.evaluate(&splits.test)?;
    let result = RunResult {
        system: kind,
        seed: train_cfg.seed,
        test,
        epochs: out.reports.len(),
        best_epoch: out.best_epoch,
        train_seconds,
        reports: out.reports,
    };
    Ok((result, out.best))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub systems: Vec<SystemKind>,
    pub seeds: Vec<u64>,
    pub arch: ArchConfig,
    /// Shared training settings; `seed` is replaced per run.
    pub train: TrainConfig,
    pub threads: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            systems: SystemKind::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            threads: 1,
        }
    }
}

/// One row of the aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub system: SystemKind,
    pub level: usize,
    pub seeds: usize,
    pub cd_fer_mean: f64,
    pub cd_fer_std: f64,
    pub mono_fer_mean: Option<f64>,
    pub mono_fer_std: Option<f64>,
    pub train_seconds_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: CompareConfig,
    pub runs: Vec<RunResult>,
    pub rows: Vec<AggregateRow>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn row_label(kind: SystemKind, level: usize, levels: usize) -> String {
    match kind {
        SystemKind::Netdnn => format!("netdnn[level {level}]"),
        SystemKind::NetdnnResidual if level + 1 == levels => kind.name().to_string(),
        SystemKind::NetdnnResidual => format!("netdnn-residual[level {level}]"),
        _ => kind.name().to_string(),
    }
}

fn aggregate(systems: &[SystemKind], runs: &[RunResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &kind in systems {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.system == kind).collect();
        let Some(levels) = mine.first().map(|r| r.test.len()) else { continue };
        for level in 0..levels {
            let cd: Vec<f64> = mine.iter().map(|r| r.test[level].fer).collect();
            let mono: Option<Vec<f64>> = mine.iter().map(|r| r.test[level].mono_fer).collect();
            let secs: Vec<f64> = mine.iter().map(|r| r.train_seconds).collect();
            let (cd_fer_mean, cd_fer_std) = mean_std(&cd);
            let mono_stats = mono.map(|m| mean_std(&m));
            rows.push(AggregateRow {
                label: row_label(kind, level, levels),
                system: kind,
                level,
                seeds: mine.len(),
                cd_fer_mean,
                cd_fer_std,
                mono_fer_mean: mono_stats.map(|s| s.0),
                mono_fer_std: mono_stats.map(|s| s.1),
                train_seconds_mean: mean_std(&secs).0,
            });
        }
    }
    rows
}

/// Trains every configured system for every seed. Runs are spread over
/// `cfg.threads` worker threads; each run is sequential and deterministic,
/// so the report does not depend on the thread count (timings aside).
/// `progress` is called once per finished run.
pub fn compare(cfg: &CompareConfig, splits: &Splits, progress: impl Fn(&RunResult) + Sync) -> Result<ComparisonReport> {
    if cfg.seeds.is_empty() || cfg.systems.is_empty() {
        return usage("compare needs at least one system and one seed");
    }
    let jobs: Vec<(SystemKind, u64)> =
        cfg.seeds.iter().flat_map(|&s| cfg.systems.iter().map(move |&k| (k, s))).collect();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    let worker = || loop {
        let i = {
            let mut n = next.lock().expect("job counter");
            let i = *n;
            *n += 1;
            i
        };
        let Some(&(kind, seed)) = jobs.get(i) else { break };
        let train = TrainConfig { seed, ..cfg.train.clone() };
        let r = run_system(kind, &cfg.arch, &train, splits, |_, _| Ok(())).map(|(r, _)| r);
        if let Ok(run) = &r {
            progress(run);
        }
        results.lock().expect("results")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..cfg.threads.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    let runs = results
        .into_inner()
        .expect("results")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { rows: aggregate(&cfg.systems, &runs), config: cfg.clone(), runs })
}

impl ComparisonReport {
    pub fn row(&self, label: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Per-run CSV: `system, seed, level, cd_fer, mono_fer, mse, epochs,
    /// best_epoch, train_seconds`.
    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["system", "seed", "level", "cd_fer", "mono_fer", "mse", "epochs", "best_epoch", "train_seconds"])
            .map_err(std::io::Error::from)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.runs {
            for (level, m) in r.test.iter().enumerate() {
                w.write_record([
                    r.system.name().to_string(),
                    r.seed.to_string(),
                    level.to_string(),
                    m.fer.to_string(),
                    opt(m.mono_fer),
                    opt(m.mse),
                    r.epochs.to_string(),
                    r.best_epoch.to_string(),
                    r.train_seconds.to_string(),
                ])
                .map_err(std::io::Error::from)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregate CSV: `label, system, level, seeds, cd_fer_mean, cd_fer_std,
    /// mono_fer_mean, mono_fer_std, train_seconds_mean`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned text table of the aggregate rows.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>5}  {:>17}  {:>17}  {:>9}", "system", "seeds", "cd FER", "mono FER", "train s");
        for r in &self.rows {
            let mono = match (r.mono_fer_mean, r.mono_fer_std) {
                (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
                _ => "-".into(),
            };
            let _ = writeln!(
                s,
                "{:<width$}  {:>5}  {:>17}  {:>17}  {:>9.1}",
                r.label,
                r.seeds,
                format!("{:.4} ± {:.4}", r.cd_fer_mean, r.cd_fer_std),
                mono,
                r.train_seconds_mean
            );
        }
        s
    }
}
