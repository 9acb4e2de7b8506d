use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ndnn::checkpoint::Checkpoint;
use ndnn::datagen::{generate_corpus, read_dataset, write_dataset, ContaminationConfig, CorpusConfig, Dataset, WindowedSet};
use ndnn::experiment::{compare, run_system, CompareConfig, Splits};
use ndnn::layers::Mode;
use ndnn::systems::{ArchConfig, System, SystemKind};
use ndnn::trainer::{grad_check, tiny_spec, write_reports_csv, BackpropOptions, GradCheckConfig, Metrics, Model, TrainConfig};

use crate::{Cli, Command, CompareArgs, EvalArgs, GenDataArgs, GradcheckArgs, TrainArgs, TrainOverrides};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        self.code
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ndnn::Error> for CliError {
    fn from(e: ndnn::Error) -> Self {
        let code = match e {
            ndnn::Error::Usage(_) => 2,
            _ => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 3, message: format!("io error: {e}") }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult<ExitCode> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Compare(a) => compare_cmd(cli, a),
    }
    .map(|pass| if pass { ExitCode::SUCCESS } else { ExitCode::from(4) })
}

/// Parses a JSON config with a fixed key set; bad files are usage errors.
fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(ndnn::Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub corpus: CorpusConfig,
    pub contamination: ContaminationConfig,
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> CliResult<bool> {
    let mut cfg: DataConfig = read_config(a.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.corpus.seed = seed;
    }
    let corpus = generate_corpus(&cfg.corpus, &cfg.contamination)?;
    fs::create_dir_all(&a.out)?;
    let mut splits = serde_json::Map::new();
    for (name, ds) in SPLITS.iter().zip([&corpus.train, &corpus.dev, &corpus.test]) {
        let file = format!("{name}.ndnn");
        write_dataset(&a.out.join(&file), ds)?;
        splits.insert(
            name.to_string(),
            json!({ "file": file, "utterances": ds.utterances.len(), "frames": ds.total_frames() }),
        );
        info!("{name}: {} utterances, {} frames", ds.utterances.len(), ds.total_frames());
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "corpus": cfg.corpus,
            "contamination": cfg.contamination,
            "attempts": corpus.attempts,
            "n_cd": cfg.corpus.n_cd(),
            "splits": splits,
        }),
    )?;
    println!("wrote {} (train/dev/test + manifest.json)", a.out.display());
    Ok(true)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

fn resolve(cli: &Cli, o: &TrainOverrides) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_config(o.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(v) = cli.seed {
        t.seed = v;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = o.$field { t.$field = v; } )* };
    }
    set!(levels, lambda, eta0, batch_size, dropout, max_epochs, patience, lr_halving_threshold);
    t.validate()?;
    Ok(cfg)
}

fn load_split(dir: &Path, name: &str) -> CliResult<Dataset> {
    let path = dir.join(format!("{name}.ndnn"));
    read_dataset(&path).map_err(|e| CliError { code: 3, message: format!("{}: {e}", path.display()) })
}

fn load_splits(dir: &Path, arch: &ArchConfig) -> CliResult<Splits> {
    let w = |name: &str| -> CliResult<WindowedSet> {
        Ok(WindowedSet::new(&load_split(dir, name)?, arch.ctx_in, arch.ctx_out)?)
    };
    Ok(Splits { train: w("train")?, dev: w("dev")?, test: w("test")? })
}

fn train(cli: &Cli, a: &TrainArgs) -> CliResult<bool> {
    let kind = match (a.system, a.residual) {
        (SystemKind::Netdnn, true) => SystemKind::NetdnnResidual,
        (k @ SystemKind::NetdnnResidual, _) => k,
        (k, true) => return Err(CliError::usage(format!("--residual does not apply to {k}"))),
        (k, false) => k,
    };
    let cfg = resolve(cli, &a.overrides)?;
    let splits = load_splits(&a.data, &cfg.arch)?;
    fs::create_dir_all(&a.out)?;
    let manifest = json!({
        "system": kind,
        "arch": cfg.arch,
        "train": cfg.train,
        "data": a.data,
        "train_samples": splits.train.len(),
        "dev_samples": splits.dev.len(),
    });
    write_json(&a.out.join("manifest.json"), &manifest)?;
    let last_path = a.out.join("last.ckpt");
    let (result, best) = run_system(kind, &cfg.arch, &cfg.train, &splits, |r, model| {
        let dev = r.dev.last().expect("at least one level");
        info!("epoch {:>3}  eta {:.5}  dev FER {:.4}  ({:.1}s)", r.epoch, r.eta, dev.fer, r.seconds);
        model.checkpoint().save(&last_path)
    })?;
    best.checkpoint().save(&a.out.join("best.ckpt"))?;
    write_reports_csv(BufWriter::new(fs::File::create(a.out.join("epochs.csv"))?), &result.reports)?;
    let mut manifest = manifest;
    manifest["best_epoch"] = json!(result.best_epoch);
    manifest["epochs"] = json!(result.epochs);
    manifest["train_seconds"] = json!(result.train_seconds);
    manifest["test"] = json!(result.test);
    write_json(&a.out.join("manifest.json"), &manifest)?;
    print_metrics(&result.test, None);
    Ok(true)
}

fn print_metrics(metrics: &[Metrics], only: Option<usize>) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:>5}  {:>8}  {:>8}  {:>8}  {:>8}", "level", "cd FER", "mono FER", "MSE", "NLL cd");
    for (l, m) in metrics.iter().enumerate() {
        if only.is_some_and(|o| o != l) {
            continue;
        }
        println!("{l:>5}  {:>8.4}  {:>8}  {:>8}  {:>8.4}", m.fer, opt(m.mono_fer), opt(m.mse), m.nll_cd);
    }
}

fn eval(a: &EvalArgs) -> CliResult<bool> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let sys = System::from_checkpoint(&ck)?;
    let path: PathBuf = if a.data.is_dir() { a.data.join("test.ndnn") } else { a.data.clone() };
    let ds = read_dataset(&path)?;
    let arch = sys.arch();
    let set = WindowedSet::new(&ds, arch.ctx_in, arch.ctx_out)?;
    let metrics = sys.evaluate(&set)?;
    if let Some(l) = a.level {
        if l >= metrics.len() {
            return Err(CliError::usage(format!("level {l} out of range: {} has {} level(s)", sys.kind(), metrics.len())));
        }
    }
    print_metrics(&metrics, a.level);
    if let Some(out) = &a.out {
        let levels: Vec<serde_json::Value> = metrics
            .iter()
            .enumerate()
            .filter(|(l, _)| a.level.is_none_or(|o| o == *l))
            .map(|(l, m)| json!({ "level": l, "metrics": m }))
            .collect();
        write_json(out, &json!({ "system": sys.kind(), "data": path, "levels": levels }))?;
    }
    Ok(true)
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> CliResult<bool> {
    let mode = match a.mode.as_str() {
        "eval" => Mode::Eval,
        "train" => Mode::Train,
        other => return Err(CliError::usage(format!("unknown mode '{other}' (eval or train)"))),
    };
    let spec = tiny_spec(a.levels, a.residual);
    spec.validate()?;
    let cfg = GradCheckConfig {
        tolerance: a.tolerance,
        mode,
        seed: cli.seed.unwrap_or(GradCheckConfig::default().seed),
        backprop: BackpropOptions { deep_cross_grads: a.deep, ..BackpropOptions::default() },
        ..GradCheckConfig::default()
    };
    let report = grad_check(&spec, &cfg)?;
    if cli.quiet {
        print!("{}", report.to_string().lines().next().unwrap_or_default());
        println!();
    } else {
        print!("{report}");
    }
    Ok(report.passed)
}

fn compare_cmd(cli: &Cli, a: &CompareArgs) -> CliResult<bool> {
    let exp = resolve(cli, &a.overrides)?;
    let cfg = CompareConfig {
        systems: if a.systems.is_empty() { SystemKind::ALL.to_vec() } else { a.systems.clone() },
        seeds: a.seeds.clone(),
        arch: exp.arch,
        train: exp.train,
        threads: cli.threads.max(1),
    };
    let splits = load_splits(&a.data, &cfg.arch)?;
    let report = compare(&cfg, &splits, |r| {
        let fers: Vec<String> = r.test.iter().map(|m| format!("{:.4}", m.fer)).collect();
        info!("{} seed {}: test FER [{}] after {} epochs ({:.1}s)", r.system, r.seed, fers.join(", "), r.epochs, r.train_seconds);
    })?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    report.write_runs_csv(BufWriter::new(fs::File::create(a.out.join("runs.csv"))?))?;
    report.write_summary_csv(BufWriter::new(fs::File::create(a.out.join("summary.csv"))?))?;
    let table = report.table();
    fs::write(a.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(true)
}
