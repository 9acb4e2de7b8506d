//! End-to-end runs through the public API: corpus generation, dataset files,
//! windowing, training, checkpoints and evaluation.

use ndnn::checkpoint::Checkpoint;
use ndnn::datagen::{
    generate_corpus, read_dataset, write_dataset, ContaminationConfig, CorpusConfig, Dataset, WindowedSet,
};
use ndnn::numeric::{gaussian, RngStream};
use ndnn::systems::{ArchConfig, DataDims, System, SystemKind};
use ndnn::trainer::{train_loop, Model, TrainConfig};

fn corpus_cfg() -> CorpusConfig {
    CorpusConfig { n_mono: 4, states_per_phone: 2, feat_dim: 5, n_train: 12, n_dev: 4, n_test: 6, frames_per_utt: 60, ..CorpusConfig::default() }
}

fn arch() -> ArchConfig {
    ArchConfig { hidden: vec![16, 16], ctx_in: 7, ctx_out: 3, use_batchnorm: true }
}

fn window(ds: &Dataset, a: &ArchConfig) -> WindowedSet {
    WindowedSet::new(ds, a.ctx_in, a.ctx_out).unwrap()
}

#[test]
fn files_to_checkpoint_to_identical_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&corpus_cfg(), &ContaminationConfig::default()).unwrap();
    for (name, ds) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        write_dataset(&dir.path().join(name), ds).unwrap();
    }
    let load = |name: &str| window(&read_dataset(&dir.path().join(name)).unwrap(), &arch());
    let (train, dev, test) = (load("train"), load("dev"), load("test"));
    assert_eq!(train.len(), 12 * (60 - 7 + 1));

    let cfg = TrainConfig { max_epochs: 3, batch_size: 32, ..TrainConfig::default() };
    for kind in SystemKind::ALL {
        let sys = System::build(kind, &arch(), DataDims::of(&train), &cfg).unwrap();
        let out = train_loop(sys, &train, &dev, &cfg, |_, _| Ok(())).unwrap();
        assert!(out.best_epoch >= 1 && out.best_epoch <= 3);
        let path = dir.path().join(format!("{kind}.ckpt"));
        out.best.checkpoint().save(&path).unwrap();
        let back = System::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let a = out.best.evaluate(&test).unwrap();
        assert_eq!(a, back.evaluate(&test).unwrap(), "{kind}");
        assert_eq!(a.len(), if matches!(kind, SystemKind::Netdnn | SystemKind::NetdnnResidual) { 3 } else { 1 });
    }
}

/// Noise-free, emission-free data: every (phone, state) has one feature
/// vector, so a nearest-mean recognizer built by hand is exact.
#[test]
fn hand_built_oracle_scores_zero_error() {
    let cfg = CorpusConfig { emission_std: 0.0, ..corpus_cfg() };
    let clean = ContaminationConfig { fir_len: 1, snr_db: None, ..ContaminationConfig::default() };
    let corpus = generate_corpus(&cfg, &clean).unwrap();
    let a = ArchConfig { hidden: vec![cfg.n_cd()], use_batchnorm: false, ..arch() };
    let test = window(&corpus.test, &a);
    let train = window(&corpus.train, &a);
    let d = cfg.feat_dim;

    let mut means: Vec<Option<Vec<f64>>> = vec![None; cfg.n_cd()];
    let all = train.batch(&(0..train.len()).collect::<Vec<_>>());
    let centre = (a.ctx_in / 2) * d;
    for (row, &c) in all.cd.iter().enumerate() {
        means[c].get_or_insert_with(|| all.x.row(row)[centre..centre + d].to_vec());
    }
    let sys = System::build(SystemKind::SingleDnn, &a, DataDims::of(&train), &TrainConfig::default()).unwrap();
    let mut ck = sys.checkpoint();
    let net = &mut ck.networks[0].1;
    let inputs = a.ctx_out * d;
    let offset = (a.ctx_out / 2) * d;
    let layer = &mut net.hidden[0].dense;
    layer.weight.data_mut().fill(0.0);
    for (c, mu) in means.iter().enumerate() {
        let mu = mu.as_ref().expect("every class appears in train");
        for (k, &v) in mu.iter().enumerate() {
            layer.weight.set(c, offset + k, v);
        }
        layer.bias[c] = 1e3 - 0.5 * mu.iter().map(|v| v * v).sum::<f64>();
    }
    assert_eq!(layer.weight.cols(), inputs);
    let head = &mut net.heads[0];
    head.weight.data_mut().fill(0.0);
    for c in 0..cfg.n_cd() {
        head.weight.set(c, c, 1.0);
    }
    head.bias.fill(0.0);
    let oracle = System::from_checkpoint(&ck).unwrap();
    let m = oracle.evaluate(&test).unwrap();
    assert_eq!(m[0].fer, 0.0);
}

#[test]
fn random_recognizer_sits_at_chance() {
    let cfg = CorpusConfig { n_mono: 10, states_per_phone: 3, n_train: 4, n_dev: 2, n_test: 150, ..corpus_cfg() };
    let corpus = generate_corpus(&cfg, &ContaminationConfig::default()).unwrap();
    let test = window(&corpus.test, &arch());
    let sys = System::build(SystemKind::SingleDnn, &arch(), DataDims::of(&test), &TrainConfig::default()).unwrap();
    let mut ck = sys.checkpoint();
    let mut rng = RngStream::new(11);
    let head = &mut ck.networks[0].1.heads[0];
    let (r, c) = (head.weight.rows(), head.weight.cols());
    head.weight = gaussian(&mut rng, 0.0, 10.0, r, c).unwrap();
    let fer = System::from_checkpoint(&ck).unwrap().evaluate(&test).unwrap()[0].fer;
    let chance = 1.0 - 1.0 / cfg.n_cd() as f64;
    assert!((fer - chance).abs() < 0.02, "FER {fer} vs chance {chance}");
}

#[test]
fn same_seed_reproduces_corpora_and_reports() {
    let run = || {
        let corpus = generate_corpus(&corpus_cfg(), &ContaminationConfig::default()).unwrap();
        let bytes = ndnn::datagen::dataset_to_bytes(&corpus.train);
        let cfg = TrainConfig { max_epochs: 2, batch_size: 32, levels: 2, ..TrainConfig::default() };
        let (train, dev) = (window(&corpus.train, &arch()), window(&corpus.dev, &arch()));
        let sys = System::build(SystemKind::Netdnn, &arch(), DataDims::of(&train), &cfg).unwrap();
        let out = train_loop(sys, &train, &dev, &cfg, |_, _| Ok(())).unwrap();
        let reports: Vec<_> = out.reports.iter().map(|r| r.without_timing()).collect();
        (bytes, reports)
    };
    let (b1, r1) = run();
    let (b2, r2) = run();
    assert_eq!(b1, b2);
    assert_eq!(r1, r2);
}
