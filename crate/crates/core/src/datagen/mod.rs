//! Synthetic contaminated-speech corpora in feature space.
//!
//! Clean trajectories come from a phone Markov chain whose sub-states emit
//! Gaussian frames around fixed mean vectors. Contamination smears every
//! feature dimension with a decaying FIR filter and adds noise at a fixed
//! per-utterance SNR.

mod io;
mod window;

use serde::{Deserialize, Serialize};

pub use io::{dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset, DATASET_MAGIC};
pub use window::{Batch, WindowedSet};

use crate::error::{usage, Result};
use crate::numeric::{gaussian, RngStream};

/// Geometric parameter giving a mean phone duration of 27 frames for three
/// sub-states, long enough that the 21-frame input window usually sees more of
/// the current phone than the 11-frame recognizer window does.
pub const DEFAULT_DWELL_P: f64 = 0.04;
/// AR(1) coefficient of slowly varying noise.
pub const SLOW_NOISE_AR: f64 = 0.95;
const MAX_COVERAGE_ATTEMPTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_mono: usize,
    pub states_per_phone: usize,
    pub feat_dim: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub frames_per_utt: usize,
    pub dwell_p: f64,
    pub mean_scale: f64,
    /// Scale of a per-dimension offset shared by every state.
    pub mean_offset: f64,
    /// Fraction of the state-mean variance common to all states of a phone.
    pub phone_share: f64,
    pub emission_std: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_mono: 10,
            states_per_phone: 3,
            feat_dim: 13,
            n_train: 300,
            n_dev: 60,
            n_test: 60,
            frames_per_utt: 200,
            dwell_p: DEFAULT_DWELL_P,
            mean_scale: 1.0,
            mean_offset: 6.0,
            phone_share: 0.5,
            emission_std: 0.2,
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn n_cd(&self) -> usize {
        self.n_mono * self.states_per_phone
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mono == 0 || self.states_per_phone == 0 || self.feat_dim == 0 {
            return usage("n_mono, states_per_phone and feat_dim must be at least 1");
        }
        if self.n_cd() > u16::MAX as usize + 1 {
            return usage("too many cd classes for 16-bit labels");
        }
        if !(self.dwell_p > 0.0 && self.dwell_p <= 1.0) {
            return usage(format!("dwell_p {} must lie in (0, 1]", self.dwell_p));
        }
        if !(0.0..=1.0).contains(&self.phone_share) {
            return usage(format!("phone_share {} must lie in [0, 1]", self.phone_share));
        }
        if !(self.mean_scale >= 0.0) || !(self.emission_std >= 0.0) || !(self.mean_offset >= 0.0) {
            return usage("mean_scale, mean_offset and emission_std must be non-negative");
        }
        Ok(())
    }

    /// Expected phone duration in frames.
    pub fn mean_dwell(&self) -> f64 {
        (self.states_per_phone - 1) as f64 + 1.0 / self.dwell_p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseColor {
    Iid,
    SlowlyVarying,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContaminationConfig {
    pub fir_len: usize,
    pub decay: f64,
    /// `None` (JSON `null`) or `+∞` disables the additive noise.
    pub snr_db: Option<f64>,
    pub noise_color: NoiseColor,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig { fir_len: 8, decay: 0.5, snr_db: Some(10.0), noise_color: NoiseColor::Iid }
    }
}

impl ContaminationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fir_len == 0 {
            return usage("fir_len must be at least 1");
        }
        if !self.decay.is_finite() || self.decay < 0.0 {
            return usage(format!("decay {} must be finite and non-negative", self.decay));
        }
        if let Some(s) = self.snr_db {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return usage("snr_db must be a number or +inf");
            }
        }
        Ok(())
    }

    /// Normalized taps `h_k ∝ decay^k`, first tap 1 before normalization.
    pub fn taps(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.fir_len).map(|k| if k == 0 { 1.0 } else { self.decay.powi(k as i32) }).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|h| h / total).collect()
    }

    fn noise_enabled(&self) -> bool {
        matches!(self.snr_db, Some(s) if s.is_finite())
    }
}

/// Feature normalization applied when windowing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// `T × D`, row-major.
    pub noisy: Vec<f32>,
    pub clean: Vec<f32>,
    pub cd: Vec<u16>,
    pub mono: Vec<u16>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.cd.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feat_dim: usize,
    pub states_per_phone: usize,
    pub n_mono: usize,
    pub utterances: Vec<Utterance>,
    pub normalization: Option<Normalization>,
    /// Free-form provenance (configs, seed, split) echoed into file headers.
    pub meta: serde_json::Value,
}

impl Dataset {
    pub fn n_cd(&self) -> usize {
        self.n_mono * self.states_per_phone
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::frames).sum()
    }

    /// Checks label ranges, lengths and the `mono = cd / S` relation.
    pub fn validate(&self) -> Result<()> {
        let (d, s, c) = (self.feat_dim, self.states_per_phone, self.n_cd());
        for (i, u) in self.utterances.iter().enumerate() {
            let t = u.frames();
            if u.mono.len() != t || u.noisy.len() != t * d || u.clean.len() != t * d {
                return usage(format!("utterance {i}: inconsistent lengths"));
            }
            for (&cd, &mono) in u.cd.iter().zip(&u.mono) {
                if cd as usize >= c || mono as usize != cd as usize / s {
                    return usage(format!("utterance {i}: label {cd}/{mono} out of range"));
                }
            }
        }
        if let Some(n) = &self.normalization {
            if n.mean.len() != d || n.std.len() != d || n.std.iter().any(|&v| !(v > 0.0)) {
                return usage("normalization does not match the feature dimension");
            }
        }
        Ok(())
    }

    /// Per-class frame counts over cd labels.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cd()];
        for u in &self.utterances {
            for &c in &u.cd {
                counts[c as usize] += 1;
            }
        }
        counts
    }
}

/// Per-(phone, state) emission means, drawn once from the `means` substream.
fn emission_means(cfg: &CorpusConfig, data_rng: &RngStream) -> Result<Vec<f64>> {
    let mut m = gaussian(&mut data_rng.substream("means"), 0.0, cfg.mean_scale, cfg.n_cd(), cfg.feat_dim)?;
    if cfg.phone_share > 0.0 {
        let shared = gaussian(&mut data_rng.substream("phone-means"), 0.0, cfg.mean_scale, cfg.n_mono, cfg.feat_dim)?;
        let (a, b) = (cfg.phone_share.sqrt(), (1.0 - cfg.phone_share).sqrt());
        for c in 0..cfg.n_cd() {
            let p = c / cfg.states_per_phone;
            for d in 0..cfg.feat_dim {
                m.set(c, d, a * shared.get(p, d) + b * m.get(c, d));
            }
        }
    }
    if cfg.mean_offset > 0.0 {
        let offset = gaussian(&mut data_rng.substream("offset"), 0.0, cfg.mean_offset, 1, cfg.feat_dim)?;
        for c in 0..cfg.n_cd() {
            for (d, &o) in offset.data().iter().enumerate() {
                m.set(c, d, m.get(c, d) + o);
            }
        }
    }
    Ok(m.into_vec())
}

/// Phone duration `S − 1 + G` with `G ~ Geometric(p)` on {1, 2, ...}.
fn sample_dwell(cfg: &CorpusConfig, rng: &mut RngStream) -> usize {
    let mut g = 1;
    while rng.uniform() >= cfg.dwell_p {
        g += 1;
    }
    cfg.states_per_phone - 1 + g
}

fn gen_utterance(cfg: &CorpusConfig, means: &[f64], frames: usize, rng: &mut RngStream) -> Utterance {
    let (d, s) = (cfg.feat_dim, cfg.states_per_phone);
    let mut cd = Vec::with_capacity(frames);
    let mut phone = rng.below(cfg.n_mono);
    while cd.len() < frames {
        let dwell = sample_dwell(cfg, rng);
        for i in 0..dwell {
            cd.push((phone * s + i * s / dwell) as u16);
        }
        if cfg.n_mono > 1 {
            let next = rng.below(cfg.n_mono - 1);
            phone = if next >= phone { next + 1 } else { next };
        }
    }
    cd.truncate(frames);
    let mut clean = Vec::with_capacity(frames * d);
    for &c in &cd {
        let mu = &means[c as usize * d..(c as usize + 1) * d];
        for &m in mu {
            clean.push((m + cfg.emission_std * rng.standard_normal()) as f32);
        }
    }
    let mono = cd.iter().map(|&c| c / s as u16).collect();
    Utterance { noisy: clean.clone(), clean, cd, mono }
}

/// Clean utterances for one split; `noisy` is a copy of `clean`.
///
/// `split` labels the per-utterance substreams so that splits never share
/// draws while sharing the emission means.
pub fn gen_clean(cfg: &CorpusConfig, split: &str, n_utt: usize, rng: &RngStream) -> Result<Dataset> {
    cfg.validate()?;
    let data = rng.substream("data");
    let means = emission_means(cfg, &data)?;
    let utterances = (0..n_utt)
        .map(|i| gen_utterance(cfg, &means, cfg.frames_per_utt, &mut data.substream(&format!("{split}/{i}"))))
        .collect();
    Ok(Dataset {
        feat_dim: cfg.feat_dim,
        states_per_phone: cfg.states_per_phone,
        n_mono: cfg.n_mono,
        utterances,
        normalization: None,
        meta: serde_json::json!({ "split": split }),
    })
}

/// FIR-smeared copy of one utterance's clean features (zero history before
/// the first frame).
pub fn reverberate(clean: &[f32], feat_dim: usize, taps: &[f64]) -> Vec<f64> {
    let frames = clean.len() / feat_dim;
    let mut out = vec![0.0; clean.len()];
    for t in 0..frames {
        for (k, &h) in taps.iter().enumerate().take(t + 1) {
            let src = &clean[(t - k) * feat_dim..(t - k + 1) * feat_dim];
            for (o, &c) in out[t * feat_dim..(t + 1) * feat_dim].iter_mut().zip(src) {
                *o += h * c as f64;
            }
        }
    }
    out
}

/// `10·log10(‖reverb‖² / ‖noisy − reverb‖²)` for one utterance.
pub fn measured_snr_db(utt: &Utterance, feat_dim: usize, cfg: &ContaminationConfig) -> f64 {
    let reverb = reverberate(&utt.clean, feat_dim, &cfg.taps());
    let signal: f64 = reverb.iter().map(|v| v * v).sum();
    let noise: f64 = reverb.iter().zip(&utt.noisy).map(|(r, &n)| (n as f64 - r).powi(2)).sum();
    10.0 * (signal / noise).log10()
}

fn noise_sequence(len: usize, feat_dim: usize, color: NoiseColor, rng: &mut RngStream) -> Vec<f64> {
    let mut n: Vec<f64> = (0..len).map(|_| rng.standard_normal()).collect();
    if color == NoiseColor::SlowlyVarying {
        let innov = (1.0 - SLOW_NOISE_AR * SLOW_NOISE_AR).sqrt();
        for i in feat_dim..len {
            n[i] = SLOW_NOISE_AR * n[i - feat_dim] + innov * n[i];
        }
    }
    n
}

/// Applies reverberation and additive noise; labels and clean features are
/// copied unchanged. Utterance `i` draws noise from substream `noise/{i}`.
pub fn contaminate(clean: &Dataset, cfg: &ContaminationConfig, rng: &RngStream) -> Result<Dataset> {
    cfg.validate()?;
    let taps = cfg.taps();
    let noise_rng = rng.substream("noise");
    let mut out = clean.clone();
    for (i, utt) in out.utterances.iter_mut().enumerate() {
        let reverb = reverberate(&utt.clean, clean.feat_dim, &taps);
        let noisy: Vec<f64> = match cfg.snr_db {
            Some(snr) if cfg.noise_enabled() && !reverb.is_empty() => {
                let n = noise_sequence(
                    reverb.len(),
                    clean.feat_dim,
                    cfg.noise_color,
                    &mut noise_rng.substream(&i.to_string()),
                );
                let ps: f64 = reverb.iter().map(|v| v * v).sum();
                let pn: f64 = n.iter().map(|v| v * v).sum();
                let gain = if pn > 0.0 { (ps / pn / 10f64.powf(snr / 10.0)).sqrt() } else { 0.0 };
                reverb.iter().zip(&n).map(|(r, v)| r + gain * v).collect()
            }
            _ => reverb,
        };
        utt.noisy = noisy.into_iter().map(|v| v as f32).collect();
    }
    out.meta = serde_json::json!({ "split": clean.meta.get("split"), "contamination": cfg });
    Ok(out)
}

/// Per-dimension mean and standard deviation of clean features.
pub fn clean_statistics(ds: &Dataset) -> Result<Normalization> {
    let d = ds.feat_dim;
    let n = ds.total_frames();
    if n < 2 {
        return usage("need at least two frames for normalization statistics");
    }
    let mut mean = vec![0.0; d];
    for u in &ds.utterances {
        for row in u.clean.chunks_exact(d) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for u in &ds.utterances {
        for row in u.clean.chunks_exact(d) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt().max(1e-8)).collect();
    Ok(Normalization { mean, std })
}

/// The three splits of a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// How many coverage retries were needed before every cd class showed up
    /// in the training split.
    pub attempts: usize,
}

/// Generates train/dev/test, contaminates them and attaches clean-train
/// normalization to every split.
///
/// If some cd class never occurs in the training split, generation restarts
/// from a fresh substream `retry{k}` of the seed.
pub fn generate_corpus(corpus: &CorpusConfig, contamination: &ContaminationConfig) -> Result<Corpus> {
    corpus.validate()?;
    contamination.validate()?;
    let base = RngStream::new(corpus.seed);
    for attempt in 0..MAX_COVERAGE_ATTEMPTS {
        let rng = if attempt == 0 { base.clone() } else { base.substream(&format!("retry{attempt}")) };
        let clean_train = gen_clean(corpus, "train", corpus.n_train, &rng)?;
        if clean_train.class_counts().contains(&0) {
            continue;
        }
        let norm = clean_statistics(&clean_train)?;
        let noise = rng.substream("contamination");
        let mut splits = Vec::with_capacity(3);
        for (name, n, clean) in [
            ("train", corpus.n_train, Some(clean_train)),
            ("dev", corpus.n_dev, None),
            ("test", corpus.n_test, None),
        ] {
            let clean = match clean {
                Some(c) => c,
                None => gen_clean(corpus, name, n, &rng)?,
            };
            let mut ds = contaminate(&clean, contamination, &noise.substream(name))?;
            ds.normalization = Some(norm.clone());
            ds.meta = serde_json::json!({
                "split": name,
                "corpus": corpus,
                "contamination": contamination,
                "attempt": attempt,
            });
            splits.push(ds);
        }
        let test = splits.pop().unwrap();
        let dev = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        return Ok(Corpus { train, dev, test, attempts: attempt + 1 });
    }
    usage(format!("no corpus covering all cd classes after {MAX_COVERAGE_ATTEMPTS} attempts; enlarge the training split"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig { n_train: 20, n_dev: 4, n_test: 4, frames_per_utt: 60, ..CorpusConfig::default() }
    }

    #[test]
    fn mean_offset_shifts_every_state_alike() {
        let rng = RngStream::new(4).substream("data");
        let base = emission_means(&CorpusConfig { mean_offset: 0.0, ..small() }, &rng).unwrap();
        let moved = emission_means(&CorpusConfig { mean_offset: 3.0, ..small() }, &rng).unwrap();
        let d = small().feat_dim;
        let shift: Vec<f64> = (0..d).map(|k| moved[k] - base[k]).collect();
        assert!(shift.iter().any(|v| v.abs() > 0.1));
        for (i, (m, b)) in moved.iter().zip(&base).enumerate() {
            assert!((m - b - shift[i % d]).abs() < 1e-12);
        }
    }

    #[test]
    fn phone_share_ties_states_of_a_phone() {
        let rng = RngStream::new(4).substream("data");
        let cfg = small();
        let d = cfg.feat_dim;
        let state = |m: &[f64], c: usize| m[c * d..(c + 1) * d].to_vec();
        let tied = emission_means(&CorpusConfig { phone_share: 1.0, ..small() }, &rng).unwrap();
        let free = emission_means(&CorpusConfig { phone_share: 0.0, ..small() }, &rng).unwrap();
        for p in 0..cfg.n_mono {
            let s = cfg.states_per_phone;
            for k in 1..s {
                assert_eq!(state(&tied, p * s), state(&tied, p * s + k));
                assert_ne!(state(&free, p * s), state(&free, p * s + k));
            }
        }
        assert_ne!(state(&tied, 0), state(&tied, cfg.states_per_phone));
        assert!(CorpusConfig { phone_share: 1.5, ..small() }.validate().is_err());
    }

    #[test]
    fn zero_emission_noise_gives_identical_state_frames() {
        let cfg = CorpusConfig { emission_std: 0.0, ..small() };
        let ds = gen_clean(&cfg, "train", 5, &RngStream::new(3)).unwrap();
        let d = cfg.feat_dim;
        let mut seen: Vec<Option<Vec<f32>>> = vec![None; cfg.n_cd()];
        for u in &ds.utterances {
            for (t, &c) in u.cd.iter().enumerate() {
                let f = u.clean[t * d..(t + 1) * d].to_vec();
                match &seen[c as usize] {
                    Some(prev) => assert_eq!(prev, &f),
                    None => seen[c as usize] = Some(f),
                }
            }
        }
    }

    #[test]
    fn labels_are_consistent() {
        let cfg = small();
        let ds = gen_clean(&cfg, "train", 10, &RngStream::new(4)).unwrap();
        ds.validate().unwrap();
        for u in &ds.utterances {
            assert_eq!(u.frames(), 60);
            for (&c, &m) in u.cd.iter().zip(&u.mono) {
                assert_eq!(m, c / 3);
            }
        }
    }

    #[test]
    fn states_run_left_to_right_within_a_phone() {
        let ds = gen_clean(&small(), "train", 10, &RngStream::new(5)).unwrap();
        for u in &ds.utterances {
            for w in u.cd.windows(2) {
                let (a, b) = (w[0] as usize, w[1] as usize);
                if a / 3 == b / 3 {
                    assert!(b % 3 == a % 3 || b % 3 == a % 3 + 1);
                } else {
                    assert_eq!(a % 3, 2);
                    assert_eq!(b % 3, 0);
                }
            }
        }
    }

    #[test]
    fn dwell_mean_matches_geometric() {
        let cfg = CorpusConfig { frames_per_utt: 10_000, ..small() };
        let ds = gen_clean(&cfg, "train", 12, &RngStream::new(6)).unwrap();
        let mut lengths = Vec::new();
        for u in &ds.utterances {
            let mut run = 1;
            for w in u.mono.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                } else {
                    lengths.push(run);
                    run = 1;
                }
            }
        }
        let frames: usize = lengths.iter().sum();
        assert!(frames > 100_000);
        let mean = frames as f64 / lengths.len() as f64;
        let want = cfg.mean_dwell();
        assert!((mean - want).abs() / want < 0.05, "mean dwell {mean} vs {want}");
    }

    #[test]
    fn identity_contamination() {
        let clean = gen_clean(&small(), "train", 3, &RngStream::new(7)).unwrap();
        for snr in [None, Some(f64::INFINITY)] {
            let cfg = ContaminationConfig { fir_len: 1, snr_db: snr, ..ContaminationConfig::default() };
            let out = contaminate(&clean, &cfg, &RngStream::new(8)).unwrap();
            for u in &out.utterances {
                assert_eq!(u.noisy, u.clean);
            }
        }
    }

    #[test]
    fn snr_is_exact_per_utterance() {
        let clean = gen_clean(&small(), "train", 10, &RngStream::new(9)).unwrap();
        for color in [NoiseColor::Iid, NoiseColor::SlowlyVarying] {
            let cfg = ContaminationConfig { noise_color: color, ..ContaminationConfig::default() };
            let out = contaminate(&clean, &cfg, &RngStream::new(10)).unwrap();
            for u in &out.utterances {
                let snr = measured_snr_db(u, 13, &cfg);
                assert!((snr - 10.0).abs() < 0.01, "snr {snr}");
            }
        }
    }

    #[test]
    fn contamination_preserves_labels_and_clean() {
        let clean = gen_clean(&small(), "train", 4, &RngStream::new(11)).unwrap();
        let out = contaminate(&clean, &ContaminationConfig::default(), &RngStream::new(12)).unwrap();
        for (a, b) in clean.utterances.iter().zip(&out.utterances) {
            assert_eq!(a.clean, b.clean);
            assert_eq!(a.cd, b.cd);
            assert_eq!(a.mono, b.mono);
            assert_ne!(a.clean, b.noisy);
        }
    }

    #[test]
    fn taps_are_normalized() {
        for (len, decay) in [(1, 0.5), (8, 0.5), (20, 0.9), (5, 0.0), (3, 1.7)] {
            let cfg = ContaminationConfig { fir_len: len, decay, ..ContaminationConfig::default() };
            let taps = cfg.taps();
            assert_eq!(taps.len(), len);
            assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_keeps_its_level() {
        let taps = ContaminationConfig::default().taps();
        let clean = vec![2.5f32; 30 * 2];
        let r = reverberate(&clean, 2, &taps);
        for v in &r[2 * taps.len()..] {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_is_deterministic_and_covers_classes() {
        let a = generate_corpus(&small(), &ContaminationConfig::default()).unwrap();
        let b = generate_corpus(&small(), &ContaminationConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(!a.train.class_counts().contains(&0));
        assert_eq!(a.train.normalization, a.test.normalization);
        assert_ne!(a.train.utterances[0], a.dev.utterances[0]);
        let c = generate_corpus(&CorpusConfig { seed: 2, ..small() }, &ContaminationConfig::default()).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn coverage_retry_or_error() {
        let tiny = CorpusConfig { n_train: 1, frames_per_utt: 3, ..small() };
        assert!(generate_corpus(&tiny, &ContaminationConfig::default()).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(CorpusConfig { n_mono: 0, ..small() }.validate().is_err());
        assert!(CorpusConfig { dwell_p: 0.0, ..small() }.validate().is_err());
        assert!(ContaminationConfig { fir_len: 0, ..Default::default() }.validate().is_err());
        assert!(ContaminationConfig { snr_db: Some(f64::NAN), ..Default::default() }.validate().is_err());
    }
}
