//! Seeded synthetic corpus with class-dependent audio and transcripts.
//!
//! Class `c` (sample `i` has class `i mod 5`) fixes a fundamental-frequency
//! band `[110 + 55c, 135 + 55c]` Hz, a harmonic roll-off, an energy envelope
//! and a noise level. Transcripts mix filler words with words from a
//! per-class pool; `correlation` is the probability that the pool matches the
//! audio class (otherwise it is drawn uniformly).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::wav::write_wav;
use crate::autograd::init::{derive_seed, stream};
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub seed: u64,
    /// Probability that a transcript is drawn from its own class's pool.
    pub correlation: f64,
    pub sample_rate: u32,
    pub embedding_dim: usize,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 100,
            seed: 0,
            correlation: 1.0,
            sample_rate: 16_000,
            embedding_dim: 300,
            min_secs: 0.9,
            max_secs: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub labels: Vec<usize>,
    /// Base F0 drawn for each clip (its mean over the clip).
    pub f0: Vec<f64>,
    /// Pool each transcript was drawn from.
    pub text_classes: Vec<usize>,
}

const RAW_LABELS: [[&str; 2]; NUM_CLASSES] = [
    ["angry", "ang"],
    ["happy", "excited"],
    ["sad", "sad"],
    ["neutral", "neu"],
    ["frustrated", "fru"],
];

const POOLS: [&[&str]; NUM_CLASSES] = [
    &[
        "furious",
        "hate",
        "stupid",
        "damn",
        "shut",
        "yell",
        "outrageous",
        "fight",
        "mad",
        "liar",
        "enough",
        "rage",
    ],
    &[
        "wonderful",
        "great",
        "love",
        "amazing",
        "yay",
        "fantastic",
        "glad",
        "awesome",
        "fun",
        "delighted",
        "smile",
        "celebrate",
    ],
    &[
        "miss", "lonely", "cry", "lost", "sorry", "hurt", "tears", "gone", "alone", "grief", "tired", "empty",
    ],
    &[
        "okay", "schedule", "report", "tuesday", "address", "table", "meeting", "noted", "paper", "street", "usual",
        "number",
    ],
    &[
        "again",
        "why",
        "wait",
        "nothing",
        "works",
        "stuck",
        "ridiculous",
        "seriously",
        "broken",
        "forms",
        "line",
        "whatever",
    ],
];

const FILLERS: &[&str] = &[
    "i", "you", "it", "the", "a", "is", "was", "so", "really", "just", "and", "this", "that", "we", "to",
];

/// Band edges, harmonic count, harmonic roll-off exponent, peak amplitude
/// and noise standard deviation per class.
const F0_LOW: f64 = 110.0;
const F0_STEP: f64 = 55.0;
const F0_WIDTH: f64 = 25.0;
const HARMONICS: [usize; NUM_CLASSES] = [6, 5, 3, 4, 6];
const ROLLOFF: [f64; NUM_CLASSES] = [1.0, 1.2, 2.0, 1.5, 1.0];
const PEAK: [f64; NUM_CLASSES] = [0.7, 0.5, 0.25, 0.35, 0.6];
const NOISE: [f64; NUM_CLASSES] = [0.03, 0.015, 0.006, 0.008, 0.025];

/// F0 band `[lo, hi)` of class `c`.
pub fn f0_band(c: usize) -> (f64, f64) {
    let lo = F0_LOW + F0_STEP * c as f64;
    (lo, lo + F0_WIDTH)
}

fn envelope(c: usize, t: f64, dur: f64) -> f64 {
    let shape = match c {
        0 => (t / 0.02).min(1.0),
        1 => 0.6 + 0.4 * (2.0 * PI * 4.0 * t).sin().powi(2),
        2 => (1.0 - (-t / 0.2).exp()) * (-t / 1.0).exp(),
        3 => 0.8,
        _ => 0.5 + 0.5 * (2.0 * PI * 2.5 * t).sin().abs(),
    };
    // 10 ms fades at both ends.
    let fade = (t / 0.01).min(1.0).min(((dur - t) / 0.01).max(0.0));
    shape * fade
}

/// One clip of class `c` with base frequency `f0`.
pub fn synth_clip(c: usize, f0: f64, secs: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let n = (secs * sr).round() as usize;
    let h = HARMONICS[c];
    let amps: Vec<f64> = (1..=h).map(|k| (k as f64).powf(-ROLLOFF[c])).collect();
    let norm: f64 = amps.iter().sum();
    let phases: Vec<f64> = (0..h).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let noise = Normal::new(0.0, NOISE[c]).expect("positive std");
    // Slow ±1% vibrato keeps the mean F0 at `f0`.
    let vib_rate = 5.0;
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let tone: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, p))| a * ((k + 1) as f64 * phase + p).sin())
                .sum::<f64>()
                / norm;
            (PEAK[c] * envelope(c, t, secs) * tone + noise.sample(rng)).clamp(-1.0, 1.0)
        })
        .collect()
}

fn transcript(pool: usize, rng: &mut impl Rng) -> String {
    let len = rng.random_range(5..=10);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.random_bool(0.5) {
                POOLS[pool][rng.random_range(0..POOLS[pool].len())]
            } else {
                FILLERS[rng.random_range(0..FILLERS.len())]
            }
        })
        .collect();
    words.join(" ")
}

/// Every word the generator can emit, in a fixed order.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = FILLERS.to_vec();
    for p in POOLS {
        v.extend_from_slice(p);
    }
    v
}

/// Writes `manifest.tsv`, `embeddings.txt` and `wav/<id>.wav` under `dir`.
/// Identical configurations produce byte-identical files.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.size < 10 {
        return Err(Error::InvalidArgument(format!("corpus size {} is below 10", cfg.size)));
    }
    if !(0.0..=1.0).contains(&cfg.correlation) {
        return Err(Error::InvalidArgument(format!(
            "correlation {} outside [0, 1]",
            cfg.correlation
        )));
    }
    if !(cfg.min_secs > 0.0 && cfg.max_secs >= cfg.min_secs) {
        return Err(Error::InvalidArgument("invalid clip duration range".into()));
    }
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut manifest = String::new();
    let mut labels = Vec::with_capacity(cfg.size);
    let mut f0s = Vec::with_capacity(cfg.size);
    let mut text_classes = Vec::with_capacity(cfg.size);
    for i in 0..cfg.size {
        let c = i % NUM_CLASSES;
        let mut rng = stream(derive_seed(cfg.seed, &[i as u64]), "synth/sample");
        let (lo, hi) = f0_band(c);
        let f0 = rng.random_range(lo..hi);
        let secs = rng.random_range(cfg.min_secs..=cfg.max_secs);
        let samples = synth_clip(c, f0, secs, cfg.sample_rate, &mut rng);
        let pool = if rng.random_bool(cfg.correlation) {
            c
        } else {
            rng.random_range(0..NUM_CLASSES)
        };
        let text = transcript(pool, &mut rng);
        let id = format!("syn{i:04}");
        let rel = format!("wav/{id}.wav");
        write_wav(&dir.join(&rel), &samples, cfg.sample_rate)?;
        let label = RAW_LABELS[c][(i / NUM_CLASSES) % 2];
        let _ = writeln!(manifest, "{id}\t{rel}\t{label}\t{text}");
        labels.push(c);
        f0s.push(f0);
        text_classes.push(pool);
    }
    let manifest_path = dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let vocab = vocabulary();
    let mut emb = format!("{} {}\n", vocab.len(), cfg.embedding_dim);
    let mut rng = stream(cfg.seed, "synth/embeddings");
    let dist = Normal::new(0.0, 0.3).expect("positive std");
    for w in &vocab {
        emb.push_str(w);
        for _ in 0..cfg.embedding_dim {
            let _ = write!(emb, " {:.6}", dist.sample(&mut rng));
        }
        emb.push('\n');
    }
    let emb_path = dir.join("embeddings.txt");
    fs::write(&emb_path, emb).map_err(|e| Error::io(&emb_path, e))?;

    Ok(SynthCorpus {
        manifest: manifest_path,
        embeddings: emb_path,
        labels,
        f0: f0s,
        text_classes,
    })
}
