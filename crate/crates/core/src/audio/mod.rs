//! Acoustic front end: WAV decoding, MFSC maps and low-level descriptors.

pub mod cache;
pub mod external;
pub mod lld;
pub mod mfsc;
pub mod normalize;
pub mod wav;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use lld::{extract_lld, LldConfig, LLD_DIM};
pub use mfsc::{delta, mfsc_map, segment_count, segment_mfsc, stft_log_mel, MelFilterbank, MfscMap};
pub use normalize::MinMaxStats;

/// Mono samples in `[-1, 1]` at a known rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("empty clip".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Audio("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Framing, spectral and segmentation parameters shared by the MFSC and LLD
/// extractors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub log_floor: f64,
    pub delta_window: usize,
    pub context: usize,
    pub shift: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 64,
            log_floor: 1e-10,
            delta_window: 2,
            context: 64,
            shift: 15,
        }
    }
}

impl DspConfig {
    pub fn frame_len(&self) -> usize {
        (f64::from(self.sample_rate) * self.frame_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (f64::from(self.sample_rate) * self.hop_ms / 1000.0).round() as usize
    }

    /// Number of frames for a clip of `n` samples (0 if shorter than a frame).
    pub fn frame_count(&self, n: usize) -> usize {
        let (l, h) = (self.frame_len(), self.hop_len());
        if n < l {
            0
        } else {
            (n - l) / h + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if !(self.frame_ms > 0.0) || self.frame_len() < 2 {
            return Err(Error::config("frame_ms", "frame must span at least 2 samples"));
        }
        if !(self.hop_ms > 0.0) || self.hop_len() == 0 {
            return Err(Error::config("hop_ms", "hop must span at least 1 sample"));
        }
        if self.n_fft < self.frame_len() {
            return Err(Error::config(
                "n_fft",
                format!("{} is shorter than the {}-sample frame", self.n_fft, self.frame_len()),
            ));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels", "must be positive"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor", "must be positive"));
        }
        if self.delta_window == 0 {
            return Err(Error::config("delta_window", "must be positive"));
        }
        if self.context == 0 {
            return Err(Error::config("context", "must be positive"));
        }
        if self.shift == 0 {
            return Err(Error::config("shift", "must be positive"));
        }
        Ok(())
    }

    /// Short content hash; changes whenever any field changes.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("DspConfig serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
