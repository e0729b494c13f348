//! Built-in low-level descriptor extractor.
//!
//! Per-frame streams: F0, jitter, shimmer, RMS energy, zero-crossing rate,
//! spectral flatness and MFCC 1..=13. Each stream is summarized by eleven
//! functionals; a final coordinate records the voiced-frame fraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::mfsc::{power_spectra, MelFilterbank};
use super::{AudioClip, DspConfig};
use crate::error::Result;

pub const N_MFCC: usize = 13;
pub const N_STREAMS: usize = 6 + N_MFCC;
pub const N_FUNCTIONALS: usize = 11;
/// Output dimension of [`extract_lld`].
pub const LLD_DIM: usize = N_STREAMS * N_FUNCTIONALS + 1;

pub const STREAM_NAMES: [&str; N_STREAMS] = [
    "f0", "jitter", "shimmer", "rms", "zcr", "flatness", "mfcc1", "mfcc2", "mfcc3", "mfcc4", "mfcc5", "mfcc6", "mfcc7",
    "mfcc8", "mfcc9", "mfcc10", "mfcc11", "mfcc12", "mfcc13",
];

pub const FUNCTIONAL_NAMES: [&str; N_FUNCTIONALS] = [
    "mean", "std", "min", "max", "range", "median", "q1", "q3", "iqr", "skewness", "kurtosis",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LldConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Frames with RMS below this are unvoiced regardless of periodicity.
    pub silence_rms: f64,
}

impl Default for LldConfig {
    fn default() -> Self {
        Self {
            f0_min: 60.0,
            f0_max: 400.0,
            voicing_threshold: 0.45,
            silence_rms: 1e-4,
        }
    }
}

/// Index of functional `f` of stream `s` in the output vector.
pub fn feature_index(stream: usize, functional: usize) -> usize {
    stream * N_FUNCTIONALS + functional
}

pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = STREAM_NAMES
        .iter()
        .flat_map(|s| FUNCTIONAL_NAMES.iter().map(move |f| format!("{s}_{f}")))
        .collect();
    names.push("voiced_fraction".into());
    names
}

/// F0 estimate of one frame by normalized autocorrelation, or `None` when
/// unvoiced. Returns `(f0_hz, period_samples)`.
pub fn frame_f0(frame: &[f64], sample_rate: u32, cfg: &LldConfig) -> Option<(f64, f64)> {
    let sr = f64::from(sample_rate);
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms < cfg.silence_rms {
        return None;
    }
    let lo = (sr / cfg.f0_max).floor().max(1.0) as usize;
    let hi = ((sr / cfg.f0_min).ceil() as usize).min(x.len() - 2);
    if lo + 1 >= hi {
        return None;
    }
    let r = |tau: usize| {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for n in 0..x.len() - tau {
            xy += x[n] * x[n + tau];
            xx += x[n] * x[n];
            yy += x[n + tau] * x[n + tau];
        }
        if xx <= 0.0 || yy <= 0.0 {
            0.0
        } else {
            xy / (xx * yy).sqrt()
        }
    };
    let corr: Vec<f64> = (lo - 1..=hi + 1).map(r).collect();
    let at = |tau: usize| corr[tau + 1 - lo];
    let best = (lo..=hi).map(at).fold(f64::NEG_INFINITY, f64::max);
    if best < cfg.voicing_threshold {
        return None;
    }
    // Smallest-lag local peak close to the global best avoids octave errors
    // from multiples of the true period.
    let tau = (lo..=hi).find(|&t| {
        let v = at(t);
        v >= 0.9 * best && v >= at(t - 1) && v >= at(t + 1)
    })?;
    let (a, b, c) = (at(tau - 1), at(tau), at(tau + 1));
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let period = tau as f64 + offset;
    Some((sr / period, period))
}

/// The eleven functionals of a sequence (all zeros when empty).
pub fn functionals(values: &[f64]) -> [f64; N_FUNCTIONALS] {
    if values.is_empty() {
        return [0.0; N_FUNCTIONALS];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
    let tiny = 1e-12 * (1.0 + mean.abs());
    let (skew, kurt) = if std > tiny {
        (m3 / std.powi(3), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    [mean, std, min, max, max - min, median, q1, q3, q3 - q1, skew, kurt]
}

/// Extracts the [`LLD_DIM`]-dimensional descriptor vector of a clip.
pub fn extract_lld(clip: &AudioClip, dsp: &DspConfig, cfg: &LldConfig) -> Result<Vec<f64>> {
    let spectra = power_spectra(clip, dsp)?;
    let (len, hop) = (dsp.frame_len(), dsp.hop_len());
    let x = clip.samples();
    let bank = MelFilterbank::new(dsp.n_mels, dsp.n_fft, dsp.sample_rate);
    let m = dsp.n_mels as f64;

    let mut streams: Vec<Vec<f64>> = vec![Vec::new(); N_STREAMS];
    let mut voiced = 0usize;
    let mut prev: Option<(f64, f64)> = None;
    for (t, power) in spectra.iter().enumerate() {
        let frame = &x[t * hop..t * hop + len];
        let rms = (frame.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
        streams[3].push(rms);
        let crossings = frame.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        streams[4].push(crossings as f64 / (len - 1) as f64);

        let floor = dsp.log_floor;
        let log_mean = power.iter().map(|p| p.max(floor).ln()).sum::<f64>() / power.len() as f64;
        let mean = power.iter().map(|p| p.max(floor)).sum::<f64>() / power.len() as f64;
        streams[5].push(log_mean.exp() / mean);

        let log_mel: Vec<f64> = bank.apply(power).iter().map(|e| e.max(floor).ln()).collect();
        for k in 1..=N_MFCC {
            let c = log_mel
                .iter()
                .enumerate()
                .map(|(j, l)| l * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                .sum::<f64>()
                * (2.0 / m).sqrt();
            streams[5 + k].push(c);
        }

        match frame_f0(frame, dsp.sample_rate, cfg) {
            Some((f0, period)) => {
                voiced += 1;
                streams[0].push(f0);
                let peak = frame.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if let Some((p_prev, a_prev)) = prev {
                    streams[1].push((period - p_prev).abs() / p_prev);
                    if a_prev > 0.0 {
                        streams[2].push((peak - a_prev).abs() / a_prev);
                    }
                }
                prev = Some((period, peak));
            }
            None => prev = None,
        }
    }

    let mut out = Vec::with_capacity(LLD_DIM);
    for s in &streams {
        out.extend_from_slice(&functionals(s));
    }
    out.push(voiced as f64 / spectra.len() as f64);
    debug_assert_eq!(out.len(), LLD_DIM);
    Ok(out)
}
