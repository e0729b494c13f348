//! Log-mel filterbank energies (MFSC), regression deltas and segmentation.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, DspConfig};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::parallel;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, spaced evenly in mel from 0 Hz to
/// Nyquist and evaluated at each FFT bin's exact frequency.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_bins: usize,
    centers_hz: Vec<f64>,
    /// `[n_mels][n_bins]`.
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let sr = f64::from(sample_rate);
        let n_bins = n_fft / 2 + 1;
        let top = hz_to_mel(sr / 2.0);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * sr / n_fft as f64;
                        if f > lo && f < c {
                            (f - lo) / (c - lo)
                        } else if f >= c && f < hi {
                            (hi - f) / (hi - c)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            n_bins,
            centers_hz: edges[1..=n_mels].to_vec(),
            weights,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Filter energies for one power spectrum of `n_fft/2 + 1` bins.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.n_bins);
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

fn check_clip(clip: &AudioClip, cfg: &DspConfig) -> Result<usize> {
    cfg.validate()?;
    if clip.sample_rate() != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "clip sample rate {} Hz does not match the configured {} Hz",
            clip.sample_rate(),
            cfg.sample_rate
        )));
    }
    let frames = cfg.frame_count(clip.samples().len());
    if frames == 0 {
        return Err(Error::Audio(format!(
            "clip of {} samples is shorter than one {}-sample frame",
            clip.samples().len(),
            cfg.frame_len()
        )));
    }
    Ok(frames)
}

/// Frame-level power spectra `|DFT(window · frame)|²`, shape `[T][n_fft/2+1]`.
pub fn power_spectra(clip: &AudioClip, cfg: &DspConfig) -> Result<Vec<Vec<f64>>> {
    let frames = check_clip(clip, cfg)?;
    let (len, hop, n_fft) = (cfg.frame_len(), cfg.hop_len(), cfg.n_fft);
    let window = hamming(len);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let x = clip.samples();
    Ok(parallel::map(frames, |t| {
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for (i, b) in buf.iter_mut().take(len).enumerate() {
            b.re = x[t * hop + i] * window[i];
        }
        fft.process(&mut buf);
        buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }))
}

/// Mel filterbank energies before the log, `[T, n_mels]`.
pub fn mel_energies(clip: &AudioClip, cfg: &DspConfig) -> Result<Tensor> {
    let spectra = power_spectra(clip, cfg)?;
    let bank = MelFilterbank::new(cfg.n_mels, cfg.n_fft, cfg.sample_rate);
    let t = spectra.len();
    let data: Vec<f64> = spectra.iter().flat_map(|p| bank.apply(p)).collect();
    Tensor::new(vec![t, cfg.n_mels], data)
}

/// Natural-log mel energies with floor `cfg.log_floor`, `[T, n_mels]`.
pub fn stft_log_mel(clip: &AudioClip, cfg: &DspConfig) -> Result<Tensor> {
    let mut e = mel_energies(clip, cfg)?;
    let floor = cfg.log_floor;
    e.data_mut().iter_mut().for_each(|v| *v = v.max(floor).ln());
    Ok(e)
}

/// Regression deltas along the first axis of a `[T, F]` tensor with edge
/// replication: `d_t = Σ_{n=1..N} n (c_{t+n} - c_{t-n}) / (2 Σ n²)`.
pub fn delta(features: &Tensor, window: usize) -> Result<Tensor> {
    let &[t, f] = features.shape() else {
        return Err(Error::shape(
            "delta",
            format!("expected [T, F], got {:?}", features.shape()),
        ));
    };
    if t == 0 {
        return Err(Error::shape("delta", "empty sequence"));
    }
    let c = features.data();
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let at = |i: isize, j: usize| c[(i.clamp(0, t as isize - 1) as usize) * f + j];
    let mut out = vec![0.0; t * f];
    for i in 0..t {
        for j in 0..f {
            let mut s = 0.0;
            for n in 1..=window {
                let n_i = n as isize;
                s += n as f64 * (at(i as isize + n_i, j) - at(i as isize - n_i, j));
            }
            out[i * f + j] = s / denom;
        }
    }
    Tensor::new(vec![t, f], out)
}

/// `⌊(T − context)/shift⌋ + 1`, with short inputs padded to one segment.
pub fn segment_count(frames: usize, context: usize, shift: usize) -> usize {
    if frames <= context {
        1
    } else {
        (frames - context) / shift + 1
    }
}

/// Segmented MFSC map `[n, context, n_mels, 3]`, planes (static, Δ, ΔΔ).
#[derive(Clone, Debug, PartialEq)]
pub struct MfscMap {
    segments: Tensor,
}

impl MfscMap {
    pub fn new(segments: Tensor) -> Result<Self> {
        match segments.shape() {
            &[n, _, _, 3] if n > 0 => Ok(Self { segments }),
            s => Err(Error::shape("mfsc_map", format!("expected [n, T, F, 3], got {s:?}"))),
        }
    }

    pub fn n(&self) -> usize {
        self.segments.shape()[0]
    }

    pub fn segment_shape(&self) -> [usize; 3] {
        let s = self.segments.shape();
        [s[1], s[2], s[3]]
    }

    pub fn segments(&self) -> &Tensor {
        &self.segments
    }

    pub fn into_tensor(self) -> Tensor {
        self.segments
    }
}

/// Cuts a `[T, F, 3]` stack into overlapping windows of `context` frames
/// starting every `shift` frames, zero-padding to `context` if `T` is short.
pub fn segment_mfsc(stack: &Tensor, context: usize, shift: usize) -> Result<MfscMap> {
    let &[t, f, planes] = stack.shape() else {
        return Err(Error::shape(
            "segment_mfsc",
            format!("expected [T, F, 3], got {:?}", stack.shape()),
        ));
    };
    if planes != 3 || t == 0 || context == 0 || shift == 0 {
        return Err(Error::shape(
            "segment_mfsc",
            format!("stack {:?} with context {context}, shift {shift}", stack.shape()),
        ));
    }
    let n = segment_count(t, context, shift);
    let row = f * planes;
    let src = stack.data();
    let mut out = vec![0.0; n * context * row];
    for s in 0..n {
        let start = s * shift;
        let take = context.min(t - start);
        let dst = &mut out[s * context * row..];
        dst[..take * row].copy_from_slice(&src[start * row..(start + take) * row]);
    }
    MfscMap::new(Tensor::new(vec![n, context, f, planes], out)?)
}

/// Full MFSC pipeline: log-mel, deltas, stacking and segmentation.
pub fn mfsc_map(clip: &AudioClip, cfg: &DspConfig) -> Result<MfscMap> {
    let stat = stft_log_mel(clip, cfg)?;
    let d1 = delta(&stat, cfg.delta_window)?;
    let d2 = delta(&d1, cfg.delta_window)?;
    let (t, f) = (stat.shape()[0], stat.shape()[1]);
    let mut stack = Vec::with_capacity(t * f * 3);
    for i in 0..t * f {
        stack.extend_from_slice(&[stat.data()[i], d1.data()[i], d2.data()[i]]);
    }
    segment_mfsc(&Tensor::new(vec![t, f, 3], stack)?, cfg.context, cfg.shift)
}
