//! 16-bit PCM mono WAV input and output.

use std::path::Path;

use thiserror::Error;

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("channel count {0}: only mono is supported")]
    Channels(u16),
    #[error("unsupported sample format: {0}")]
    Format(String),
    #[error("sample rate {found} Hz does not match the configured {expected} Hz")]
    Rate { expected: u32, found: u32 },
    #[error("no samples")]
    Empty,
    #[error(transparent)]
    Decode(#[from] hound::Error),
}

/// Reads a RIFF PCM 16-bit mono file, scaling samples by `1/32768`.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<AudioClip> {
    let wrap = |source: WavError| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wrap(other.into()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wrap(WavError::Channels(spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wrap(WavError::Format(format!(
            "{:?} {}-bit (need PCM 16-bit)",
            spec.sample_format, spec.bits_per_sample
        ))));
    }
    if spec.sample_rate != expected_rate {
        return Err(wrap(WavError::Rate {
            expected: expected_rate,
            found: spec.sample_rate,
        }));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wrap(e.into()))?;
    if samples.is_empty() {
        return Err(wrap(WavError::Empty));
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes samples in `[-1, 1]` as 16-bit PCM mono, clamping out-of-range
/// values.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            source: other.into(),
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, bits: u16, samples: &[i32]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            if bits == 16 {
                w.write_sample(s as i16).unwrap();
            } else {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn header_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16000, 16, &vec![100; 16000]);
        let clip = read_wav(&p, 16000).unwrap();
        assert_eq!(clip.samples().len(), 16000);
        assert_eq!(clip.sample_rate(), 16000);
    }

    #[test]
    fn min_sample_scales_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16000, 16, &[-32768, 0, 16384]);
        let clip = read_wav(&p, 16000).unwrap();
        assert_eq!(clip.samples(), &[-1.0, 0.0, 0.5]);
    }

    #[test]
    fn rejects_stereo_format_and_rate_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        write_raw(&stereo, 2, 16000, 16, &[0, 0, 1, 1]);
        let err = read_wav(&stereo, 16000).unwrap_err();
        assert!(matches!(
            err,
            Error::Wav {
                source: WavError::Channels(2),
                ..
            }
        ));
        assert!(err.to_string().contains("channel count"));

        let wide = dir.path().join("w.wav");
        write_raw(&wide, 1, 16000, 24, &[0, 1]);
        assert!(matches!(
            read_wav(&wide, 16000),
            Err(Error::Wav {
                source: WavError::Format(_),
                ..
            })
        ));

        let fast = dir.path().join("r.wav");
        write_raw(&fast, 1, 44100, 16, &[0, 1]);
        assert!(matches!(
            read_wav(&fast, 16000),
            Err(Error::Wav {
                source: WavError::Rate {
                    expected: 16000,
                    found: 44100
                },
                ..
            })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_wav(Path::new("/nonexistent/x.wav"), 16000).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn write_then_read_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.wav");
        let s = [0.25, -0.5, 2.0, -2.0];
        write_wav(&p, &s, 8000).unwrap();
        let clip = read_wav(&p, 8000).unwrap();
        assert_eq!(clip.samples(), &[0.25, -0.5, 32767.0 / 32768.0, -1.0]);
    }
}
