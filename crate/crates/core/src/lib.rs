//! Multimodal emotion recognition from speech audio and transcripts.
//!
//! The crate is layered bottom-up:
//!
//! * [`autograd`]: tape-based reverse-mode differentiation, Adam, gradient checking.
//! * [`audio`]: WAV decoding, log-mel (MFSC) maps with deltas, low-level descriptors.
//! * [`text`]: tokenizer, part-of-speech tagger, embedding tables.
//! * [`model`]: the word/POS CNNs, the MFSC CNN-LSTM, the LLD DNN and the fusion network.
//! * [`train`]: labels, folds, training regimes, metrics, the ablation grid.
//! * [`io`]: manifests, run configuration, the synthetic corpus, dataset assembly.
//!
//! All arithmetic is `f64`. Heavy kernels go through [`parallel`], which
//! falls back to sequential execution without the `parallel` feature.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod autograd;
pub mod error;
pub mod io;
pub mod model;
pub mod parallel;
pub mod text;
pub mod train;

pub use error::{Error, Result};

/// Emotion classes in label-index order.
pub const CLASSES: [&str; 5] = ["Ang", "Hap", "Sad", "Neu", "Fru"];

/// Number of emotion classes.
pub const NUM_CLASSES: usize = CLASSES.len();
