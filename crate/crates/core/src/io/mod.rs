//! Manifests, run configuration, the synthetic corpus and dataset assembly.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod synth;

pub use config::{RunConfig, OUTPUT_DIR_ENV};
pub use manifest::{load_manifest, parse_manifest, ManifestEntry};
pub use pipeline::{build_dataset, build_dataset_with_vocab, lld_hash, single_input, FeatureSource};
pub use synth::{generate, SynthConfig, SynthCorpus};
