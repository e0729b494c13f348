//! Manifest entries to model-ready datasets.

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::audio::cache::FeatureCache;
use crate::audio::external::ExternalLld;
use crate::audio::wav::read_wav;
use crate::audio::{extract_lld, mfsc_map, AudioClip, DspConfig, LldConfig, MfscMap};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{Branch, BranchSet, SampleInput};
use crate::parallel;
use crate::text::{parse_tags, tag_ids, tokenize, EmbeddingTable, NaiveTagger, PosTagger};
use crate::train::{Dataset, Example};

use super::manifest::ManifestEntry;

/// Where features come from and which ones are needed.
#[derive(Clone, Copy)]
pub struct FeatureSource<'a> {
    pub dsp: &'a DspConfig,
    pub lld: &'a LldConfig,
    pub branches: BranchSet,
    pub cache: Option<&'a FeatureCache>,
    /// Replaces built-in LLD extraction when present. Rows are looked up by
    /// the entry's `lld=` reference, else by its id.
    pub external: Option<&'a ExternalLld>,
}

/// Cache key for LLD vectors: covers both the DSP and the descriptor
/// settings.
pub fn lld_hash(dsp: &DspConfig, lld: &LldConfig) -> String {
    let json = serde_json::to_string(lld).expect("LldConfig serializes");
    let digest = Sha256::digest(format!("{}|{json}", dsp.hash()).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn sample_err(id: &str, e: Error) -> Error {
    match e {
        e @ (Error::Io { .. } | Error::Wav { .. } | Error::Sample { .. }) => e,
        other => Error::Sample {
            id: id.to_string(),
            msg: other.to_string(),
        },
    }
}

fn features_for(
    entry: &ManifestEntry,
    tokens: &[String],
    words: Option<&EmbeddingTable>,
    src: FeatureSource<'_>,
) -> Result<SampleInput> {
    let mut clip: Option<AudioClip> = None;
    let load_clip = |clip: &mut Option<AudioClip>| -> Result<AudioClip> {
        if clip.is_none() {
            *clip = Some(read_wav(&entry.audio, src.dsp.sample_rate)?);
        }
        Ok(clip.clone().expect("just loaded"))
    };
    let mut input = SampleInput::default();
    if src.branches.contains(Branch::Word) {
        let table = words.ok_or_else(|| Error::config("embeddings", "the word branch needs an embedding file"))?;
        input.word_ids = table.ids(tokens);
    }
    if src.branches.contains(Branch::Pos) {
        let tags = match &entry.pos {
            Some(text) => parse_tags(text, tokens.len())?,
            None => NaiveTagger.tag(tokens),
        };
        input.pos_ids = tag_ids(&tags);
    }
    if src.branches.contains(Branch::Mfsc) {
        let mut compute = || -> Result<Tensor> { Ok(mfsc_map(&load_clip(&mut clip)?, src.dsp)?.into_tensor()) };
        let t = match src.cache {
            Some(c) => c.get_or_insert_with(&entry.id, "mfsc", &src.dsp.hash(), compute)?,
            None => compute()?,
        };
        input.mfsc = Some(Arc::new(MfscMap::new(t)?));
    }
    if src.branches.contains(Branch::Lld) {
        let v = match src.external {
            Some(ext) => ext.get(entry.lld.as_deref().unwrap_or(&entry.id))?.to_vec(),
            None => {
                let mut compute = || -> Result<Tensor> {
                    let v = extract_lld(&load_clip(&mut clip)?, src.dsp, src.lld)?;
                    Ok(Tensor::vector(v))
                };
                let t = match src.cache {
                    Some(c) => c.get_or_insert_with(&entry.id, "lld", &lld_hash(src.dsp, src.lld), compute)?,
                    None => compute()?,
                };
                t.data().to_vec()
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Sample {
                id: entry.id.clone(),
                msg: "non-finite LLD value".into(),
            });
        }
        input.lld = Some(v);
    }
    Ok(input)
}

fn assemble(
    entries: &[ManifestEntry],
    tokens: &[Vec<String>],
    table: Option<&EmbeddingTable>,
    src: FeatureSource<'_>,
) -> Result<Vec<Example>> {
    let inputs = parallel::map(entries.len(), |i| {
        features_for(&entries[i], &tokens[i], table, src).map_err(|e| sample_err(&entries[i].id, e))
    });
    entries
        .iter()
        .zip(inputs)
        .map(|(e, input)| {
            Ok(Example {
                id: e.id.clone(),
                label: e.class,
                input: input?,
            })
        })
        .collect()
}

/// Tokenizes, tags and extracts features for every entry (in parallel, one
/// sample per task). The word table is restricted to the corpus vocabulary.
pub fn build_dataset(
    entries: &[ManifestEntry],
    words: Option<&EmbeddingTable>,
    src: FeatureSource<'_>,
) -> Result<Dataset> {
    let tokens: Vec<Vec<String>> = entries.iter().map(|e| tokenize(&e.transcript)).collect();
    let restricted = match words {
        Some(w) if src.branches.contains(Branch::Word) => Some(w.restrict(tokens.iter().flatten().map(String::as_str))),
        _ => None,
    };
    let examples = assemble(entries, &tokens, restricted.as_ref(), src)?;
    Ok(Dataset {
        examples,
        words: restricted,
    })
}

/// Word-id lookup over a trained model's vocabulary.
fn vocab_table(vocab: &[String]) -> Result<EmbeddingTable> {
    EmbeddingTable::new(1, vocab.iter().map(|w| (w.clone(), vec![0.0])).collect())
}

/// Like [`build_dataset`], but word ids index `vocab` (a trained model's
/// table) and no embedding file is needed.
pub fn build_dataset_with_vocab(
    entries: &[ManifestEntry],
    vocab: &[String],
    src: FeatureSource<'_>,
) -> Result<Dataset> {
    let tokens: Vec<Vec<String>> = entries.iter().map(|e| tokenize(&e.transcript)).collect();
    let table = if src.branches.contains(Branch::Word) {
        Some(vocab_table(vocab)?)
    } else {
        None
    };
    Ok(Dataset {
        examples: assemble(entries, &tokens, table.as_ref(), src)?,
        words: None,
    })
}

/// Features of one utterance outside any manifest.
pub fn single_input(
    audio: &Path,
    transcript: &str,
    pos: Option<&str>,
    vocab: &[String],
    src: FeatureSource<'_>,
) -> Result<SampleInput> {
    let entry = ManifestEntry {
        id: "input".into(),
        audio: audio.to_path_buf(),
        label: String::new(),
        class: 0,
        transcript: transcript.into(),
        pos: pos.map(str::to_string),
        lld: None,
        line: 0,
    };
    let src = FeatureSource { cache: None, ..src };
    let data = build_dataset_with_vocab(std::slice::from_ref(&entry), vocab, src)?;
    Ok(data.examples.into_iter().next().expect("one entry").input)
}
