//! In-memory datasets and per-fold input preparation.

use crate::audio::MinMaxStats;
use crate::error::{Error, Result};
use crate::model::SampleInput;
use crate::text::EmbeddingTable;

#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub label: usize,
    /// Model inputs; `lld` holds the raw, unnormalized vector.
    pub input: SampleInput,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Pre-trained word vectors restricted to the corpus vocabulary.
    pub words: Option<EmbeddingTable>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.id.as_str()).collect()
    }

    /// Inputs for every example with LLD vectors min-max scaled by
    /// statistics fitted on `train` only. Returns `None` statistics when the
    /// dataset carries no LLD vectors.
    pub fn fold_inputs(&self, train: &[usize]) -> Result<(Vec<SampleInput>, Option<MinMaxStats>)> {
        let has_lld = self.examples.iter().filter(|e| e.input.lld.is_some()).count();
        if has_lld == 0 {
            return Ok((self.examples.iter().map(|e| e.input.clone()).collect(), None));
        }
        if has_lld != self.len() {
            return Err(Error::InvalidArgument(
                "some samples have LLD vectors and some do not".into(),
            ));
        }
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        let rows: Vec<&[f64]> = train
            .iter()
            .map(|&i| self.examples[i].input.lld.as_deref().expect("checked above"))
            .collect();
        let stats = MinMaxStats::fit(&rows)?;
        Ok((self.normalized(&stats)?, Some(stats)))
    }

    /// Inputs with LLD vectors scaled by previously fitted statistics.
    pub fn normalized(&self, stats: &MinMaxStats) -> Result<Vec<SampleInput>> {
        self.examples
            .iter()
            .map(|e| {
                let mut input = e.input.clone();
                if let Some(raw) = &e.input.lld {
                    input.lld = Some(stats.apply(raw).map_err(|err| Error::Sample {
                        id: e.id.clone(),
                        msg: err.to_string(),
                    })?);
                }
                Ok(input)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(llds: &[[f64; 2]]) -> Dataset {
        Dataset {
            examples: llds
                .iter()
                .enumerate()
                .map(|(i, v)| Example {
                    id: format!("s{i}"),
                    label: i % 5,
                    input: SampleInput {
                        lld: Some(v.to_vec()),
                        ..Default::default()
                    },
                })
                .collect(),
            words: None,
        }
    }

    #[test]
    fn statistics_come_from_the_training_split_only() {
        let d = ds(&[[0.0, 10.0], [1.0, 20.0], [100.0, -50.0]]);
        let (inputs, stats) = d.fold_inputs(&[0, 1]).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.min, vec![0.0, 10.0]);
        assert_eq!(stats.max, vec![1.0, 20.0]);
        assert_eq!(inputs[1].lld.as_deref().unwrap(), &[1.0, 1.0]);
        // The held-out outlier is clipped rather than stretching the range.
        assert_eq!(inputs[2].lld.as_deref().unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn no_lld_passes_through() {
        let mut d = ds(&[[0.0, 1.0]]);
        d.examples[0].input.lld = None;
        let (inputs, stats) = d.fold_inputs(&[0]).unwrap();
        assert!(stats.is_none() && inputs[0].lld.is_none());
    }
}
