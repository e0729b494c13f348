//! Confusion matrices, per-class recall and weighted accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K × K` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    k: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut c = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.add(t, p)?;
        }
        Ok(c)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::InvalidArgument(format!(
                "class ({truth}, {predicted}) out of range for K={}",
                self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Diagonal over row sum; `None` for classes absent from the split.
    pub fn recall(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let n = self.row_total(i);
                (n > 0).then(|| self.get(i, i) as f64 / n as f64)
            })
            .collect()
    }

    /// Total correct over total evaluated.
    pub fn weighted_accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.k != self.k {
            return Err(Error::InvalidArgument("confusion matrices of different K".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub per_class: Vec<Option<f64>>,
    pub weighted_accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let weighted_accuracy = confusion
            .weighted_accuracy()
            .ok_or_else(|| Error::InvalidArgument("evaluation on an empty split".into()))?;
        Ok(Self {
            per_class: confusion.recall(),
            weighted_accuracy,
            confusion,
        })
    }
}

/// Per-fold reports plus the pooled and fold-mean summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<(usize, MetricsReport)>,
    pub pooled: MetricsReport,
    pub mean_per_class: Vec<Option<f64>>,
    pub mean_weighted_accuracy: f64,
}

impl CvSummary {
    pub fn new(folds: Vec<(usize, MetricsReport)>) -> Result<Self> {
        let Some((_, first)) = folds.first() else {
            return Err(Error::InvalidArgument("no folds to summarize".into()));
        };
        let k = first.confusion.k();
        let mut pooled = Confusion::new(k);
        for (_, r) in &folds {
            pooled.merge(&r.confusion)?;
        }
        let mean_per_class = (0..k)
            .map(|c| {
                let vals: Vec<f64> = folds.iter().filter_map(|(_, r)| r.per_class[c]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        let mean_weighted_accuracy = folds.iter().map(|(_, r)| r.weighted_accuracy).sum::<f64>() / folds.len() as f64;
        Ok(Self {
            pooled: MetricsReport::from_confusion(pooled)?,
            folds,
            mean_per_class,
            mean_weighted_accuracy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_built_example() {
        // Class 0 has 3 samples (2 correct), class 1 has 2 (1 correct).
        let c = Confusion::from_pairs(2, &[0, 0, 0, 1, 1], &[0, 0, 1, 1, 0]).unwrap();
        let r = MetricsReport::from_confusion(c).unwrap();
        assert!((r.per_class[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1], Some(0.5));
        assert_eq!(r.weighted_accuracy, 0.6);
    }

    #[test]
    fn all_correct_is_identity_pattern() {
        let truth = [0, 1, 2, 3, 4, 4];
        let c = Confusion::from_pairs(5, &truth, &truth).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(c.get(i, j), 0);
                }
            }
        }
        assert_eq!(c.weighted_accuracy(), Some(1.0));
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(MetricsReport::from_confusion(Confusion::new(5)).is_err());
        assert!(Confusion::new(2).add(2, 0).is_err());
    }

    #[test]
    fn summary_pools_and_averages() {
        let a = MetricsReport::from_confusion(Confusion::from_pairs(2, &[0, 1], &[0, 1]).unwrap()).unwrap();
        let b = MetricsReport::from_confusion(Confusion::from_pairs(2, &[0, 0, 1, 1], &[1, 1, 1, 1]).unwrap()).unwrap();
        let s = CvSummary::new(vec![(0, a), (1, b)]).unwrap();
        assert_eq!(s.pooled.weighted_accuracy, 4.0 / 6.0);
        assert_eq!(s.mean_weighted_accuracy, 0.75);
        assert_eq!(s.mean_per_class, vec![Some(0.5), Some(1.0)]);
    }

    proptest! {
        #[test]
        fn weighted_accuracy_is_size_weighted_recall(
            pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)
        ) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let c = Confusion::from_pairs(5, &t, &p).unwrap();
            let n = t.len() as f64;
            let identity: f64 = (0..5)
                .filter_map(|i| c.recall()[i].map(|r| r * c.row_total(i) as f64))
                .sum::<f64>() / n;
            prop_assert!((identity - c.weighted_accuracy().unwrap()).abs() < 1e-12);
        }
    }
}
