//! Seeded k-fold splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::init::stream;
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// Disjoint folds partitioning `0..n`, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles with a seeded stream and deals indices round-robin into `k`
/// folds. With labels, each class is shuffled separately and dealt in class
/// order with one running counter, so classes spread evenly across folds
/// while fold sizes still differ by at most one.
pub fn make_folds(n: usize, k: usize, labels: Option<&[usize]>, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("{n} samples cannot fill {k} folds")));
    }
    let mut rng = stream(seed, "folds");
    let groups: Vec<Vec<usize>> = match labels {
        Some(l) => {
            if l.len() != n {
                return Err(Error::InvalidArgument(format!("{} labels for {n} samples", l.len())));
            }
            let classes = l.iter().copied().max().map_or(0, |m| m + 1);
            (0..classes).map(|c| (0..n).filter(|&i| l[i] == c).collect()).collect()
        }
        None => vec![(0..n).collect()],
    };
    let mut folds = vec![Vec::new(); k];
    let mut counter = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[counter % k].push(i);
            counter += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldSplit { folds, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(s: &FoldSplit) -> Vec<usize> {
        s.folds.iter().map(Vec::len).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(sizes(&make_folds(100, 5, None, 1).unwrap()), vec![20; 5]);
        assert_eq!(sizes(&make_folds(103, 5, None, 1).unwrap()), vec![21, 21, 21, 20, 20]);
        assert_eq!(make_folds(50, 5, None, 9).unwrap(), make_folds(50, 5, None, 9).unwrap());
        assert_ne!(
            make_folds(50, 5, None, 9).unwrap(),
            make_folds(50, 5, None, 10).unwrap()
        );
        assert!(make_folds(4, 5, None, 0).is_err());
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let s = make_folds(100, 5, Some(&labels), 3).unwrap();
        for f in &s.folds {
            for c in 0..5 {
                assert_eq!(f.iter().filter(|&&i| labels[i] == c).count(), 4);
            }
        }
        let labels: Vec<usize> = (0..103).map(|i| (i * 7) % 5).collect();
        let s = make_folds(103, 5, Some(&labels), 3).unwrap();
        assert_eq!(sizes(&s), vec![21, 21, 21, 20, 20]);
    }

    #[test]
    fn train_and_test_are_complementary() {
        let s = make_folds(23, 5, None, 4).unwrap();
        for f in 0..5 {
            let mut all = s.train(f);
            all.extend_from_slice(s.test(f));
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
    }
}
