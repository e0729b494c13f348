//! Per-coordinate min-max normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxStats {
    /// Fits on training vectors only.
    pub fn fit(vectors: &[&[f64]]) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::InvalidArgument("min-max fit on an empty set".into()));
        };
        let d = first.len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for v in vectors {
            if v.len() != d {
                return Err(Error::shape("minmax_fit", format!("vector of {} vs {d}", v.len())));
            }
            for j in 0..d {
                min[j] = min[j].min(v[j]);
                max[j] = max[j].max(v[j]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `(x − min)/(max − min)` clipped to `[0, 1]`; constant coordinates map to 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(
                "minmax_apply",
                format!("vector of {} vs stats of {}", x.len(), self.dim()),
            ));
        }
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Inverse map for non-constant coordinates.
    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| v * (hi - lo) + lo)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s = MinMaxStats::fit(&[&[2.0, 5.0], &[10.0, 5.0]]).unwrap();
        assert_eq!(s.apply(&[6.0, 5.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(s.apply(&[12.0, 9.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.apply(&[-1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(s.apply(&[1.0]).is_err());
        assert!(MinMaxStats::fit(&[]).is_err());
        assert!(MinMaxStats::fit(&[&[1.0], &[1.0, 2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn training_data_lands_in_unit_box_and_round_trips(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..20)
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let s = MinMaxStats::fit(&refs).unwrap();
            for r in &rows {
                let y = s.apply(r).unwrap();
                prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
                let back = s.invert(&y);
                for j in 0..4 {
                    if s.max[j] > s.min[j] {
                        prop_assert!((back[j] - r[j]).abs() <= 1e-10 * (1.0 + r[j].abs()));
                    }
                }
            }
        }
    }
}
