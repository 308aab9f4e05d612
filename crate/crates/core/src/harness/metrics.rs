//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Square count matrix: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut c = Self::zeros(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    classes,
                });
            }
            c.counts[t][p] += 1;
        }
        Ok(c)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        hits as f64 / total as f64
    }

    /// Per-class F1; zero when the class has no true or predicted support.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let n = self.classes();
        (0..n)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let actual: u64 = self.counts[c].iter().sum();
                let predicted: u64 = self.counts.iter().map(|r| r[c]).sum();
                if actual + predicted == 0 {
                    0.0
                } else {
                    // 2PR/(P+R) with P = tp/predicted, R = tp/actual
                    2.0 * tp / (actual + predicted) as f64
                }
            })
            .collect()
    }
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(c: &Confusion) -> f64 {
    let f = c.per_class_f1();
    if f.is_empty() {
        return 0.0;
    }
    f.iter().sum::<f64>() / f.len() as f64
}

/// Row-wise arg-max of `[N, C]` logits; ties go to the lower class.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(m: &[Vec<u64>]) -> f64 {
        let n = m.len();
        let mut total = 0.0;
        for c in 0..n {
            let tp = m[c][c] as f64;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for o in 0..n {
                if o != c {
                    fp += m[o][c] as f64;
                    fn_ += m[c][o] as f64;
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            total += if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
        }
        total / n as f64
    }

    #[test]
    fn diagonal_is_one() {
        let c = Confusion {
            counts: vec![vec![3, 0, 0], vec![0, 7, 0], vec![0, 0, 1]],
        };
        assert_eq!(macro_f1(&c), 1.0);
    }

    #[test]
    fn symmetric_two_class() {
        let c = Confusion {
            counts: vec![vec![5, 5], vec![5, 5]],
        };
        assert!((macro_f1(&c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_zero() {
        let c = Confusion {
            counts: vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 0]],
        };
        assert!((macro_f1(&c) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn counts_from_predictions() {
        let c = Confusion::from_predictions(&[0, 1, 1, 2], &[0, 2, 1, 2], 3).unwrap();
        assert_eq!(c.row_sums(), vec![1, 2, 1]);
        assert_eq!(c.total(), 4);
        assert!(Confusion::from_predictions(&[0, 3], &[0, 0], 3).is_err());
        assert!(Confusion::from_predictions(&[0], &[0, 0], 3).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let l = Tensor::new(vec![2, 3], vec![1.0, 1.0, 0.0, -1.0, 0.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&l), vec![0, 2]);
    }

    proptest! {
        #[test]
        fn matches_scalar_oracle(cells in proptest::collection::vec(0u64..20, 16)) {
            let counts: Vec<Vec<u64>> = cells.chunks(4).map(<[u64]>::to_vec).collect();
            let c = Confusion { counts: counts.clone() };
            let f = macro_f1(&c);
            prop_assert!((f - oracle(&counts)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
