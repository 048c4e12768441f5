//! Confusion matrices and F1 scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Builds a matrix from dense class indices.
    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(num_classes);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.counts.len();
        if truth >= c || predicted >= c {
            return Err(Error::OutOfRange {
                index: truth.max(predicted),
                len: c,
            });
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / total as f64
    }

    /// Per-class recall; zero for classes without true instances.
    pub fn recall(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| {
                let row: u64 = self.counts[i].iter().sum();
                if row == 0 {
                    0.0
                } else {
                    self.counts[i][i] as f64 / row as f64
                }
            })
            .collect()
    }

    pub fn precision(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|j| {
                let col: u64 = self.counts.iter().map(|r| r[j]).sum();
                if col == 0 {
                    0.0
                } else {
                    self.counts[j][j] as f64 / col as f64
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
}

/// Per-class F1 (zero when precision + recall is zero) and their unweighted mean.
pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let p = cm.precision();
    let r = cm.recall();
    let per_class: Vec<f64> = p
        .iter()
        .zip(&r)
        .map(|(&p, &r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / per_class.len() as f64;
    F1Scores { per_class, macro_f1 }
}
