use serde::{Deserialize, Serialize};

use super::ProbeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: u64,
}

/// Classification quality on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub count: usize,
}

impl Metrics {
    pub fn compute(predictions: &[usize], golds: &[usize], class_count: usize) -> Result<Self, ProbeError> {
        if predictions.len() != golds.len() {
            return Err(ProbeError::LengthMismatch {
                left: predictions.len(),
                right: golds.len(),
            });
        }
        if predictions.is_empty() {
            return Err(ProbeError::EmptyInput);
        }
        let mut confusion = vec![vec![0u64; class_count]; class_count];
        for (&p, &g) in predictions.iter().zip(golds) {
            if p >= class_count || g >= class_count {
                return Err(ProbeError::LabelOutOfRange {
                    label: p.max(g),
                    class_count,
                });
            }
            confusion[g][p] += 1;
        }
        let per_class: Vec<ClassMetrics> = (0..class_count)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let gold: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if gold > 0 { tp / gold as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: gold,
                }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / class_count as f64;
        Ok(Metrics {
            macro_f1,
            per_class,
            confusion,
            count: predictions.len(),
        })
    }
}

/// Unweighted mean of per-class F1. Classes absent from both sequences
/// contribute 0 and still count toward the mean.
pub fn macro_f1(predictions: &[usize], golds: &[usize], class_count: usize) -> Result<f64, ProbeError> {
    Metrics::compute(predictions, golds, class_count).map(|m| m.macro_f1)
}

impl Metrics {
    /// Mean F1 over the classes that occur among the gold labels or the
    /// predictions of this evaluation set. Used for subsets (such as one
    /// length bin) where most classes cannot appear at all.
    pub fn macro_f1_observed(&self) -> f64 {
        let observed: Vec<f64> = self
            .per_class
            .iter()
            .enumerate()
            .filter(|(c, m)| m.support > 0 || self.confusion.iter().any(|row| row[*c] > 0))
            .map(|(_, m)| m.f1)
            .collect();
        observed.iter().sum::<f64>() / observed.len() as f64
    }
}

/// Expected macro F1 of a predictor independent of the gold label, with gold
/// class frequencies `gold_prior` and predicted class frequencies
/// `predicted_prior`. Per class this is `2pq / (p + q)`.
pub fn chance_macro_f1(gold_prior: &[f64], predicted_prior: &[f64]) -> f64 {
    assert_eq!(gold_prior.len(), predicted_prior.len());
    let n = gold_prior.len() as f64;
    gold_prior
        .iter()
        .zip(predicted_prior)
        .map(|(&p, &q)| if p + q > 0.0 { 2.0 * p * q / (p + q) } else { 0.0 })
        .sum::<f64>()
        / n
}

/// Relative frequency of each class in `labels`.
pub fn class_frequencies(labels: &[usize], class_count: usize) -> Vec<f64> {
    let mut counts = vec![0.0; class_count];
    for &l in labels {
        counts[l] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}
