use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
    /// rows are the actual class, columns the prediction
    pub confusion: Vec<Vec<usize>>,
    /// population std of the per-class F1, in percent
    pub class_score_std: f64,
}

/// Divide-by-n standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics<S: AsRef<str>>(y_true: &[usize], y_pred: &[usize], labels: &[S]) -> Result<Metrics> {
    if y_true.is_empty() {
        return Err(Error::Metrics("no samples".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Metrics(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::Metrics(format!("class index out of range for {k} classes")));
        }
        confusion[t][p] += 1;
    }
    let total = y_true.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassScore {
            label: labels[c].as_ref().to_string(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let weighted_f1 = per_class.iter().map(|s| s.support as f64 * s.f1).sum::<f64>() / total as f64;
    let f1s: Vec<f64> = per_class.iter().map(|s| s.f1).collect();
    Ok(Metrics {
        accuracy: ratio(correct, total),
        weighted_f1,
        class_score_std: 100.0 * population_std(&f1s),
        per_class,
        confusion,
    })
}

/// Accuracy of always predicting the most frequent training class (lowest index on ties).
pub fn majority_baseline(train_labels: &[usize], test_labels: &[usize], n_classes: usize) -> Result<f64> {
    if train_labels.is_empty() || test_labels.is_empty() {
        return Err(Error::Metrics("majority baseline needs samples on both sides".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &y in train_labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::Metrics(format!("class {y} out of range")))? += 1;
    }
    let best = (0..n_classes).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
    Ok(ratio(test_labels.iter().filter(|&&y| y == best).count(), test_labels.len()))
}
