use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// All values are fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub auc: f64,
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: sum(|m| m.accuracy),
            specificity: sum(|m| m.specificity),
            sensitivity: sum(|m| m.sensitivity),
            auc: sum(|m| m.auc),
        }
    }
}

pub fn compute_metrics(y_true: &[u8], labels: &[u8], scores: &[f64]) -> Result<Metrics> {
    if y_true.len() != labels.len() || y_true.len() != scores.len() {
        return Err(Error::Shape(format!(
            "lengths differ: {} truths, {} labels, {} scores",
            y_true.len(),
            labels.len(),
            scores.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &l) in y_true.iter().zip(labels) {
        match (t, l) {
            (1, 1) => tp += 1,
            (1, _) => fn_ += 1,
            (_, 1) => fp += 1,
            _ => tn += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(Error::AucUndefined);
    }
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / y_true.len() as f64,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        auc: auc(y_true, scores)?,
    })
}

/// Mann-Whitney AUC from mid-ranks; tied scores count one half.
pub fn auc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let n_pos = y_true.iter().filter(|&&t| t == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let rank_sum: f64 = y_true.iter().zip(&ranks).filter(|(&t, _)| t == 1).map(|(_, r)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}
