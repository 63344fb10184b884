//! Bag-level classification metrics. AUC and AUPRC are one-vs-rest and
//! macro-averaged for more than two classes; with two classes they use the
//! class-1 probability. Classes absent from the labels are left out of every
//! macro average.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mil::{predict_proba, ABMILModel, Bag};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub auprc: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn to_array(self) -> [f64; 4] {
        [self.auc, self.auprc, self.f1, self.accuracy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { auc: a[0], auprc: a[1], f1: a[2], accuracy: a[3] }
    }

    pub fn minus(self, other: Self) -> Self {
        let (a, b) = (self.to_array(), other.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] - b[i]))
    }
}

/// Mann-Whitney AUC with mid-ranks for ties. `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps every mid-rank an integer
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank2_pos += mid2 * order[i..=j].iter().filter(|&&o| positive[o]).count() as u64;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    // U counted in half-pairs: 2U = 2R − p(p+1)
    let u2 = rank2_pos - p * (p + 1);
    Some(u2 as f64 / (2 * p * n) as f64)
}

/// Step-wise area under the precision-recall curve (average precision);
/// tied scores form a single threshold. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &o in &order[i..=j] {
            if positive[o] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

fn present_classes(labels: &[usize], classes: usize) -> Vec<usize> {
    (0..classes).filter(|c| labels.contains(c)).collect()
}

/// Macro AUC and AUPRC from per-bag probability rows.
pub fn auc_from_scores(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> (f64, f64) {
    let column = |c: usize| -> (Vec<f64>, Vec<bool>) { (probs.iter().map(|p| p[c]).collect(), labels.iter().map(|&l| l == c).collect()) };
    if classes == 2 {
        let (s, pos) = column(1);
        return (binary_auc(&s, &pos).unwrap_or(f64::NAN), average_precision(&s, &pos).unwrap_or(f64::NAN));
    }
    let mut aucs = Vec::new();
    let mut aps = Vec::new();
    for c in 0..classes {
        let (s, pos) = column(c);
        match (binary_auc(&s, &pos), average_precision(&s, &pos)) {
            (Some(a), Some(p)) => {
                aucs.push(a);
                aps.push(p);
            }
            _ => log::warn!("class {c} is absent from the evaluation labels; excluded from macro averages"),
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    (mean(&aucs), mean(&aps))
}

/// Macro F1 over the classes present in `labels`.
pub fn macro_f1(pred: &[usize], labels: &[usize], classes: usize) -> f64 {
    let present = present_classes(labels, classes);
    let f1s: Vec<f64> = present
        .iter()
        .map(|&c| {
            let tp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count();
            let fp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count();
            let fn_ = pred.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count();
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        })
        .collect();
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

pub fn metrics_from_probs(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Metrics> {
    if probs.is_empty() || probs.len() != labels.len() {
        return invalid(format!("{} score rows for {} labels", probs.len(), labels.len()));
    }
    if probs.iter().any(|p| p.len() != classes) || labels.iter().any(|&l| l >= classes) {
        return invalid(format!("scores or labels do not match {classes} classes"));
    }
    let (auc, auprc) = auc_from_scores(probs, labels, classes);
    if auc.is_nan() {
        return invalid("AUC is undefined: the evaluation set needs at least two classes");
    }
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Ok(Metrics { auc, auprc, f1: macro_f1(&pred, labels, classes), accuracy: accuracy(&pred, labels) })
}

pub fn evaluate(model: &ABMILModel, bags: &[&Bag]) -> Result<Metrics> {
    let probs = bags.iter().map(|b| predict_proba(model, b)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    metrics_from_probs(&probs, &labels, model.classes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: Metrics,
}

/// Per-seed rows with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<SeedMetrics>,
    pub mean: Metrics,
    pub std: Metrics,
    pub trainable_params: usize,
}

impl MetricReport {
    pub fn new(rows: Vec<SeedMetrics>, trainable_params: usize) -> Self {
        let n = rows.len() as f64;
        let arrays: Vec<[f64; 4]> = rows.iter().map(|r| r.metrics.to_array()).collect();
        let mean: [f64; 4] = std::array::from_fn(|i| arrays.iter().map(|a| a[i]).sum::<f64>() / n);
        let std: [f64; 4] = std::array::from_fn(|i| {
            if rows.len() < 2 {
                0.0
            } else {
                (arrays.iter().map(|a| (a[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        });
        Self { rows, mean: Metrics::from_array(mean), std: Metrics::from_array(std), trainable_params }
    }
}
