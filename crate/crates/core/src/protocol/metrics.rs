use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Relation;
use crate::error::{KinError, Result};
use crate::scoring::{decide, Label, Score, Threshold};

/// Mean accuracy (%) published for Color MS-BSIF Learning on Cornell KinFace.
pub const REFERENCE_MEAN_ACCURACY: f64 = 80.53;

/// A scored test pair with the threshold of the fold it was evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub fold: u8,
    pub relation: Relation,
    pub label: Label,
    pub score: f64,
    pub threshold: f64,
}

impl ScoredPair {
    pub fn correct(&self) -> bool {
        decide(Score(self.score), &Threshold::fixed(self.threshold)) == self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fold_accuracy: BTreeMap<u8, f64>,
    /// Mean of the per-fold accuracies.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub pooled_accuracy: f64,
    pub relation_accuracy: BTreeMap<Relation, f64>,
    /// Equal error rate (%) of the pooled scores.
    pub eer: f64,
    /// From (0, 0) to (1, 1), thresholds descending.
    pub roc: Vec<RocPoint>,
    pub pairs: usize,
}

fn percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

pub fn compute_metrics(scored: &[ScoredPair]) -> Result<Metrics> {
    let kin = scored.iter().filter(|s| s.label.is_kin()).count();
    if kin == 0 || kin == scored.len() {
        return Err(KinError::SingleClass("metrics need kin and non-kin pairs".into()));
    }
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(KinError::Degenerate(format!("non-finite score {}", bad.score)));
    }

    let mut per_fold: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let mut per_relation: BTreeMap<Relation, (usize, usize)> = BTreeMap::new();
    for s in scored {
        let ok = usize::from(s.correct());
        let f = per_fold.entry(s.fold).or_default();
        f.0 += ok;
        f.1 += 1;
        let r = per_relation.entry(s.relation).or_default();
        r.0 += ok;
        r.1 += 1;
    }
    let fold_accuracy: BTreeMap<u8, f64> = per_fold.iter().map(|(&k, &(c, n))| (k, percent(c, n))).collect();
    let k = fold_accuracy.len() as f64;
    let mean_accuracy = fold_accuracy.values().sum::<f64>() / k;
    let std_accuracy = (fold_accuracy
        .values()
        .map(|a| (a - mean_accuracy).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let correct = scored.iter().filter(|s| s.correct()).count();

    let roc = roc_curve(scored);
    Ok(Metrics {
        mean_accuracy,
        std_accuracy,
        pooled_accuracy: percent(correct, scored.len()),
        relation_accuracy: per_relation.iter().map(|(&r, &(c, n))| (r, percent(c, n))).collect(),
        eer: 100.0 * equal_error_rate(&roc),
        fold_accuracy,
        roc,
        pairs: scored.len(),
    })
}

/// One point per distinct score, sweeping the threshold downward.
fn roc_curve(scored: &[ScoredPair]) -> Vec<RocPoint> {
    let pos = scored.iter().filter(|s| s.label.is_kin()).count() as f64;
    let neg = scored.len() as f64 - pos;
    let mut order: Vec<&ScoredPair> = scored.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score;
        while i < order.len() && order[i].score == s {
            if order[i].label.is_kin() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
        });
    }
    points
}

/// Where FPR meets FRR = 1 - TPR, interpolated linearly along the ROC segment.
fn equal_error_rate(roc: &[RocPoint]) -> f64 {
    let gap = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    for w in roc.windows(2) {
        let (a, b) = (gap(&w[0]), gap(&w[1]));
        if a == 0.0 {
            return w[0].fpr;
        }
        if a < 0.0 && b >= 0.0 {
            let t = a / (a - b);
            return w[0].fpr + t * (w[1].fpr - w[0].fpr);
        }
    }
    // the gap ends at +1 at (1, 1), so the loop always returns
    1.0
}

/// Two-column "Method / Mean" table of accuracies in percent.
pub fn format_table(rows: &[(String, f64)]) -> String {
    format_labeled_table("Method", rows)
}

pub fn format_labeled_table(label: &str, rows: &[(String, f64)]) -> String {
    let width = rows
        .iter()
        .map(|(m, _)| m.chars().count())
        .chain([label.chars().count()])
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(out, "{label:<width$}  {:>6}", "Mean");
    for (method, mean) in rows {
        let _ = writeln!(out, "{method:<width$}  {mean:>6.2}");
    }
    out
}
