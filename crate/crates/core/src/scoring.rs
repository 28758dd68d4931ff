//! Cosine verification scores, threshold fitting and decisions.

use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Kin,
    NonKin,
}

impl Label {
    pub fn is_kin(self) -> bool {
        self == Label::Kin
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Kin => "kin",
            Label::NonKin => "non-kin",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = KinError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kin" | "1" | "positive" | "true" => Ok(Label::Kin),
            "non-kin" | "nonkin" | "non_kin" | "0" | "negative" | "false" => Ok(Label::NonKin),
            other => Err(KinError::InvalidArgument(format!("unknown label '{other}'"))),
        }
    }
}

/// A cosine similarity in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Score(pub f64);

impl Score {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdSource {
    AccuracyMax,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub source: ThresholdSource,
    /// Training accuracy in `[0, 1]` for fitted thresholds.
    pub training_accuracy: Option<f64>,
}

impl Threshold {
    pub fn fixed(value: f64) -> Self {
        Threshold {
            value,
            source: ThresholdSource::Fixed,
            training_accuracy: None,
        }
    }
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<Score> {
    if a.len() != b.len() {
        return Err(KinError::DimensionMismatch(format!(
            "cosine of {}- and {}-vectors",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(KinError::Degenerate("cosine of a zero vector".into()));
    }
    let s = dot / (na * nb);
    if !s.is_finite() {
        return Err(KinError::Degenerate("non-finite cosine".into()));
    }
    Ok(Score(s.clamp(-1.0, 1.0)))
}

/// Maximizes training accuracy over the midpoints between adjacent distinct
/// sorted scores (plus one candidate below the minimum and one above the
/// maximum). Ties go to the larger threshold.
pub fn choose_threshold(scores: &[f64], labels: &[Label]) -> Result<Threshold> {
    if scores.len() != labels.len() {
        return Err(KinError::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|l| l.is_kin()).count();
    if positives == 0 || positives == labels.len() {
        return Err(KinError::SingleClass(
            "threshold fitting needs kin and non-kin pairs".into(),
        ));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(KinError::Degenerate(format!("non-finite score {bad}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    let n = scores.len() as f64;
    // threshold below everything: all predicted kin
    let mut correct = positives as i64;
    let mut best = (correct, scores[order[0]] - 1.0);
    let mut i = 0;
    while i < order.len() {
        // move every pair tied at this score below the threshold
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            correct += if labels[order[i]].is_kin() { -1 } else { 1 };
            i += 1;
        }
        let candidate = if i < order.len() {
            0.5 * (s + scores[order[i]])
        } else {
            s + 1.0
        };
        if correct >= best.0 {
            best = (correct, candidate);
        }
    }
    Ok(Threshold {
        value: best.1,
        source: ThresholdSource::AccuracyMax,
        training_accuracy: Some(best.0 as f64 / n),
    })
}

pub fn decide(score: Score, threshold: &Threshold) -> Label {
    if score.0 >= threshold.value {
        Label::Kin
    } else {
        Label::NonKin
    }
}

/// Weighted arithmetic mean (uniform weights when `weights` is `None`).
pub fn fuse_scores(scores: &[Score], weights: Option<&[f64]>) -> Result<Score> {
    if scores.is_empty() {
        return Err(KinError::InvalidArgument("no scores to fuse".into()));
    }
    match weights {
        None => Ok(Score(
            scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64,
        )),
        Some(w) => {
            if w.len() != scores.len() {
                return Err(KinError::DimensionMismatch(format!(
                    "{} weights for {} scores",
                    w.len(),
                    scores.len()
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(KinError::InvalidArgument("fusion weights must be nonnegative".into()));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(KinError::InvalidArgument("fusion weights sum to zero".into()));
            }
            Ok(Score(
                scores.iter().zip(w).map(|(s, w)| s.0 * w).sum::<f64>() / total,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive reference: every midpoint, best accuracy, largest on ties.
    fn brute_threshold(scores: &[f64], labels: &[Label]) -> (f64, f64) {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut candidates = vec![sorted[0] - 1.0];
        candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        candidates.push(sorted[sorted.len() - 1] + 1.0);
        let acc = |t: f64| {
            scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| (s >= t) == l.is_kin())
                .count() as f64
                / scores.len() as f64
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in candidates {
            let a = acc(t);
            if a >= best.0 {
                best = (a, t);
            }
        }
        (best.1, best.0)
    }

    #[test]
    fn cosine_basics() {
        let x = [1.0, -2.0, 0.5];
        assert_eq!(cosine_score(&x, &x).unwrap().value(), 1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap().value(), 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(cosine_score(&x, &neg).unwrap().value(), -1.0);
        assert_eq!(cosine_score(&x, &[0.0; 3]).unwrap_err().category(), "degenerate");
    }

    #[test]
    fn separable_scores_pick_midpoint() {
        use Label::*;
        let t = choose_threshold(&[0.9, 0.8, 0.1, 0.2], &[Kin, Kin, NonKin, NonKin]).unwrap();
        assert_eq!(t.value, 0.5);
        assert_eq!(t.training_accuracy, Some(1.0));
    }

    #[test]
    fn interleaved_scores_report_honest_accuracy() {
        use Label::*;
        let scores = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let labels = [Kin, NonKin, Kin, NonKin, Kin, NonKin];
        let t = choose_threshold(&scores, &labels).unwrap();
        let (bt, ba) = brute_threshold(&scores, &labels);
        assert_eq!(t.value, bt);
        assert_eq!(t.training_accuracy, Some(ba));
        assert_eq!(ba, 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let err = choose_threshold(&[0.1, 0.3], &[Label::Kin, Label::Kin]).unwrap_err();
        assert_eq!(err.category(), "single-class");
    }

    #[test]
    fn decisions() {
        let t = Threshold::fixed(0.5);
        assert_eq!(decide(Score(1.0), &t), Label::Kin);
        assert_eq!(decide(Score(0.5), &t), Label::Kin);
        assert_eq!(decide(Score(-1.0), &Threshold::fixed(0.0)), Label::NonKin);
    }

    #[test]
    fn fusion() {
        let s = [Score(0.2), Score(0.4)];
        assert!((fuse_scores(&s, None).unwrap().value() - 0.3).abs() < 1e-15);
        assert_eq!(fuse_scores(&s[..1], None).unwrap().value(), 0.2);
        assert_eq!(fuse_scores(&s, Some(&[1.0, 0.0])).unwrap().value(), 0.2);
        assert!(fuse_scores(&[], None).is_err());
    }

    proptest! {
        #[test]
        fn threshold_matches_exhaustive_scan(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 20.0).collect();
            let labels: Vec<Label> = data.iter().map(|(_, k)| if *k { Label::Kin } else { Label::NonKin }).collect();
            prop_assume!(labels.contains(&Label::Kin) && labels.contains(&Label::NonKin));
            let t = choose_threshold(&scores, &labels).unwrap();
            let (bt, ba) = brute_threshold(&scores, &labels);
            prop_assert_eq!(t.value, bt);
            prop_assert_eq!(t.training_accuracy, Some(ba));
        }

        #[test]
        fn cosine_is_scale_invariant_and_symmetric(
            x in prop::collection::vec(-10.0f64..10.0, 6),
            y in prop::collection::vec(-10.0f64..10.0, 6),
            a in 1e-3f64..1e3,
            b in 1e-3f64..1e3,
        ) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-3) && y.iter().any(|v| v.abs() > 1e-3));
            let base = cosine_score(&x, &y).unwrap().value();
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let by: Vec<f64> = y.iter().map(|v| b * v).collect();
            prop_assert!((cosine_score(&ax, &by).unwrap().value() - base).abs() <= 1e-12);
            prop_assert_eq!(cosine_score(&y, &x).unwrap().value(), base);
        }

        #[test]
        fn decide_is_monotone(s1 in -1.0f64..1.0, s2 in -1.0f64..1.0, t in -1.0f64..1.0) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let th = Threshold::fixed(t);
            if decide(Score(lo), &th) == Label::Kin {
                prop_assert_eq!(decide(Score(hi), &th), Label::Kin);
            }
        }
    }
}
