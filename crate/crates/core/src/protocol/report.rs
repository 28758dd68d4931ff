//! Evaluation report: the full configuration, seeds, metrics and per-fold
//! details as JSON, plus a small accuracy table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    format_labeled_table, format_table, AuditLog, CvOutcome, FoldResult, Metrics, RelationDistribution, ScoredPair, Stage,
    REFERENCE_MEAN_ACCURACY,
};
use crate::config::RunConfig;
use crate::error::{KinError, Result};

pub const REFERENCE_METHOD: &str = "Color MS-BSIF Learning (published, Cornell KinFace)";

/// Points within which a run counts as matching the published mean.
pub const REFERENCE_TOLERANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub method: String,
    pub mean_accuracy: f64,
    /// This run minus the published mean, in points.
    pub delta: f64,
    pub within_tolerance: bool,
    /// The comparison never gates a run: folds and negatives differ from the
    /// published protocol.
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    /// Distinct images recorded per stage, summed over folds.
    pub stage_images: BTreeMap<Stage, usize>,
    pub leaks: usize,
    /// Per fold: test image hashes and the hashes each training stage consumed.
    pub log: AuditLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub distribution: RelationDistribution,
    pub metrics: Metrics,
    pub folds: Vec<FoldResult>,
    pub audit: AuditSummary,
    pub reference: ReferenceComparison,
    pub scored: Vec<ScoredPair>,
}

impl Report {
    pub fn new(cfg: &RunConfig, outcome: &CvOutcome) -> Self {
        let mut seeds = BTreeMap::from([
            ("patches".to_string(), cfg.seed_patches),
            ("ica".to_string(), cfg.seed_ica),
            ("negatives".to_string(), cfg.seed_negatives),
            ("folds".to_string(), cfg.seed_folds),
            ("pca".to_string(), cfg.seed_pca),
        ]);
        if let Some(s) = cfg.shuffle_labels {
            seeds.insert("shuffle_labels".into(), s);
        }
        let mut stage_images = BTreeMap::new();
        for fold in &outcome.audit.folds {
            for (&stage, images) in &fold.stages {
                *stage_images.entry(stage).or_insert(0) += images.len();
            }
        }
        let mean = outcome.metrics.mean_accuracy;
        Report {
            method: cfg.method_name(),
            config: cfg.clone(),
            seeds,
            distribution: outcome.distribution.clone(),
            metrics: outcome.metrics.clone(),
            folds: outcome.folds.clone(),
            audit: AuditSummary {
                stage_images,
                leaks: outcome.audit.leaks().len(),
                log: outcome.audit.clone(),
            },
            reference: ReferenceComparison {
                method: REFERENCE_METHOD.into(),
                mean_accuracy: REFERENCE_MEAN_ACCURACY,
                delta: mean - REFERENCE_MEAN_ACCURACY,
                within_tolerance: (mean - REFERENCE_MEAN_ACCURACY).abs() <= REFERENCE_TOLERANCE,
                informational: true,
            },
            scored: outcome.scored.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| KinError::Format(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| KinError::Format(format!("report: {e}")))
    }

    /// The published row, this run's row and the per-relation breakdown.
    pub fn table(&self) -> String {
        let mut text = format_table(&[
            (REFERENCE_METHOD.to_string(), REFERENCE_MEAN_ACCURACY),
            (format!("{} (this run)", self.method), self.metrics.mean_accuracy),
        ]);
        text.push_str(&format!(
            "\nDifference from the published mean: {:+.2} points ({}; informational only)\n",
            self.reference.delta,
            if self.reference.within_tolerance {
                format!("within ±{REFERENCE_TOLERANCE}")
            } else {
                format!("outside ±{REFERENCE_TOLERANCE}")
            }
        ));
        text.push_str(&format!(
            "Std over folds {:.2}, pooled accuracy {:.2}, EER {:.2}\n",
            self.metrics.std_accuracy, self.metrics.pooled_accuracy, self.metrics.eer
        ));
        let rows: Vec<(String, f64)> = self
            .metrics
            .relation_accuracy
            .iter()
            .map(|(r, a)| (r.as_str().to_string(), *a))
            .collect();
        text.push('\n');
        text.push_str(&format_labeled_table("Relation", &rows));
        text
    }
}
