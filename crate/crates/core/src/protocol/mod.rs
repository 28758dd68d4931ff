//! Evaluation protocol: pair manifests, negative pairs, folds, metrics, the
//! cross-validation harness and a synthetic dataset for running it without
//! access to real face data.

mod cv;
mod folds;
mod manifest;
mod metrics;
mod report;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};
use crate::imaging::CropWindow;
use crate::scoring::Label;

pub use cv::{
    bank_file_name, extract_views, hash_bytes, load_banks_from_dir, load_canonical, prepare_records,
    run_cross_validation, AuditLog, CanonicalImage, CvOutcome, FoldAudit, FoldResult, Leak, Stage, ViewFit,
};
pub use folds::{assign_folds, generate_negatives, shuffle_labels_within_folds, FoldSplit, FOLDS};
pub use manifest::{load_manifest, write_manifest, RelationDistribution};
pub use metrics::{compute_metrics, format_labeled_table, format_table, Metrics, RocPoint, ScoredPair, REFERENCE_MEAN_ACCURACY};
pub use report::{AuditSummary, ReferenceComparison, Report, REFERENCE_METHOD, REFERENCE_TOLERANCE};
pub use synth::{synth_kin_dataset, SynthDataset, SynthOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    FatherSon,
    FatherDaughter,
    MotherSon,
    MotherDaughter,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::FatherSon,
        Relation::FatherDaughter,
        Relation::MotherSon,
        Relation::MotherDaughter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::FatherSon => "father-son",
            Relation::FatherDaughter => "father-daughter",
            Relation::MotherSon => "mother-son",
            Relation::MotherDaughter => "mother-daughter",
        }
    }

    /// Share of each relation among the 143 Cornell KinFace pairs, in percent.
    pub fn reference_share(self) -> f64 {
        match self {
            Relation::FatherSon => 40.0,
            Relation::FatherDaughter => 22.0,
            Relation::MotherSon => 13.0,
            Relation::MotherDaughter => 25.0,
        }
    }
}

impl std::str::FromStr for Relation {
    type Err = KinError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "father-son" | "fs" | "f-s" => Ok(Relation::FatherSon),
            "father-daughter" | "fd" | "f-d" => Ok(Relation::FatherDaughter),
            "mother-son" | "ms" | "m-s" => Ok(Relation::MotherSon),
            "mother-daughter" | "md" | "m-d" => Ok(Relation::MotherDaughter),
            other => Err(KinError::InvalidArgument(format!("unknown relation '{other}'"))),
        }
    }
}

/// One parent/child pair of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub relation: Relation,
    pub parent: PathBuf,
    pub child: PathBuf,
    pub label: Label,
    /// 1-based fold index; `None` until folds are assigned.
    pub fold: Option<u8>,
    /// Applied to both images of the pair; `None` means the largest centered square.
    pub crop: Option<CropWindow>,
}
