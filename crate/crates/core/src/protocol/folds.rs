use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PairRecord, Relation};
use crate::error::{KinError, Result};
use crate::scoring::Label;

pub const FOLDS: usize = 5;

/// Attempts at drawing a valid derangement for one cell before giving up.
const DERANGEMENT_ATTEMPTS: usize = 10_000;

/// Fold assignment of a list of pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    /// 1-based fold per pair, aligned with the records.
    pub assignments: Vec<u8>,
}

impl FoldSplit {
    pub fn of(records: &[PairRecord]) -> Result<Self> {
        let assignments = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.fold
                    .ok_or_else(|| KinError::InvalidArgument(format!("pair {i} has no fold")))
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(FoldSplit {
            k: FOLDS,
            assignments,
        })
    }

    /// Every fold non-empty with as many kin as non-kin pairs.
    pub fn check(&self, records: &[PairRecord]) -> Result<()> {
        if records.len() != self.assignments.len() {
            return Err(KinError::DimensionMismatch(
                "fold split does not cover the records".into(),
            ));
        }
        for fold in 1..=self.k as u8 {
            let (mut kin, mut non) = (0usize, 0usize);
            for (r, &f) in records.iter().zip(&self.assignments) {
                if f == fold {
                    match r.label {
                        Label::Kin => kin += 1,
                        Label::NonKin => non += 1,
                    }
                }
            }
            if kin + non == 0 {
                return Err(KinError::InvalidArgument(format!("fold {fold} is empty")));
            }
            if kin != non {
                return Err(KinError::InvalidArgument(format!(
                    "fold {fold} has {kin} kin and {non} non-kin pairs"
                )));
            }
        }
        Ok(())
    }
}

/// Seeded folds stratified by relation: each relation's pairs are shuffled
/// and dealt round-robin, continuing the deal across relations.
pub fn assign_folds(records: &mut [PairRecord], seed: u64) -> Result<FoldSplit> {
    if records.len() < FOLDS {
        return Err(KinError::InvalidArgument(format!(
            "{} pairs cannot fill {FOLDS} folds",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Relation, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.relation).or_default().push(i);
    }
    let mut next = 0usize;
    for indices in groups.values_mut() {
        indices.shuffle(&mut rng);
        for &i in indices.iter() {
            records[i].fold = Some((next % FOLDS) as u8 + 1);
            next += 1;
        }
    }
    FoldSplit::of(records)
}

/// One non-kin pair per kin pair: within each (relation, fold) cell the
/// children are permuted by a seeded derangement, so no parent keeps any of
/// its own children.
pub fn generate_negatives(positives: &[PairRecord], seed: u64) -> Result<Vec<PairRecord>> {
    let mut cells: BTreeMap<(Relation, u8), Vec<usize>> = BTreeMap::new();
    for (i, r) in positives.iter().enumerate() {
        if !r.label.is_kin() {
            return Err(KinError::InvalidArgument(format!("pair {i} is not a kin pair")));
        }
        let fold = r
            .fold
            .ok_or_else(|| KinError::InvalidArgument(format!("pair {i} has no fold")))?;
        cells.entry((r.relation, fold)).or_default().push(i);
    }
    let mut own_children: BTreeMap<&PathBuf, BTreeSet<&PathBuf>> = BTreeMap::new();
    for r in positives {
        own_children.entry(&r.parent).or_default().insert(&r.child);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut negatives: Vec<Option<PairRecord>> = vec![None; positives.len()];
    for ((relation, fold), members) in &cells {
        let cell_name = || format!("{} in fold {fold}", relation.as_str());
        if members.len() < 2 {
            return Err(KinError::NoDerangement(format!(
                "{} has a single kin pair",
                cell_name()
            )));
        }
        let valid = |perm: &[usize]| {
            members.iter().zip(perm).all(|(&i, &j)| {
                !own_children[&positives[i].parent].contains(&positives[j].child)
            })
        };
        let mut perm = members.clone();
        let mut found = false;
        for _ in 0..DERANGEMENT_ATTEMPTS {
            perm.shuffle(&mut rng);
            if valid(&perm) {
                found = true;
                break;
            }
        }
        if !found {
            return Err(KinError::NoDerangement(format!(
                "no parent/child reassignment avoids true kin in {}",
                cell_name()
            )));
        }
        for (&i, &j) in members.iter().zip(&perm) {
            let p = &positives[i];
            negatives[i] = Some(PairRecord {
                relation: p.relation,
                parent: p.parent.clone(),
                child: positives[j].child.clone(),
                label: Label::NonKin,
                fold: p.fold,
                crop: p.crop,
            });
        }
    }
    Ok(negatives.into_iter().map(Option::unwrap).collect())
}

/// Permutes labels among the pairs of each fold (a chance-level control;
/// per-fold class balance is preserved).
pub fn shuffle_labels_within_folds(records: &mut [PairRecord], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_fold: BTreeMap<Option<u8>, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_fold.entry(r.fold).or_default().push(i);
    }
    for members in by_fold.values() {
        let mut labels: Vec<Label> = members.iter().map(|&i| records[i].label).collect();
        labels.shuffle(&mut rng);
        for (&i, l) in members.iter().zip(labels) {
            records[i].label = l;
        }
    }
}
