use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PairRecord, Relation, FOLDS};
use crate::error::{KinError, Result};
use crate::imaging::CropWindow;
use crate::scoring::Label;

const REQUIRED: [&str; 5] = ["relation", "parent", "child", "label", "fold"];
const CROP: [&str; 3] = ["crop_x", "crop_y", "crop_side"];

/// Reads a pair manifest (CSV with header
/// `relation,parent,child,label,fold[,crop_x,crop_y,crop_side]`).
///
/// Relative image paths resolve against the manifest's directory. An empty
/// `fold` cell leaves the fold unassigned; folds must then be empty on every row.
pub fn load_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| KinError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let err = |line: usize, message: String| KinError::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(err(1, "empty manifest".into()));
    }
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = column(name).ok_or_else(|| err(1, format!("missing column '{name}'")))?;
    }
    let crop_idx: Vec<Option<usize>> = CROP.iter().map(|c| column(c)).collect();

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| err(line, e.to_string()))?;
        let cell = |j: usize| row.get(j).unwrap_or("");
        let relation: Relation = cell(idx[0]).parse().map_err(|e: KinError| err(line, e.to_string()))?;
        let resolve = |s: &str| -> Result<PathBuf> {
            if s.is_empty() {
                return Err(err(line, "empty image path".into()));
            }
            let p = Path::new(s);
            let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            if !full.is_file() {
                return Err(KinError::Missing(format!(
                    "manifest {} line {line}: image {} not found",
                    path.display(),
                    full.display()
                )));
            }
            Ok(full)
        };
        let parent = resolve(cell(idx[1]))?;
        let child = resolve(cell(idx[2]))?;
        if parent == child {
            return Err(err(line, "parent and child are the same file".into()));
        }
        let label: Label = cell(idx[3]).parse().map_err(|e: KinError| err(line, e.to_string()))?;
        let fold = match cell(idx[4]) {
            "" => None,
            s => {
                let f: u8 = s.parse().map_err(|_| err(line, format!("bad fold '{s}'")))?;
                if !(1..=FOLDS as u8).contains(&f) {
                    return Err(err(line, format!("fold {f} outside 1..={FOLDS}")));
                }
                Some(f)
            }
        };
        let crop_cells: Vec<&str> = crop_idx
            .iter()
            .map(|j| j.map(&cell).unwrap_or(""))
            .collect();
        let crop = if crop_cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let mut v = [0usize; 3];
            for (slot, (name, c)) in v.iter_mut().zip(CROP.iter().zip(&crop_cells)) {
                *slot = c
                    .parse()
                    .map_err(|_| err(line, format!("bad {name} '{c}'")))?;
            }
            Some(CropWindow::new(v[0], v[1], v[2]))
        };
        records.push(PairRecord {
            relation,
            parent,
            child,
            label,
            fold,
            crop,
        });
    }
    if records.is_empty() {
        return Err(err(1, "manifest has no pairs".into()));
    }
    let assigned = records.iter().filter(|r| r.fold.is_some()).count();
    if assigned != 0 && assigned != records.len() {
        return Err(err(1, "fold column must be filled on every row or on none".into()));
    }
    Ok(records)
}

/// Writes records as CSV, storing paths relative to the manifest's directory where possible.
pub fn write_manifest(path: &Path, records: &[PairRecord]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let with_crop = records.iter().any(|r| r.crop.is_some());
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = REQUIRED.to_vec();
    if with_crop {
        header.extend(CROP);
    }
    let csv_err = |e: csv::Error| KinError::Format(e.to_string());
    writer.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.relation.as_str().to_string(),
            rel(&r.parent),
            rel(&r.child),
            r.label.as_str().to_string(),
            r.fold.map(|f| f.to_string()).unwrap_or_default(),
        ];
        if with_crop {
            match r.crop {
                Some(c) => row.extend([c.x.to_string(), c.y.to_string(), c.side.to_string()]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| KinError::Format(e.to_string()))?;
    crate::persist::write_atomic(path, &bytes)
}

/// Kin-pair counts per relation next to the Cornell KinFace shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDistribution {
    pub total: usize,
    pub counts: BTreeMap<Relation, usize>,
    pub percent: BTreeMap<Relation, f64>,
    pub reference_percent: BTreeMap<Relation, f64>,
}

impl RelationDistribution {
    pub fn of(records: &[PairRecord]) -> Self {
        let kin: Vec<&PairRecord> = records.iter().filter(|r| r.label.is_kin()).collect();
        let total = kin.len();
        let mut counts: BTreeMap<Relation, usize> = Relation::ALL.iter().map(|&r| (r, 0)).collect();
        for r in &kin {
            *counts.get_mut(&r.relation).unwrap() += 1;
        }
        let percent = counts
            .iter()
            .map(|(&r, &c)| (r, if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }))
            .collect();
        let reference_percent = Relation::ALL.iter().map(|&r| (r, r.reference_share())).collect();
        RelationDistribution {
            total,
            counts,
            percent,
            reference_percent,
        }
    }

    pub fn summary(&self) -> String {
        let parts: Vec<String> = Relation::ALL
            .iter()
            .map(|r| {
                format!(
                    "{} {} ({:.1}% vs {:.0}%)",
                    r.as_str(),
                    self.counts[r],
                    self.percent[r],
                    self.reference_percent[r]
                )
            })
            .collect();
        format!("{} kin pairs: {}", self.total, parts.join(", "))
    }
}
