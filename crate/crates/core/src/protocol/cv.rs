//! K-fold evaluation of the full pipeline.
//!
//! Each fold learns everything (BSIF filters, PCA, subspace projections,
//! decision threshold) from the pairs of the other folds and then scores its
//! own pairs. Every learning stage records the content hashes of the images it
//! consumed in an [`AuditLog`], so leakage of test images can be checked
//! after the fact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    assign_folds, compute_metrics, generate_negatives, shuffle_labels_within_folds, FoldSplit,
    Metrics, PairRecord, RelationDistribution, ScoredPair, FOLDS,
};
use crate::bsif::{learn_filter_bank_with_stats, ms_bsif, FilterBank};
use crate::config::{BankSource, Fusion, RunConfig};
use crate::error::{KinError, Result};
use crate::features::{assemble_tensor, FeatureTensor, Grid};
use crate::imaging::{decode_image, preprocess, ColorImage, CropWindow};
use crate::lbp::{ms_lbp, CodeMap};
use crate::persist::load_bank;
use crate::scoring::{choose_threshold, cosine_score, fuse_scores, Score, Threshold};
use crate::subspace::{project, SubspaceModel, txqda_fit_with_report, ModeFit, SpectrumClip, TensorPair, TxqdaOptions};

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Patches,
    Filters,
    Pca,
    Projections,
    Threshold,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Patches,
        Stage::Filters,
        Stage::Pca,
        Stage::Projections,
        Stage::Threshold,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: u8,
    pub test_images: BTreeSet<String>,
    pub stages: BTreeMap<Stage, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub fold: u8,
    pub stage: Stage,
    pub image: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    pub folds: Vec<FoldAudit>,
}

impl AuditLog {
    /// Every (fold, stage, image) where a test image of the fold fed a training stage.
    pub fn leaks(&self) -> Vec<Leak> {
        let mut out = Vec::new();
        for f in &self.folds {
            for (&stage, images) in &f.stages {
                for image in images.intersection(&f.test_images) {
                    out.push(Leak {
                        fold: f.fold,
                        stage,
                        image: image.clone(),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFit {
    pub view: String,
    pub input_dims: (usize, usize),
    pub output_dims: (usize, usize),
    pub mode_fits: Vec<Option<ModeFit>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: u8,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub threshold: Threshold,
    pub accuracy: f64,
    pub views: Vec<ViewFit>,
    /// One fitted model per view, aligned with `views`.
    #[serde(skip)]
    pub models: Vec<SubspaceModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub metrics: Metrics,
    pub folds: Vec<FoldResult>,
    pub scored: Vec<ScoredPair>,
    pub distribution: RelationDistribution,
    pub audit: AuditLog,
}

/// Ensures folds, negatives and (optionally) shuffled labels, in that order.
pub fn prepare_records(records: &[PairRecord], cfg: &RunConfig) -> Result<Vec<PairRecord>> {
    let mut positives: Vec<PairRecord> = records.iter().filter(|r| r.label.is_kin()).cloned().collect();
    let mut negatives: Vec<PairRecord> = records.iter().filter(|r| !r.label.is_kin()).cloned().collect();
    if records.iter().all(|r| r.fold.is_none()) {
        if !negatives.is_empty() {
            // supplied negatives need folds too; deal all pairs together
            let mut all: Vec<PairRecord> = records.to_vec();
            assign_folds(&mut all, cfg.seed_folds)?;
            positives = all.iter().filter(|r| r.label.is_kin()).cloned().collect();
            negatives = all.iter().filter(|r| !r.label.is_kin()).cloned().collect();
        } else {
            assign_folds(&mut positives, cfg.seed_folds)?;
        }
    }
    if negatives.is_empty() {
        negatives = generate_negatives(&positives, cfg.seed_negatives)?;
    }
    let mut all: Vec<PairRecord> = positives.into_iter().chain(negatives).collect();
    FoldSplit::of(&all)?.check(&all)?;
    if let Some(seed) = cfg.shuffle_labels {
        shuffle_labels_within_folds(&mut all, seed);
    }
    Ok(all)
}

/// Key of a distinct canonical image: source file plus crop.
type ImageKey = (PathBuf, Option<CropWindow>);

/// A preprocessed image with the SHA-256 of its source file.
#[derive(Debug, Clone)]
pub struct CanonicalImage {
    pub hash: String,
    pub image: ColorImage,
}

/// Reads, decodes and preprocesses one image. Without a crop the largest
/// centered square is used.
pub fn load_canonical(path: &Path, crop: Option<CropWindow>) -> Result<CanonicalImage> {
    let bytes = std::fs::read(path).map_err(|e| KinError::io(path, e))?;
    let raw = decode_image(&bytes).map_err(|reason| KinError::Decode {
        path: path.to_path_buf(),
        reason,
    })?;
    let window = crop.unwrap_or_else(|| CropWindow::centered_square(raw.width(), raw.height()));
    Ok(CanonicalImage {
        hash: hash_bytes(&bytes),
        image: preprocess(&raw, window)?,
    })
}

/// Feature tensors of one canonical image.
///
/// With feature fusion there is a single tensor whose columns run
/// channel-major over BSIF scales (ascending side) followed by LBP radii
/// (ascending). With score fusion there is one three-column tensor per scale,
/// BSIF scales first.
pub fn extract_views(img: &ColorImage, banks: &[FilterBank], cfg: &RunConfig) -> Result<Vec<FeatureTensor>> {
    let grid = Grid {
        rows: cfg.grid,
        cols: cfg.grid,
    };
    let bsif = if cfg.descriptors.uses_bsif() { ms_bsif(img, banks)? } else { Vec::new() };
    let lbp = if cfg.descriptors.uses_lbp() {
        ms_lbp(img, &cfg.lbp_radii, cfg.lbp_neighbors)?
    } else {
        Vec::new()
    };
    let (nb, nl) = (bsif.len() / 3, lbp.len() / 3);
    let per_channel = |c: usize| -> Vec<&CodeMap> {
        bsif[c * nb..(c + 1) * nb]
            .iter()
            .chain(&lbp[c * nl..(c + 1) * nl])
            .collect()
    };
    let channels: Vec<Vec<&CodeMap>> = (0..3).map(per_channel).collect();
    match cfg.fusion {
        Fusion::Feature => {
            let maps: Vec<CodeMap> = channels.iter().flatten().map(|m| (*m).clone()).collect();
            Ok(vec![assemble_tensor(&maps, grid)?])
        }
        Fusion::Score => (0..nb + nl)
            .map(|s| {
                let maps: Vec<CodeMap> = channels.iter().map(|ch| ch[s].clone()).collect();
                assemble_tensor(&maps, grid)
            })
            .collect(),
    }
}

fn view_names(cfg: &RunConfig) -> Vec<String> {
    let mut sizes = cfg.bsif_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut radii = cfg.lbp_radii.clone();
    radii.sort_unstable();
    radii.dedup();
    let mut scales: Vec<String> = Vec::new();
    if cfg.descriptors.uses_bsif() {
        scales.extend(sizes.iter().map(|s| format!("bsif-L{s}")));
    }
    if cfg.descriptors.uses_lbp() {
        scales.extend(radii.iter().map(|r| format!("lbp-R{r}")));
    }
    match cfg.fusion {
        Fusion::Feature => vec![scales.join("+")],
        Fusion::Score => scales,
    }
}

pub fn bank_file_name(side: usize, bits: usize) -> String {
    format!("bsif_L{side}_n{bits}.kbsf")
}

fn learn_banks(images: &[&ColorImage], cfg: &RunConfig) -> Result<Vec<FilterBank>> {
    let owned: Vec<ColorImage> = images.iter().map(|&i| i.clone()).collect();
    let mut sizes = cfg.bsif_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .iter()
        .map(|&side| {
            let (bank, stats) = learn_filter_bank_with_stats(
                &owned,
                side,
                cfg.bsif_bits,
                cfg.patches,
                crate::bsif::BankSeeds {
                    patches: cfg.seed_patches,
                    ica: cfg.seed_ica,
                },
            )?;
            for s in stats {
                debug!(
                    "bank L={side} {:?}: ICA converged in {} iterations (change {:.2e})",
                    s.channel, s.iterations, s.last_change
                );
            }
            Ok(bank)
        })
        .collect()
}

pub fn load_banks_from_dir(dir: &Path, cfg: &RunConfig) -> Result<Vec<FilterBank>> {
    let mut sizes = cfg.bsif_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .iter()
        .map(|&side| {
            let path = dir.join(bank_file_name(side, cfg.bsif_bits));
            if !path.is_file() {
                return Err(KinError::Missing(format!(
                    "filter bank {} not found; create it with `kinverify learn-filters --sizes {} --bits {} --out-dir {}`",
                    path.display(),
                    side,
                    cfg.bsif_bits,
                    dir.display()
                )));
            }
            let bank = load_bank(&path)?;
            if bank.side() != side || bank.bits() != cfg.bsif_bits {
                return Err(KinError::Format(format!(
                    "{} holds a {}x{} bank with {} bits",
                    path.display(),
                    bank.side(),
                    bank.side(),
                    bank.bits()
                )));
            }
            Ok(bank)
        })
        .collect()
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| KinError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the protocol end to end on manifest records.
pub fn run_cross_validation(records: &[PairRecord], cfg: &RunConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    let pairs = prepare_records(records, cfg)?;
    let distribution = RelationDistribution::of(&pairs);
    info!("{}", distribution.summary());

    // distinct canonical images, in first-appearance order
    let mut keys: Vec<ImageKey> = Vec::new();
    let mut key_index: BTreeMap<ImageKey, usize> = BTreeMap::new();
    let mut pair_images: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    for r in &pairs {
        let mut index_of = |path: &PathBuf| {
            let key = (path.clone(), r.crop);
            *key_index.entry(key.clone()).or_insert_with(|| {
                keys.push(key);
                keys.len() - 1
            })
        };
        let p = index_of(&r.parent);
        let c = index_of(&r.child);
        pair_images.push((p, c));
    }
    info!("loading {} images", keys.len());
    let loaded: Vec<CanonicalImage> = with_pool(cfg.jobs, || {
        keys.par_iter()
            .map(|(path, crop)| load_canonical(path, *crop))
            .collect::<Result<Vec<_>>>()
    })??;

    let shared_banks = match (cfg.descriptors.uses_bsif(), cfg.bank_source) {
        (false, _) => Some(Vec::new()),
        (true, BankSource::PerFold) => None,
        (true, BankSource::AllData) => {
            let all: Vec<&ColorImage> = loaded.iter().map(|l| &l.image).collect();
            Some(learn_banks(&all, cfg)?)
        }
        (true, BankSource::Dir) => {
            let dir = cfg.banks_dir.as_ref().ok_or_else(|| {
                KinError::Missing(
                    "bank_source = dir needs banks_dir; create banks with `kinverify learn-filters`".into(),
                )
            })?;
            Some(load_banks_from_dir(dir, cfg)?)
        }
    };
    let names = view_names(cfg);

    let mut audit = AuditLog::default();
    let mut fold_results = Vec::with_capacity(FOLDS);
    let mut scored = Vec::with_capacity(pairs.len());
    for fold in 1..=FOLDS as u8 {
        let train: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].fold != Some(fold)).collect();
        let test: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].fold == Some(fold)).collect();
        let images_of = |idx: &[usize]| -> BTreeSet<usize> {
            idx.iter().flat_map(|&i| [pair_images[i].0, pair_images[i].1]).collect()
        };
        let train_images = images_of(&train);
        let test_images = images_of(&test);
        let hashes = |set: &BTreeSet<usize>| -> BTreeSet<String> {
            set.iter().map(|&i| loaded[i].hash.clone()).collect()
        };
        let train_hashes = hashes(&train_images);
        let mut fold_audit = FoldAudit {
            fold,
            test_images: hashes(&test_images),
            stages: BTreeMap::new(),
        };
        info!("fold {fold}: {} training pairs, {} test pairs", train.len(), test.len());

        let banks = match &shared_banks {
            Some(b) => {
                if cfg.descriptors.uses_bsif() && cfg.bank_source == BankSource::AllData {
                    let every: BTreeSet<String> = loaded.iter().map(|l| l.hash.clone()).collect();
                    fold_audit.stages.insert(Stage::Patches, every.clone());
                    fold_audit.stages.insert(Stage::Filters, every);
                }
                b.clone()
            }
            None => {
                let imgs: Vec<&ColorImage> = train_images.iter().map(|&i| &loaded[i].image).collect();
                let started = Instant::now();
                let banks = learn_banks(&imgs, cfg)?;
                debug!("fold {fold}: filter learning took {:.2?}", started.elapsed());
                fold_audit.stages.insert(Stage::Patches, train_hashes.clone());
                fold_audit.stages.insert(Stage::Filters, train_hashes.clone());
                banks
            }
        };

        let needed: Vec<usize> = train_images.union(&test_images).copied().collect();
        let started = Instant::now();
        let extracted: Vec<Vec<FeatureTensor>> = with_pool(cfg.jobs, || {
            needed
                .par_iter()
                .map(|&i| extract_views(&loaded[i].image, &banks, cfg))
                .collect::<Result<Vec<_>>>()
        })??;
        debug!("fold {fold}: feature extraction took {:.2?}", started.elapsed());
        let views_of: BTreeMap<usize, &Vec<FeatureTensor>> =
            needed.iter().copied().zip(extracted.iter()).collect();

        let mut view_fits = Vec::with_capacity(names.len());
        let mut models = Vec::with_capacity(names.len());
        for (v, name) in names.iter().enumerate() {
            let tensor_pairs: Vec<TensorPair> = train
                .iter()
                .map(|&i| TensorPair {
                    parent: &views_of[&pair_images[i].0][v],
                    child: &views_of[&pair_images[i].1][v],
                    label: pairs[i].label,
                })
                .collect();
            let (d1, d2) = (tensor_pairs[0].parent.mode1_dim(), tensor_pairs[0].parent.mode2_dim());
            let reduced = d1.min(train.len() - 1).min(cfg.pca_dim);
            let opts = TxqdaOptions {
                dims: (cfg.dim_mode1.min(reduced), cfg.dim_mode2.min(d2)),
                sweeps: cfg.sweeps,
                pca_cap: Some(cfg.pca_dim),
                clip: SpectrumClip {
                    min: 0.0,
                    max: cfg.spectrum_max,
                },
                seed: cfg.seed_pca,
            };
            let started = Instant::now();
            let report = txqda_fit_with_report(&tensor_pairs, opts)?;
            debug!("fold {fold}: subspace fit for {name} took {:.2?}", started.elapsed());
            view_fits.push(ViewFit {
                view: name.clone(),
                input_dims: (d1, d2),
                output_dims: opts.dims,
                mode_fits: report.mode_fits,
            });
            models.push(report.model);
        }
        fold_audit.stages.insert(Stage::Pca, train_hashes.clone());
        fold_audit.stages.insert(Stage::Projections, train_hashes.clone());

        let projected: BTreeMap<usize, Vec<Vec<f64>>> = needed
            .iter()
            .map(|&img| {
                let z = models
                    .iter()
                    .zip(views_of[&img])
                    .map(|(model, t)| project(model, t))
                    .collect::<Result<Vec<_>>>()?;
                Ok((img, z))
            })
            .collect::<Result<_>>()?;
        let score_pair = |i: usize| -> Result<f64> {
            let (zp, zc) = (&projected[&pair_images[i].0], &projected[&pair_images[i].1]);
            let scores = zp
                .iter()
                .zip(zc)
                .map(|(a, b)| cosine_score(a, b))
                .collect::<Result<Vec<Score>>>()?;
            Ok(fuse_scores(&scores, None)?.value())
        };
        let started = Instant::now();
        let train_scores = train.iter().map(|&i| score_pair(i)).collect::<Result<Vec<f64>>>()?;
        let train_labels: Vec<_> = train.iter().map(|&i| pairs[i].label).collect();
        let threshold = choose_threshold(&train_scores, &train_labels)?;
        fold_audit.stages.insert(Stage::Threshold, train_hashes);

        let mut correct = 0usize;
        for &i in &test {
            let s = ScoredPair {
                fold,
                relation: pairs[i].relation,
                label: pairs[i].label,
                score: score_pair(i)?,
                threshold: threshold.value,
            };
            correct += usize::from(s.correct());
            scored.push(s);
        }
        debug!("fold {fold}: scoring took {:.2?}", started.elapsed());
        let accuracy = 100.0 * correct as f64 / test.len() as f64;
        info!(
            "fold {fold}: threshold {:.4} (training accuracy {:.2}%), test accuracy {accuracy:.2}%",
            threshold.value,
            100.0 * threshold.training_accuracy.unwrap_or(f64::NAN)
        );
        fold_results.push(FoldResult {
            fold,
            train_pairs: train.len(),
            test_pairs: test.len(),
            threshold,
            accuracy,
            views: view_fits,
            models,
        });
        audit.folds.push(fold_audit);
    }

    Ok(CvOutcome {
        metrics: compute_metrics(&scored)?,
        folds: fold_results,
        scored,
        distribution,
        audit,
    })
}
