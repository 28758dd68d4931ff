use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;

use kinverify::bsif::{learn_filter_bank_with_stats, BankSeeds, FilterBank};
use kinverify::config::{Fusion, RunConfig};
use kinverify::imaging::CropWindow;
use kinverify::persist::{encode_bank, load_features, save_bank, save_features, save_model};
use kinverify::protocol::{
    bank_file_name, extract_views, hash_bytes, load_banks_from_dir, load_canonical, load_manifest,
    run_cross_validation, synth_kin_dataset, CanonicalImage, PairRecord, Report, SynthOptions,
};
use kinverify::{KinError, Result};

pub const CACHE_ENV: &str = "KINVERIFY_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".kinverify-cache";
const DEFAULT_BANKS_DIR: &str = "banks";

fn io(path: &Path, source: std::io::Error) -> KinError {
    KinError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| KinError::InvalidArgument(format!("thread pool: {e}")))
}

fn manifest_records(cfg: &RunConfig, command: &str) -> Result<Vec<PairRecord>> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| KinError::Missing(format!("{command} needs --manifest (or manifest in the config)")))?;
    load_manifest(path)
}

/// Distinct (image, crop) entries of a manifest in first-appearance order.
fn distinct_images(records: &[PairRecord]) -> Vec<(PathBuf, Option<CropWindow>)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        for path in [&r.parent, &r.child] {
            let key = (path.clone(), r.crop);
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
    }
    out
}

fn load_all(images: &[(PathBuf, Option<CropWindow>)], jobs: usize) -> Result<Vec<CanonicalImage>> {
    pool(jobs)?.install(|| {
        images
            .par_iter()
            .map(|(path, crop)| load_canonical(path, *crop))
            .collect()
    })
}

fn sorted_sizes(cfg: &RunConfig) -> Vec<usize> {
    let mut sizes = cfg.bsif_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

pub fn learn_filters(cfg: &RunConfig) -> Result<()> {
    let sizes = sorted_sizes(cfg);
    if let Some(&side) = sizes.iter().find(|&&s| cfg.bsif_bits >= s * s) {
        return Err(KinError::RankDeficient(format!(
            "{} bits needs at most {} for {side}x{side} filters",
            cfg.bsif_bits,
            side * side - 1
        )));
    }
    let records = manifest_records(cfg, "learn-filters")?;
    let out_dir = cfg
        .banks_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_BANKS_DIR));
    std::fs::create_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;

    let keys = distinct_images(&records);
    info!("learning from {} images", keys.len());
    let images: Vec<_> = load_all(&keys, cfg.jobs)?.into_iter().map(|c| c.image).collect();
    let seeds = BankSeeds {
        patches: cfg.seed_patches,
        ica: cfg.seed_ica,
    };
    for side in sizes {
        let (bank, stats) = learn_filter_bank_with_stats(&images, side, cfg.bsif_bits, cfg.patches, seeds)?;
        let path = out_dir.join(bank_file_name(side, cfg.bsif_bits));
        save_bank(&path, &bank)?;
        println!("{}", path.display());
        for s in stats {
            println!(
                "  {:?}: {} iterations, last change {:.2e}, orthonormality error {:.2e}",
                s.channel, s.iterations, s.last_change, s.orthonormality_error
            );
        }
    }
    Ok(())
}

pub fn cache_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg
            .cache_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
    }
}

/// Cache key: the image bytes, its crop, the extraction settings and the banks.
fn cache_key(image_hash: &str, crop: Option<CropWindow>, cfg: &RunConfig, bank_bytes: &[Vec<u8>]) -> String {
    let mut material = format!(
        "image={image_hash}\ncrop={crop:?}\ndescriptors={}\nlbp_radii={:?}\nlbp_neighbors={}\ngrid={}\n",
        cfg.descriptors.as_str(),
        cfg.lbp_radii,
        cfg.lbp_neighbors,
        cfg.grid
    )
    .into_bytes();
    for b in bank_bytes {
        material.extend_from_slice(b);
    }
    hash_bytes(&material)
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    let records = manifest_records(cfg, "extract")?;
    let banks: Vec<FilterBank> = if cfg.descriptors.uses_bsif() {
        let dir = cfg.banks_dir.as_ref().ok_or_else(|| {
            KinError::Missing("extract needs --banks-dir; create banks with `kinverify learn-filters`".into())
        })?;
        load_banks_from_dir(dir, cfg)?
    } else {
        Vec::new()
    };
    let bank_bytes = banks.iter().map(encode_bank).collect::<Result<Vec<_>>>()?;
    let dir = cache_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    // the cache always holds the single feature-fusion tensor
    let layout = RunConfig {
        fusion: Fusion::Feature,
        ..cfg.clone()
    };

    let keys = distinct_images(&records);
    let outcomes: Vec<bool> = pool(cfg.jobs)?.install(|| {
        keys.par_iter()
            .map(|(path, crop)| -> Result<bool> {
                let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
                let key = cache_key(&hash_bytes(&bytes), *crop, cfg, &bank_bytes);
                let target = dir.join(format!("{key}.kfea"));
                if target.is_file() && load_features(&target).is_ok() {
                    debug!("cache hit: {} ({})", path.display(), target.display());
                    return Ok(false);
                }
                let canonical = load_canonical(path, *crop)?;
                let mut views = extract_views(&canonical.image, &banks, &layout)?;
                save_features(&target, &views.remove(0))?;
                debug!("{} -> {}", path.display(), target.display());
                Ok(true)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let written = outcomes.iter().filter(|&&w| w).count();
    println!(
        "{} images: {written} extracted, {} already cached in {}",
        keys.len(),
        keys.len() - written,
        dir.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let records = manifest_records(cfg, "eval")?;
    let outcome = run_cross_validation(&records, cfg)?;
    let report = Report::new(cfg, &outcome);
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;
    let stem = format!("report_{}_{}", cfg.descriptors.as_str(), cfg.fusion.as_str());
    let json_path = out_dir.join(format!("{stem}.json"));
    let table_path = out_dir.join(format!("{stem}.txt"));
    kinverify::persist::write_atomic(&json_path, report.to_json()?.as_bytes())?;
    let table = report.table();
    kinverify::persist::write_atomic(&table_path, table.as_bytes())?;

    let models_dir = out_dir.join("models").join(&stem);
    std::fs::create_dir_all(&models_dir).map_err(|e| io(&models_dir, e))?;
    for fold in &outcome.folds {
        for (v, model) in fold.models.iter().enumerate() {
            save_model(&models_dir.join(format!("fold{}_view{v}.ktxq", fold.fold)), model)?;
        }
    }
    if report.audit.leaks > 0 {
        log::warn!(
            "{} test images fed training stages (bank source {})",
            report.audit.leaks,
            cfg.bank_source.as_str()
        );
    }
    print!("{table}");
    println!("\nreport: {}\ntable: {}", json_path.display(), table_path.display());
    Ok(())
}

pub fn synth(out_dir: &Path, families: usize, seed: u64, difficulty: f64) -> Result<()> {
    let ds = synth_kin_dataset(
        out_dir,
        SynthOptions {
            seed,
            families,
            difficulty,
        },
    )?;
    println!("{} kin pairs; manifest {}", ds.records.len(), ds.manifest.display());
    Ok(())
}
