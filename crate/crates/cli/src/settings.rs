use std::path::{Path, PathBuf};

use clap::Args;
use kinverify::config::RunConfig;
use kinverify::protocol::Report;
use kinverify::{KinError, Result};

/// Run settings: an optional config file, then flags on top (flags win).
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Flat `key = value` config file, or a JSON report whose config is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pair manifest (CSV).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Descriptors: bsif, lbp or both.
    #[arg(long)]
    descriptors: Option<String>,
    /// BSIF filter sizes, comma separated.
    #[arg(long)]
    sizes: Option<String>,
    /// Filters (code bits) per BSIF bank.
    #[arg(long)]
    bits: Option<usize>,
    /// Patches sampled per bank.
    #[arg(long)]
    patches: Option<usize>,
    /// LBP radii, comma separated.
    #[arg(long)]
    radii: Option<String>,
    /// Fusion: feature or score.
    #[arg(long)]
    fusion: Option<String>,
    /// Where filter banks come from: per-fold, all-data or dir.
    #[arg(long)]
    bank_source: Option<String>,
    /// Directory holding learned banks.
    #[arg(long)]
    banks_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Feature cache directory; $KINVERIFY_CACHE_DIR overrides it (default .kinverify-cache).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Patch sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// ICA initialization seed.
    #[arg(long)]
    ica_seed: Option<u64>,
    /// Seed for permuting labels within folds (chance-level control).
    #[arg(long)]
    shuffle_labels: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| KinError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if text.trim_start().starts_with('{') {
        if let Ok(report) = Report::from_json(&text) {
            return Ok(report.config);
        }
        return serde_json::from_str(&text)
            .map_err(|e| KinError::Format(format!("{}: neither a report nor a config: {e}", path.display())));
    }
    RunConfig::from_kv(&text)
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        let path = |p: &PathBuf| p.to_string_lossy().into_owned();
        let flags: Vec<(&str, Option<String>)> = vec![
            ("manifest", self.manifest.as_ref().map(path)),
            ("descriptors", self.descriptors.clone()),
            ("bsif_sizes", self.sizes.clone()),
            ("bsif_bits", self.bits.map(|v| v.to_string())),
            ("patches", self.patches.map(|v| v.to_string())),
            ("lbp_radii", self.radii.clone()),
            ("fusion", self.fusion.clone()),
            ("bank_source", self.bank_source.clone()),
            ("banks_dir", self.banks_dir.as_ref().map(path)),
            ("out_dir", self.out_dir.as_ref().map(path)),
            ("cache_dir", self.cache_dir.as_ref().map(path)),
            ("seed_patches", self.seed.map(|v| v.to_string())),
            ("seed_ica", self.ica_seed.map(|v| v.to_string())),
            ("shuffle_labels", self.shuffle_labels.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| KinError::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
