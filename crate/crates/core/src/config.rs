//! Run configuration with a flat `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Descriptors {
    Bsif,
    Lbp,
    Both,
}

impl Descriptors {
    pub fn uses_bsif(self) -> bool {
        matches!(self, Descriptors::Bsif | Descriptors::Both)
    }

    pub fn uses_lbp(self) -> bool {
        matches!(self, Descriptors::Lbp | Descriptors::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// One tensor per image holding every (channel, scale) column.
    Feature,
    /// One subspace per scale; cosine scores averaged.
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankSource {
    /// Learn filters inside every fold from its training images only.
    PerFold,
    /// Learn filters once from every image in the manifest (leaks test images).
    AllData,
    /// Load `bsif_L{side}_n{bits}.kbsf` files from `banks_dir`.
    Dir,
}

macro_rules! kebab_enum_from_str {
    ($ty:ty { $($text:literal => $variant:expr),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = KinError;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($variant),)*
                    other => Err(KinError::InvalidArgument(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }

        impl $ty {
            pub fn as_str(self) -> &'static str {
                $(if self == $variant { return $text; })*
                unreachable!()
            }
        }
    };
}

kebab_enum_from_str!(Descriptors { "bsif" => Descriptors::Bsif, "lbp" => Descriptors::Lbp, "both" => Descriptors::Both });
kebab_enum_from_str!(Fusion { "feature" => Fusion::Feature, "score" => Fusion::Score });
kebab_enum_from_str!(BankSource { "per-fold" => BankSource::PerFold, "all-data" => BankSource::AllData, "dir" => BankSource::Dir });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub descriptors: Descriptors,
    pub lbp_radii: Vec<usize>,
    pub lbp_neighbors: usize,
    pub bsif_sizes: Vec<usize>,
    pub bsif_bits: usize,
    pub patches: usize,
    pub grid: usize,
    pub pca_dim: usize,
    pub dim_mode1: usize,
    pub dim_mode2: usize,
    pub sweeps: usize,
    pub spectrum_max: f64,
    pub fusion: Fusion,
    pub bank_source: BankSource,
    pub seed_patches: u64,
    pub seed_ica: u64,
    pub seed_negatives: u64,
    pub seed_folds: u64,
    pub seed_pca: u64,
    /// When set, labels are permuted within each fold with this seed (a
    /// chance-level control run).
    pub shuffle_labels: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub banks_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            descriptors: Descriptors::Bsif,
            lbp_radii: vec![1, 2, 3],
            lbp_neighbors: 8,
            bsif_sizes: vec![3, 7, 11, 15, 17],
            bsif_bits: 8,
            patches: 50_000,
            grid: 4,
            pca_dim: 200,
            dim_mode1: 40,
            dim_mode2: 8,
            sweeps: 2,
            spectrum_max: 50.0,
            fusion: Fusion::Feature,
            bank_source: BankSource::PerFold,
            seed_patches: 42,
            seed_ica: 43,
            seed_negatives: 44,
            seed_folds: 45,
            seed_pca: 46,
            shuffle_labels: None,
            manifest: None,
            banks_dir: None,
            out_dir: None,
            cache_dir: None,
            jobs: 1,
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| KinError::InvalidArgument(format!("'{s}' is not a non-negative integer")))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| KinError::InvalidArgument(format!("bad value '{value}' for {key}")))
}

fn join(values: &[usize]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "descriptors", "lbp_radii", "lbp_neighbors", "bsif_sizes", "bsif_bits", "patches",
        "grid", "pca_dim", "dim_mode1", "dim_mode2", "sweeps", "spectrum_max", "fusion",
        "bank_source", "seed_patches", "seed_ica", "seed_negatives", "seed_folds", "seed_pca",
        "shuffle_labels", "manifest", "banks_dir", "out_dir", "cache_dir", "jobs",
    ];

    /// Sets one key from its text form. An empty value clears optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "descriptors" => self.descriptors = v.parse()?,
            "lbp_radii" => self.lbp_radii = parse_list(v)?,
            "lbp_neighbors" => self.lbp_neighbors = parse_num(key, v)?,
            "bsif_sizes" => self.bsif_sizes = parse_list(v)?,
            "bsif_bits" => self.bsif_bits = parse_num(key, v)?,
            "patches" => self.patches = parse_num(key, v)?,
            "grid" => self.grid = parse_num(key, v)?,
            "pca_dim" => self.pca_dim = parse_num(key, v)?,
            "dim_mode1" => self.dim_mode1 = parse_num(key, v)?,
            "dim_mode2" => self.dim_mode2 = parse_num(key, v)?,
            "sweeps" => self.sweeps = parse_num(key, v)?,
            "spectrum_max" => self.spectrum_max = parse_num(key, v)?,
            "fusion" => self.fusion = v.parse()?,
            "bank_source" => self.bank_source = v.parse()?,
            "seed_patches" => self.seed_patches = parse_num(key, v)?,
            "seed_ica" => self.seed_ica = parse_num(key, v)?,
            "seed_negatives" => self.seed_negatives = parse_num(key, v)?,
            "seed_folds" => self.seed_folds = parse_num(key, v)?,
            "seed_pca" => self.seed_pca = parse_num(key, v)?,
            "shuffle_labels" => {
                self.shuffle_labels = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "manifest" => self.manifest = path(v),
            "banks_dir" => self.banks_dir = path(v),
            "out_dir" => self.out_dir = path(v),
            "cache_dir" => self.cache_dir = path(v),
            "jobs" => self.jobs = parse_num(key, v)?,
            other => {
                return Err(KinError::InvalidArgument(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                KinError::InvalidArgument(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let map = self.kv_map();
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", map[key]);
        }
        out
    }

    fn kv_map(&self) -> BTreeMap<&'static str, String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        BTreeMap::from([
            ("descriptors", self.descriptors.as_str().to_string()),
            ("lbp_radii", join(&self.lbp_radii)),
            ("lbp_neighbors", self.lbp_neighbors.to_string()),
            ("bsif_sizes", join(&self.bsif_sizes)),
            ("bsif_bits", self.bsif_bits.to_string()),
            ("patches", self.patches.to_string()),
            ("grid", self.grid.to_string()),
            ("pca_dim", self.pca_dim.to_string()),
            ("dim_mode1", self.dim_mode1.to_string()),
            ("dim_mode2", self.dim_mode2.to_string()),
            ("sweeps", self.sweeps.to_string()),
            ("spectrum_max", self.spectrum_max.to_string()),
            ("fusion", self.fusion.as_str().to_string()),
            ("bank_source", self.bank_source.as_str().to_string()),
            ("seed_patches", self.seed_patches.to_string()),
            ("seed_ica", self.seed_ica.to_string()),
            ("seed_negatives", self.seed_negatives.to_string()),
            ("seed_folds", self.seed_folds.to_string()),
            ("seed_pca", self.seed_pca.to_string()),
            ("shuffle_labels", self.shuffle_labels.map(|s| s.to_string()).unwrap_or_default()),
            ("manifest", p(&self.manifest)),
            ("banks_dir", p(&self.banks_dir)),
            ("out_dir", p(&self.out_dir)),
            ("cache_dir", p(&self.cache_dir)),
            ("jobs", self.jobs.to_string()),
        ])
    }

    /// Checks the numeric settings (paths are checked where they are used).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KinError::InvalidArgument(m));
        if self.descriptors.uses_bsif() {
            if self.bsif_sizes.is_empty() {
                return bad("bsif_sizes is empty".into());
            }
            if let Some(&s) = self.bsif_sizes.iter().find(|&&s| s < 2) {
                return bad(format!("BSIF filter side {s} < 2"));
            }
        }
        if self.descriptors.uses_lbp() {
            if self.lbp_radii.is_empty() {
                return bad("lbp_radii is empty".into());
            }
            if self.lbp_radii.contains(&0) {
                return bad("LBP radius 0".into());
            }
        }
        if self.descriptors == Descriptors::Both && self.bsif_bits != self.lbp_neighbors {
            return bad(format!(
                "combined descriptors need equal code widths (bsif_bits {} vs lbp_neighbors {})",
                self.bsif_bits, self.lbp_neighbors
            ));
        }
        if self.grid == 0 || self.dim_mode1 == 0 || self.dim_mode2 == 0 || self.jobs == 0 {
            return bad("grid, dim_mode1, dim_mode2 and jobs must be positive".into());
        }
        if !(self.spectrum_max > 0.0) {
            return bad("spectrum_max must be positive".into());
        }
        Ok(())
    }

    /// Human-readable method label for result tables.
    pub fn method_name(&self) -> String {
        let base = match self.descriptors {
            Descriptors::Bsif => "Color MS-BSIF Learning",
            Descriptors::Lbp => "Color MS-LBP",
            Descriptors::Both => "Color MS-BSIF Learning + MS-LBP",
        };
        format!("{base} ({} fusion)", self.fusion.as_str())
    }
}
