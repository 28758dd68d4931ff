//! Synthetic kin dataset: members of one family share a low-frequency color
//! texture (a few oriented sinusoidal gratings per channel); every image adds
//! its own white noise. `difficulty` is the noise weight: 0 makes parent and
//! child identical, 1 leaves pure noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{write_manifest, PairRecord, Relation, FOLDS};
use crate::error::{KinError, Result};
use crate::imaging::{ColorImage, Plane, CANONICAL_SIDE};
use crate::scoring::Label;

const GRATINGS_PER_CHANNEL: usize = 3;
const MIN_FAMILIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub families: usize,
    /// Noise weight in `[0, 1]`.
    pub difficulty: f64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: PathBuf,
    pub records: Vec<PairRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Grating {
    fx: f64,
    fy: f64,
    phase: f64,
    amplitude: f64,
}

fn family_texture(rng: &mut ChaCha8Rng) -> [Vec<Grating>; 3] {
    std::array::from_fn(|_| {
        (0..GRATINGS_PER_CHANNEL)
            .map(|_| {
                let cycles: f64 = rng.random_range(1.5..6.0);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Grating {
                    fx: cycles * angle.cos() / CANONICAL_SIDE as f64,
                    fy: cycles * angle.sin() / CANONICAL_SIDE as f64,
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude: rng.random_range(0.5..1.0),
                }
            })
            .collect()
    })
}

fn render(texture: &[Vec<Grating>; 3], difficulty: f64, rng: &mut ChaCha8Rng) -> ColorImage {
    let side = CANONICAL_SIDE;
    let mut planes = texture.iter().map(|gratings| {
        // unit-variance signal: each grating contributes amplitude² / 2
        let power: f64 = gratings.iter().map(|g| g.amplitude * g.amplitude / 2.0).sum();
        let norm = power.sqrt();
        Plane::from_fn(side, side, |x, y| {
            let signal: f64 = gratings
                .iter()
                .map(|g| {
                    g.amplitude
                        * (std::f64::consts::TAU * (g.fx * x as f64 + g.fy * y as f64) + g.phase).sin()
                })
                .sum::<f64>()
                / norm;
            let noise: f64 = StandardNormal.sample(rng);
            let v = (1.0 - difficulty) * signal + difficulty * noise;
            (128.0 + 50.0 * v).round().clamp(0.0, 255.0)
        })
    });
    let (r, g, b) = (planes.next().unwrap(), planes.next().unwrap(), planes.next().unwrap());
    ColorImage::from_planes(r, g, b).expect("planes share one size")
}

/// Writes `images/` and `manifest.csv` (kin pairs with folds) under `out_dir`.
///
/// Families are dealt into (fold, relation) cells so that every occupied cell
/// holds at least two kin pairs, which negative generation needs.
pub fn synth_kin_dataset(out_dir: &Path, opts: SynthOptions) -> Result<SynthDataset> {
    if opts.families < MIN_FAMILIES {
        return Err(KinError::InvalidArgument(format!(
            "{} families: at least {MIN_FAMILIES} are needed so every fold cell can be deranged",
            opts.families
        )));
    }
    if !(0.0..=1.0).contains(&opts.difficulty) {
        return Err(KinError::InvalidArgument(format!(
            "difficulty {} outside [0, 1]",
            opts.difficulty
        )));
    }
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| KinError::io(&images, e))?;

    let cells = (opts.families / 2).min(FOLDS * Relation::ALL.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(opts.families);
    for family in 0..opts.families {
        let cell = family % cells;
        let fold = (cell % FOLDS) as u8 + 1;
        let relation = Relation::ALL[(cell / FOLDS) % Relation::ALL.len()];
        let texture = family_texture(&mut rng);
        let mut member = |role: &str| -> Result<PathBuf> {
            let img = render(&texture, opts.difficulty, &mut rng);
            let path = images.join(format!("family{family:03}_{role}.png"));
            let mut bytes = Vec::new();
            img.to_rgb8(1.0)
                .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                .map_err(|e| KinError::Format(e.to_string()))?;
            crate::persist::write_atomic(&path, &bytes)?;
            Ok(path)
        };
        let parent = member("parent")?;
        let child = member("child")?;
        records.push(PairRecord {
            relation,
            parent,
            child,
            label: Label::Kin,
            fold: Some(fold),
            crop: None,
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(SynthDataset { manifest, records })
}
