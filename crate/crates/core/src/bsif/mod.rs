//! Binarized statistical image features with filters learned from face patches.
//!
//! Learning: random L×L patches are normalized, mean-centered, whitened onto
//! the leading `n` principal directions and unmixed by fixed-point ICA. The
//! composed rows form `n` filters per color channel. Encoding correlates each
//! filter with the replicate-padded plane and stacks the signs of the
//! responses into an `n`-bit code.

mod ica;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ica::{fixed_point_ica, IcaOptions, IcaOutcome};

use crate::error::{KinError, Result};
use crate::imaging::{normalize_patch_in_place, Channel, ColorImage, Plane};
use crate::lbp::CodeMap;
use crate::linalg::{canonical_sign, orthonormality_error, sorted_eigen};

/// Redraw budget per requested patch before sampling gives up.
const REDRAWS_PER_PATCH: usize = 20;

/// Normalized, flattened patches from one color channel.
#[derive(Debug, Clone)]
pub struct PatchSet {
    side: usize,
    channel: Channel,
    /// count × side² (one patch per row).
    data: DMatrix<f64>,
}

impl PatchSet {
    /// Wraps already-normalized rows. Each row must have mean 0 and
    /// population std 1 (within 1e-6).
    pub fn from_rows(side: usize, channel: Channel, data: DMatrix<f64>) -> Result<Self> {
        let dim = side * side;
        if data.ncols() != dim {
            return Err(KinError::DimensionMismatch(format!(
                "patch rows have {} entries, side {side} needs {dim}",
                data.ncols()
            )));
        }
        for (i, row) in data.row_iter().enumerate() {
            let mean = row.sum() / dim as f64;
            let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64).sqrt();
            if mean.abs() > 1e-6 || (std - 1.0).abs() > 1e-6 {
                return Err(KinError::InvalidArgument(format!(
                    "patch row {i} is not normalized (mean {mean:.2e}, std {std:.6})"
                )));
            }
        }
        Ok(PatchSet {
            side,
            channel,
            data,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Draws `count` patch locations uniformly over (image, x, y) and cuts the
/// same location from all three channels. A location where any channel is
/// flat is rejected and redrawn.
pub fn sample_patches(
    images: &[ColorImage],
    side: usize,
    count: usize,
    seed: u64,
) -> Result<[PatchSet; 3]> {
    let dim = side * side;
    if side < 2 {
        return Err(KinError::InvalidArgument(format!("patch side {side} < 2")));
    }
    if images.is_empty() {
        return Err(KinError::InvalidArgument("no images to sample from".into()));
    }
    if count < 10 * dim {
        return Err(KinError::InvalidArgument(format!(
            "{count} patches is fewer than 10 x {dim} for side {side}"
        )));
    }
    if let Some(small) = images.iter().find(|im| im.width() < side || im.height() < side) {
        return Err(KinError::TooSmall(format!(
            "{}x{} image for {side}x{side} patches",
            small.width(),
            small.height()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(count * dim));
    let mut scratch = vec![0.0; dim];
    let mut accepted = 0;
    let budget = count * REDRAWS_PER_PATCH;
    let mut drawn = 0;
    'draw: while accepted < count {
        if drawn == budget {
            return Err(KinError::Degenerate(format!(
                "only {accepted} of {count} patches were non-flat after {budget} draws"
            )));
        }
        drawn += 1;
        let image = &images[rng.random_range(0..images.len())];
        let x = rng.random_range(0..=image.width() - side);
        let y = rng.random_range(0..=image.height() - side);
        let start = accepted * dim;
        for (c, plane) in image.planes().iter().enumerate() {
            plane.copy_block(x, y, side, &mut scratch);
            if normalize_patch_in_place(&mut scratch).is_err() {
                for r in rows.iter_mut().take(c) {
                    r.truncate(start);
                }
                continue 'draw;
            }
            rows[c].extend_from_slice(&scratch);
        }
        accepted += 1;
    }

    let mut sets = rows
        .into_iter()
        .zip(Channel::ALL)
        .map(|(r, channel)| PatchSet {
            side,
            channel,
            data: DMatrix::from_row_slice(count, dim, &r),
        });
    Ok([
        sets.next().unwrap(),
        sets.next().unwrap(),
        sets.next().unwrap(),
    ])
}

/// Filters learned for one channel plus the diagnostics of the ICA run.
#[derive(Debug, Clone)]
pub struct LearnedFilters {
    pub side: usize,
    /// n × side² (one filter per row, coefficients row-major over the patch).
    pub filters: DMatrix<f64>,
    /// n × n unmixing matrix acting on whitened patches.
    pub unmixing: DMatrix<f64>,
    pub iterations: usize,
    pub last_change: f64,
    pub orthonormality_error: f64,
}

pub fn learn_filters(patches: &PatchSet, bits: usize, seed: u64) -> Result<LearnedFilters> {
    learn_filters_with(patches, bits, seed, IcaOptions::default())
}

pub fn learn_filters_with(
    patches: &PatchSet,
    bits: usize,
    seed: u64,
    opts: IcaOptions,
) -> Result<LearnedFilters> {
    let dim = patches.side * patches.side;
    if bits == 0 || bits >= dim {
        return Err(KinError::RankDeficient(format!(
            "{bits} filters requested but normalized {0}x{0} patches span at most {1} dimensions",
            patches.side,
            dim - 1
        )));
    }
    if bits > CodeMap::MAX_BITS as usize {
        return Err(KinError::InvalidArgument(format!(
            "{bits} bits exceeds the {}-bit code limit",
            CodeMap::MAX_BITS
        )));
    }
    let count = patches.count();
    if count < 2 {
        return Err(KinError::TooSmall(format!("{count} patches")));
    }

    let mut centered = patches.data.clone();
    let mean = DVector::from_iterator(dim, centered.column_iter().map(|c| c.mean()));
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    // dim × count transposed view over the same storage (no copy)
    let centered_t = DMatrixView::from_slice_with_strides(centered.as_slice(), dim, count, count, 1);
    let cov = centered_t * &centered / count as f64;
    let (values, vectors) = sorted_eigen(cov);
    let floor = values[0].max(0.0) * 1e-10;
    if !(values[bits - 1] > floor) {
        return Err(KinError::RankDeficient(format!(
            "patch covariance eigenvalue {} is {:.3e}, at or below the rank floor {floor:.3e}",
            bits, values[bits - 1]
        )));
    }

    // bits × dim whitening matrix
    let mut whitening = vectors.columns(0, bits).transpose();
    for (i, mut row) in whitening.row_iter_mut().enumerate() {
        row /= values[i].sqrt();
    }
    let whitened = &whitening * centered_t;
    let ica = fixed_point_ica(&whitened, seed, opts)?;
    let ortho = orthonormality_error(&ica.unmixing);
    if ortho > 1e-6 {
        return Err(KinError::Degenerate(format!(
            "unmixing rows deviate from orthonormal by {ortho:.3e}"
        )));
    }

    let mut filters = &ica.unmixing * &whitening;
    for mut row in filters.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
        let mut coeffs: Vec<f64> = row.iter().copied().collect();
        canonical_sign(&mut coeffs);
        row.copy_from_slice(&coeffs);
    }
    Ok(LearnedFilters {
        side: patches.side,
        filters,
        unmixing: ica.unmixing,
        iterations: ica.iterations,
        last_change: ica.last_change,
        orthonormality_error: ortho,
    })
}

/// A learned (or imported) BSIF model: `bits` filters of `side`×`side` for each
/// of the three color channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    side: usize,
    bits: usize,
    /// channel-major, then filter, then row-major coefficients
    coeffs: Vec<f64>,
    pub learn_seed: u64,
    pub source_tag: String,
}

impl FilterBank {
    pub fn new(
        side: usize,
        bits: usize,
        coeffs: Vec<f64>,
        learn_seed: u64,
        source_tag: String,
    ) -> Result<Self> {
        if side == 0 || bits == 0 || bits > CodeMap::MAX_BITS as usize {
            return Err(KinError::InvalidArgument(format!(
                "filter bank side {side}, bits {bits}"
            )));
        }
        if coeffs.len() != 3 * bits * side * side {
            return Err(KinError::DimensionMismatch(format!(
                "filter bank {side}x{side}x{bits}x3 with {} coefficients",
                coeffs.len()
            )));
        }
        Ok(FilterBank {
            side,
            bits,
            coeffs,
            learn_seed,
            source_tag,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn channel(&self, channel: Channel) -> ChannelFilters<'_> {
        let len = self.bits * self.side * self.side;
        let start = channel.index() * len;
        ChannelFilters {
            side: self.side,
            count: self.bits,
            coeffs: &self.coeffs[start..start + len],
        }
    }
}

/// Borrowed stack of `count` filters of `side`×`side`.
#[derive(Debug, Clone, Copy)]
pub struct ChannelFilters<'a> {
    pub side: usize,
    pub count: usize,
    pub coeffs: &'a [f64],
}

impl<'a> ChannelFilters<'a> {
    pub fn new(side: usize, count: usize, coeffs: &'a [f64]) -> Result<Self> {
        if side == 0 || count == 0 || count > CodeMap::MAX_BITS as usize {
            return Err(KinError::InvalidArgument(format!(
                "{count} filters of side {side}"
            )));
        }
        if coeffs.len() != count * side * side {
            return Err(KinError::DimensionMismatch(format!(
                "{count} filters of side {side} need {} coefficients, got {}",
                count * side * side,
                coeffs.len()
            )));
        }
        Ok(ChannelFilters { side, count, coeffs })
    }

    pub fn filter(&self, i: usize) -> &'a [f64] {
        let len = self.side * self.side;
        &self.coeffs[i * len..(i + 1) * len]
    }
}

/// Diagnostics from learning one bank.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub channel: Channel,
    pub iterations: usize,
    pub last_change: f64,
    pub orthonormality_error: f64,
}

/// ICA seed for `channel`, derived from the bank seed.
fn channel_seed(seed: u64, channel: Channel) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (channel.index() as u64 + 1)
}

/// Seeds of the two random stages of bank learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankSeeds {
    pub patches: u64,
    pub ica: u64,
}

impl BankSeeds {
    pub fn single(seed: u64) -> Self {
        BankSeeds { patches: seed, ica: seed }
    }
}

pub fn learn_filter_bank(
    images: &[ColorImage],
    side: usize,
    bits: usize,
    count: usize,
    seed: u64,
) -> Result<FilterBank> {
    learn_filter_bank_with_stats(images, side, bits, count, BankSeeds::single(seed)).map(|(bank, _)| bank)
}

/// The bank records the patch seed; the ICA seed goes into the source tag
/// when it differs.
pub fn learn_filter_bank_with_stats(
    images: &[ColorImage],
    side: usize,
    bits: usize,
    count: usize,
    seeds: BankSeeds,
) -> Result<(FilterBank, Vec<ChannelStats>)> {
    if bits == 0 || bits >= side * side {
        return Err(KinError::RankDeficient(format!(
            "{bits} bits needs at most {} for {side}x{side} filters",
            side * side - 1
        )));
    }
    let sets = sample_patches(images, side, count, seeds.patches)?;
    let mut coeffs = Vec::with_capacity(3 * bits * side * side);
    let mut stats = Vec::with_capacity(3);
    for set in &sets {
        let learned = learn_filters(set, bits, channel_seed(seeds.ica, set.channel))?;
        for row in learned.filters.row_iter() {
            coeffs.extend(row.iter());
        }
        stats.push(ChannelStats {
            channel: set.channel,
            iterations: learned.iterations,
            last_change: learned.last_change,
            orthonormality_error: learned.orthonormality_error,
        });
    }
    let mut tag = format!(
        "face-patches images={} patches={count} side={side} bits={bits}",
        images.len()
    );
    if seeds.ica != seeds.patches {
        tag.push_str(&format!(" ica-seed={}", seeds.ica));
    }
    Ok((FilterBank::new(side, bits, coeffs, seeds.patches, tag)?, stats))
}

/// BSIF codes for one plane. The plane is replicate-padded so the map keeps
/// the plane's size; the filter window around pixel `(x, y)` starts at
/// `(x - (side-1)/2, y - (side-1)/2)`. Bit `i` is set iff response `i > 0`.
pub fn bsif_encode(plane: &Plane, filters: ChannelFilters<'_>) -> Result<CodeMap> {
    let side = filters.side;
    let (w, h) = (plane.width(), plane.height());
    if w < side || h < side {
        return Err(KinError::TooSmall(format!(
            "{w}x{h} plane for {side}x{side} filters"
        )));
    }
    let half = (side - 1) / 2;
    let pw = w + side - 1;
    let ph = h + side - 1;
    let mut padded = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let sy = py.saturating_sub(half).min(h - 1);
        for px in 0..pw {
            let sx = px.saturating_sub(half).min(w - 1);
            padded.push(plane.get(sx, sy));
        }
    }

    let mut codes = vec![0u32; w * h];
    let mut response = vec![0.0f64; w * h];
    for i in 0..filters.count {
        let f = filters.filter(i);
        response.iter_mut().for_each(|r| *r = 0.0);
        // Per pixel the terms are added in (dy, dx) order, the same order as a
        // direct dot product over the window.
        for dy in 0..side {
            for dx in 0..side {
                let coeff = f[dy * side + dx];
                for y in 0..h {
                    let src = &padded[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                    let dst = &mut response[y * w..(y + 1) * w];
                    for (r, &p) in dst.iter_mut().zip(src) {
                        *r += coeff * p;
                    }
                }
            }
        }
        for (code, &r) in codes.iter_mut().zip(&response) {
            if r > 0.0 {
                *code |= 1 << i;
            }
        }
    }
    CodeMap::new(w, h, filters.count as u32, codes)
}

/// One map per (channel, bank), channel-major with banks by ascending side.
pub fn ms_bsif(img: &ColorImage, banks: &[FilterBank]) -> Result<Vec<CodeMap>> {
    let mut ordered: Vec<&FilterBank> = banks.iter().collect();
    ordered.sort_by_key(|b| b.side);
    let mut maps = Vec::with_capacity(3 * ordered.len());
    for channel in Channel::ALL {
        for bank in &ordered {
            maps.push(bsif_encode(img.plane(channel), bank.channel(channel))?);
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_image(seed: u64, side: usize) -> ColorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = || Plane::from_fn(side, side, |_, _| rng.random::<f64>());
        ColorImage::from_planes(mk(), mk(), mk()).unwrap()
    }

    #[test]
    fn zero_plane_gives_zero_codes() {
        let coeffs: Vec<f64> = (0..2 * 9).map(|i| i as f64 - 8.5).collect();
        let filters = ChannelFilters::new(3, 2, &coeffs).unwrap();
        let map = bsif_encode(&Plane::filled(8, 8, 0.0), filters).unwrap();
        assert!(map.codes().iter().all(|&c| c == 0));
        assert_eq!((map.width(), map.height()), (8, 8));
    }

    #[test]
    fn single_filter_codes_are_binary() {
        let img = noise_image(1, 16);
        let coeffs: Vec<f64> = (0..25).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let map = bsif_encode(img.plane(Channel::Red), ChannelFilters::new(5, 1, &coeffs).unwrap())
            .unwrap();
        assert!(map.codes().iter().all(|&c| c <= 1));
        assert!(map.codes().contains(&0) && map.codes().contains(&1));
    }

    #[test]
    fn small_sample_shapes() {
        let img = noise_image(2, 64);
        let sets = sample_patches(std::slice::from_ref(&img), 3, 90, 5).unwrap();
        for set in &sets {
            assert_eq!((set.count(), set.data().ncols()), (90, 9));
        }
        assert!(sample_patches(&[img], 3, 10, 5).is_err());
    }

    #[test]
    fn flat_images_cannot_be_sampled() {
        let flat = ColorImage::from_gray(Plane::filled(32, 32, 0.5));
        let err = sample_patches(&[flat], 3, 100, 1).unwrap_err();
        assert_eq!(err.category(), "degenerate");
    }

    #[test]
    fn rank_error_when_bits_fill_patch_dimension() {
        let img = noise_image(3, 32);
        let err = learn_filter_bank(&[img], 3, 9, 200, 1).unwrap_err();
        assert_eq!(err.category(), "rank");
    }

    #[test]
    fn small_bank_has_expected_shape_and_unit_filters() {
        let imgs: Vec<ColorImage> = (0..3).map(|s| noise_image(s, 32)).collect();
        let bank = learn_filter_bank(&imgs, 3, 2, 1000, 9).unwrap();
        assert_eq!((bank.side(), bank.bits(), bank.coeffs().len()), (3, 2, 54));
        for ch in Channel::ALL {
            let f = bank.channel(ch);
            for i in 0..f.count {
                let norm: f64 = f.filter(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                let peak = f.filter(i).iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                assert!(peak > 0.0);
            }
        }
    }

    #[test]
    fn learning_is_deterministic_and_seed_sensitive() {
        let imgs: Vec<ColorImage> = (0..2).map(|s| noise_image(10 + s, 32)).collect();
        let a = learn_filter_bank(&imgs, 3, 3, 900, 4).unwrap();
        let b = learn_filter_bank(&imgs, 3, 3, 900, 4).unwrap();
        assert_eq!(a, b);
        let c = learn_filter_bank(&imgs, 3, 3, 900, 5).unwrap();
        let max_diff = a
            .coeffs()
            .iter()
            .zip(c.coeffs())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-6);
    }

    #[test]
    fn planted_direction_is_recovered() {
        let side = 3;
        let dim = side * side;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        // zero-mean, unit-norm planted direction
        let mut v: Vec<f64> = (0..dim).map(|i| (i as f64 * 1.3).sin()).collect();
        let m = v.iter().sum::<f64>() / dim as f64;
        v.iter_mut().for_each(|x| *x -= m);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);

        let count = 2000;
        let mut rows = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let s: f64 = rng.random_range(-1.0..1.0) * 5.0;
            let mut p: Vec<f64> = v
                .iter()
                .map(|&vi| s * vi + 0.05 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            normalize_patch_in_place(&mut p).unwrap();
            rows.extend(p);
        }
        let set = PatchSet::from_rows(side, Channel::Red, DMatrix::from_row_slice(count, dim, &rows))
            .unwrap();
        let learned = learn_filters(&set, 1, 2).unwrap();
        let cos: f64 = learned.filters.row(0).iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(cos.abs() >= 0.99, "cosine {cos}");
    }
}
