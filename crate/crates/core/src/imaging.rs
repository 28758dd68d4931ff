//! Image loading and canonicalization.
//!
//! Every encoder consumes a [`ColorImage`] of [`CANONICAL_SIDE`] square pixels
//! whose samples have been min-max rescaled to `[0, 1]` over all three planes.

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};

/// Side length of the canonical face crop.
pub const CANONICAL_SIDE: usize = 64;

/// A single real-valued raster stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(KinError::TooSmall(format!("plane {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(KinError::DimensionMismatch(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane::from_fn(width, height, |_, _| value)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies the `side`×`side` block with top-left corner `(x, y)` row-major into `out`.
    pub(crate) fn copy_block(&self, x: usize, y: usize, side: usize, out: &mut [f64]) {
        for dy in 0..side {
            let row = (y + dy) * self.width + x;
            out[dy * side..(dy + 1) * side].copy_from_slice(&self.data[row..row + side]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Three equally sized planes: red, green, blue.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    planes: [Plane; 3],
}

impl ColorImage {
    pub fn from_planes(red: Plane, green: Plane, blue: Plane) -> Result<Self> {
        let dims = (red.width, red.height);
        if (green.width, green.height) != dims || (blue.width, blue.height) != dims {
            return Err(KinError::DimensionMismatch(
                "color planes differ in size".to_string(),
            ));
        }
        Ok(ColorImage {
            planes: [red, green, blue],
        })
    }

    /// Replicates one plane into all three channels.
    pub fn from_gray(plane: Plane) -> Self {
        ColorImage {
            planes: [plane.clone(), plane.clone(), plane],
        }
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn plane(&self, channel: Channel) -> &Plane {
        &self.planes[channel.index()]
    }

    pub fn planes(&self) -> &[Plane; 3] {
        &self.planes
    }

    /// Quantizes to 8-bit RGB, clamping to `[0, 255]` after scaling by `scale`.
    pub fn to_rgb8(&self, scale: f64) -> image::RgbImage {
        let (w, h) = (self.width(), self.height());
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                (self.planes[c].get(x as usize, y as usize) * scale)
                    .round()
                    .clamp(0.0, 255.0) as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Square region of a source image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl CropWindow {
    pub fn new(x: usize, y: usize, side: usize) -> Self {
        CropWindow { x, y, side }
    }

    /// Largest centered square of a `width`×`height` image.
    pub fn centered_square(width: usize, height: usize) -> Self {
        let side = width.min(height);
        CropWindow {
            x: (width - side) / 2,
            y: (height - side) / 2,
            side,
        }
    }

    pub fn check(&self, width: usize, height: usize) -> Result<()> {
        let fits = self.side >= 1
            && self.x.checked_add(self.side).is_some_and(|r| r <= width)
            && self.y.checked_add(self.side).is_some_and(|b| b <= height);
        if fits {
            Ok(())
        } else {
            Err(KinError::WindowOutOfBounds {
                x: self.x,
                y: self.y,
                side: self.side,
                width,
                height,
            })
        }
    }
}

/// Decodes a PNG or JPEG file. Sample values stay in the file's 8-bit range.
pub fn load_image(path: &Path) -> Result<ColorImage> {
    let bytes = std::fs::read(path).map_err(|e| KinError::io(path, e))?;
    decode_image(&bytes).map_err(|reason| KinError::Decode {
        path: path.to_path_buf(),
        reason,
    })
}

pub(crate) fn decode_image(bytes: &[u8]) -> std::result::Result<ColorImage, String> {
    let decoded = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => {
            let gray = decoded.to_luma8();
            let plane = Plane::from_fn(w, h, |x, y| f64::from(gray.get_pixel(x as u32, y as u32)[0]));
            Ok(ColorImage::from_gray(plane))
        }
        other => {
            let rgb = other.to_rgb8();
            let mk = |c: usize| Plane::from_fn(w, h, |x, y| f64::from(rgb.get_pixel(x as u32, y as u32)[c]));
            ColorImage::from_planes(mk(0), mk(1), mk(2)).map_err(|e| e.to_string())
        }
    }
}

/// Crops `window`, bilinearly resamples it to 64×64 and rescales intensities
/// to `[0, 1]` (joint min-max over the three planes; a flat crop maps to zeros).
pub fn preprocess(img: &ColorImage, window: CropWindow) -> Result<ColorImage> {
    window.check(img.width(), img.height())?;
    let resampled: Vec<Plane> = img
        .planes
        .iter()
        .map(|p| resample(p, window, CANONICAL_SIDE))
        .collect();

    let (lo, hi) = resampled
        .iter()
        .flat_map(|p| p.data.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let mut planes = resampled.into_iter().map(|mut p| {
        for v in &mut p.data {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
        p
    });
    let (r, g, b) = (
        planes.next().unwrap(),
        planes.next().unwrap(),
        planes.next().unwrap(),
    );
    ColorImage::from_planes(r, g, b)
}

/// Pixel-center aligned bilinear resampling of a square window.
/// For `window.side == out_side` the mapping hits integer positions and copies exactly.
fn resample(plane: &Plane, window: CropWindow, out_side: usize) -> Plane {
    let scale = window.side as f64 / out_side as f64;
    let last = (window.side - 1) as f64;
    let coords: Vec<(usize, usize, f64)> = (0..out_side)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(window.side - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect();

    Plane::from_fn(out_side, out_side, |ox, oy| {
        let (x0, x1, fx) = coords[ox];
        let (y0, y1, fy) = coords[oy];
        let at = |x: usize, y: usize| plane.get(window.x + x, window.y + y);
        let top = lerp(at(x0, y0), at(x1, y0), fx);
        let bottom = lerp(at(x0, y1), at(x1, y1), fx);
        lerp(top, bottom, fy)
    })
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

/// Zero-mean, unit population-standard-deviation copy of `patch`.
pub fn normalize_patch(patch: &[f64]) -> Result<Vec<f64>> {
    let mut out = patch.to_vec();
    normalize_patch_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn normalize_patch_in_place(patch: &mut [f64]) -> Result<()> {
    if patch.len() < 2 {
        return Err(KinError::Degenerate(format!(
            "patch of {} samples",
            patch.len()
        )));
    }
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(KinError::Degenerate(
            "patch has zero standard deviation".to_string(),
        ));
    }
    for v in patch.iter_mut() {
        *v = (*v - mean) / std;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_image(side: usize) -> ColorImage {
        let mk = |k: f64| Plane::from_fn(side, side, move |x, y| k * (x + 2 * y) as f64);
        ColorImage::from_planes(mk(1.0), mk(0.5), mk(0.25)).unwrap()
    }

    #[test]
    fn normalize_two_values() {
        let out = normalize_patch(&[0.0, 2.0]).unwrap();
        assert_eq!(out, vec![-1.0, 1.0]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = normalize_patch(&[0.3, 1.7, -2.0, 4.5, 0.0]).unwrap();
        let twice = normalize_patch(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_constant() {
        let err = normalize_patch(&[3.0; 9]).unwrap_err();
        assert_eq!(err.category(), "degenerate");
    }

    #[test]
    fn preprocess_center_crop_of_128() {
        let img = ramp_image(128);
        let out = preprocess(&img, CropWindow::new(32, 32, 64)).unwrap();
        assert_eq!((out.width(), out.height()), (64, 64));
        let all: Vec<f64> = out.planes().iter().flat_map(|p| p.data().to_vec()).collect();
        let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn preprocess_full_frame_64_is_rescaled_copy() {
        let img = ramp_image(64);
        let out = preprocess(&img, CropWindow::new(0, 0, 64)).unwrap();
        // red plane max is 3 * 63 = 189, blue plane min is 0
        let hi = 189.0;
        for (src, dst) in img.planes().iter().zip(out.planes()) {
            for (a, b) in src.data().iter().zip(dst.data()) {
                assert!((a / hi - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn preprocess_rejects_window_past_border() {
        let img = ramp_image(64);
        let err = preprocess(&img, CropWindow::new(10, 0, 64)).unwrap_err();
        assert!(matches!(err, KinError::WindowOutOfBounds { .. }));
    }

    #[test]
    fn flat_image_maps_to_zeros() {
        let img = ColorImage::from_gray(Plane::filled(64, 64, 7.0));
        let out = preprocess(&img, CropWindow::new(0, 0, 64)).unwrap();
        assert!(out.planes().iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn decode_gray_png_replicates() {
        let gray = image::GrayImage::from_fn(5, 4, |x, y| image::Luma([(x * 10 + y) as u8]));
        let mut bytes = Vec::new();
        gray.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (5, 4));
        assert_eq!(img.plane(Channel::Red), img.plane(Channel::Blue));
        assert_eq!(img.plane(Channel::Green).get(3, 2), 32.0);
    }

    #[test]
    fn decode_truncated_png_fails() {
        let rgb = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([x as u8, y as u8, 0]));
        let mut bytes = Vec::new();
        rgb.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(decode_image(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn normalized_patch_has_zero_mean_unit_std(
            values in prop::collection::vec(-1e3f64..1e3, 2..200)
        ) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let out = normalize_patch(&values).unwrap();
            let n = out.len() as f64;
            let mean = out.iter().sum::<f64>() / n;
            let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!((std - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn preprocess_full_frame_is_idempotent(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mk = || Plane::from_fn(64, 64, |_, _| rng.random_range(0.0..255.0));
            let img = ColorImage::from_planes(mk(), mk(), mk()).unwrap();
            let full = CropWindow::new(0, 0, 64);
            let once = preprocess(&img, full).unwrap();
            let twice = preprocess(&once, full).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
