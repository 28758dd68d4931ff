//! Circular local binary patterns, per color channel and over several radii.

use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};
use crate::imaging::{lerp, ColorImage, Plane};

/// Per-pixel integer codes produced by an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMap {
    width: usize,
    height: usize,
    code_bits: u32,
    codes: Vec<u32>,
}

impl CodeMap {
    pub const MAX_BITS: u32 = 16;

    pub fn new(width: usize, height: usize, code_bits: u32, codes: Vec<u32>) -> Result<Self> {
        if code_bits == 0 || code_bits > Self::MAX_BITS {
            return Err(KinError::InvalidArgument(format!(
                "code_bits must be in 1..={}, got {code_bits}",
                Self::MAX_BITS
            )));
        }
        if codes.len() != width * height {
            return Err(KinError::DimensionMismatch(format!(
                "{width}x{height} code map with {} codes",
                codes.len()
            )));
        }
        if let Some(bad) = codes.iter().find(|&&c| c >> code_bits != 0) {
            return Err(KinError::InvalidArgument(format!(
                "code {bad} exceeds {code_bits} bits"
            )));
        }
        Ok(CodeMap {
            width,
            height,
            code_bits,
            codes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn code_bits(&self) -> u32 {
        self.code_bits
    }

    pub fn bins(&self) -> usize {
        1 << self.code_bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.codes[y * self.width + x]
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub radius: usize,
    pub neighbors: usize,
}

impl LbpConfig {
    pub fn new(radius: usize) -> Self {
        LbpConfig {
            radius,
            neighbors: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(KinError::InvalidArgument("LBP radius must be >= 1".into()));
        }
        if !(4..=CodeMap::MAX_BITS as usize).contains(&self.neighbors) {
            return Err(KinError::InvalidArgument(format!(
                "LBP neighbor count must be in 4..={}, got {}",
                CodeMap::MAX_BITS,
                self.neighbors
            )));
        }
        Ok(())
    }
}

/// Relative slack on the neighbor-vs-center comparison. Irrational
/// interpolation weights can turn an exact tie into -1e-17; those must still
/// set the bit.
const TIE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Sampler {
    dx: isize,
    dy: isize,
    tx: f64,
    ty: f64,
}

/// Snaps offsets within 1e-9 of an integer so axis-aligned neighbors read
/// pixels directly instead of interpolating against a ~1e-16 weight.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn samplers(cfg: &LbpConfig) -> Vec<Sampler> {
    let r = cfg.radius as f64;
    (0..cfg.neighbors)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / cfg.neighbors as f64;
            // counter-clockwise on screen: +x is east, -y is north
            let ox = snap(r * theta.cos());
            let oy = snap(-r * theta.sin());
            let (fx, fy) = (ox.floor(), oy.floor());
            Sampler {
                dx: fx as isize,
                dy: fy as isize,
                tx: ox - fx,
                ty: oy - fy,
            }
        })
        .collect()
}

/// Encodes `plane` with P neighbors at radius R.
///
/// Bit `i` (weight `2^i`) is set when the bilinearly interpolated neighbor at
/// angle `2πi/P` is `>=` the center. The interpolation runs on differences
/// to the center, so adding a constant to the plane cannot flip a bit when the
/// sums are exact. The output drops a border of width R.
pub fn lbp_encode(plane: &Plane, cfg: LbpConfig) -> Result<CodeMap> {
    cfg.validate()?;
    let r = cfg.radius;
    let (w, h) = (plane.width(), plane.height());
    if w < 2 * r + 1 || h < 2 * r + 1 {
        return Err(KinError::TooSmall(format!(
            "{w}x{h} plane for LBP radius {r}"
        )));
    }
    let samplers = samplers(&cfg);
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut codes = Vec::with_capacity(ow * oh);
    for y in r..h - r {
        for x in r..w - r {
            let c = plane.get(x, y);
            let mut code = 0u32;
            for (bit, s) in samplers.iter().enumerate() {
                let x0 = (x as isize + s.dx) as usize;
                let y0 = (y as isize + s.dy) as usize;
                let d = |xx: usize, yy: usize| plane.get(xx, yy) - c;
                // corners with nonzero weight; the others may lie off the plane
                let xs = if s.tx == 0.0 { 1 } else { 2 };
                let ys = if s.ty == 0.0 { 1 } else { 2 };
                let mut corner = [[0.0; 2]; 2];
                let mut scale = 0.0f64;
                for (j, row) in corner.iter_mut().enumerate().take(ys) {
                    for (i, value) in row.iter_mut().enumerate().take(xs) {
                        *value = d(x0 + i, y0 + j);
                        scale = scale.max(value.abs());
                    }
                }
                let top = lerp(corner[0][0], corner[0][1], s.tx);
                let bottom = lerp(corner[1][0], corner[1][1], s.tx);
                let v = lerp(top, bottom, s.ty);
                if v >= -TIE_SLACK * scale {
                    code |= 1 << bit;
                }
            }
            codes.push(code);
        }
    }
    CodeMap::new(ow, oh, cfg.neighbors as u32, codes)
}

/// One map per (channel, radius), channel-major with radii ascending.
pub fn ms_lbp(img: &ColorImage, radii: &[usize], neighbors: usize) -> Result<Vec<CodeMap>> {
    let mut radii = radii.to_vec();
    radii.sort_unstable();
    radii.dedup();
    let mut maps = Vec::with_capacity(3 * radii.len());
    for plane in img.planes() {
        for &radius in &radii {
            maps.push(lbp_encode(plane, LbpConfig { radius, neighbors })?);
        }
    }
    Ok(maps)
}
