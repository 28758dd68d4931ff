//! Block histograms of code maps and their arrangement into feature tensors.
//!
//! A code map is cut into a grid of blocks (4×4 by default); pixels left over
//! by the integer division go to the last block row and column. Each block
//! contributes one L2-normalized histogram and the block segments are laid out
//! row-major. A [`FeatureTensor`] stacks the vectors of every (channel, scale)
//! map of an image as columns: mode 1 is the spatial-histogram axis, mode 2
//! the channel×scale axis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};
use crate::lbp::CodeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub const DEFAULT: Grid = Grid { rows: 4, cols: 4 };

    pub fn blocks(&self) -> usize {
        self.rows * self.cols
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub blocks: usize,
    pub bins: usize,
}

impl FeatureVector {
    pub fn segment(&self, block: usize) -> &[f64] {
        &self.values[block * self.bins..(block + 1) * self.bins]
    }
}

/// Half-open pixel ranges of the blocks along one axis.
fn block_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let step = len / parts;
    (0..parts)
        .map(|i| {
            let end = if i + 1 == parts { len } else { (i + 1) * step };
            (i * step, end)
        })
        .collect()
}

/// Raw per-block code counts, blocks row-major, `bins` entries each.
pub fn block_counts(map: &CodeMap, grid: Grid, bins: usize) -> Result<Vec<u64>> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(KinError::InvalidArgument("empty histogram grid".into()));
    }
    if map.width() < grid.cols || map.height() < grid.rows {
        return Err(KinError::TooSmall(format!(
            "{}x{} code map for a {}x{} grid",
            map.width(),
            map.height(),
            grid.rows,
            grid.cols
        )));
    }
    if bins < map.bins() {
        return Err(KinError::InvalidArgument(format!(
            "{bins} bins cannot hold {}-bit codes",
            map.code_bits()
        )));
    }
    let xs = block_bounds(map.width(), grid.cols);
    let ys = block_bounds(map.height(), grid.rows);
    let mut counts = vec![0u64; grid.blocks() * bins];
    for (by, &(y0, y1)) in ys.iter().enumerate() {
        for (bx, &(x0, x1)) in xs.iter().enumerate() {
            let hist = &mut counts[(by * grid.cols + bx) * bins..][..bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[map.get(x, y) as usize] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Concatenated per-block histograms, each block segment scaled to unit L2 norm.
pub fn block_histograms(map: &CodeMap, grid: Grid, bins: usize) -> Result<FeatureVector> {
    let counts = block_counts(map, grid, bins)?;
    let mut values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    for segment in values.chunks_mut(bins) {
        // every block holds at least one pixel, so the norm is positive
        let norm = segment.iter().map(|v| v * v).sum::<f64>().sqrt();
        segment.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(FeatureVector {
        values,
        blocks: grid.blocks(),
        bins,
    })
}

/// Per-image features: one column per (channel, scale) code map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: DMatrix<f64>,
}

impl FeatureTensor {
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(KinError::InvalidArgument("empty feature tensor".into()));
        }
        Ok(FeatureTensor { data })
    }

    pub fn mode1_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn mode2_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Column-major concatenation (mode-1 index varies fastest).
    pub fn flatten(&self) -> Vec<f64> {
        self.data.as_slice().to_vec()
    }

    pub fn unflatten(values: &[f64], mode1_dim: usize, mode2_dim: usize) -> Result<Self> {
        if values.len() != mode1_dim * mode2_dim {
            return Err(KinError::DimensionMismatch(format!(
                "{} values for a {mode1_dim}x{mode2_dim} tensor",
                values.len()
            )));
        }
        FeatureTensor::from_matrix(DMatrix::from_column_slice(mode1_dim, mode2_dim, values))
    }
}

/// Column `j` is `block_histograms(maps[j])`. All maps must share one code width.
pub fn assemble_tensor(maps: &[CodeMap], grid: Grid) -> Result<FeatureTensor> {
    let first = maps
        .first()
        .ok_or_else(|| KinError::InvalidArgument("no code maps to assemble".into()))?;
    if let Some(odd) = maps.iter().find(|m| m.code_bits() != first.code_bits()) {
        return Err(KinError::DimensionMismatch(format!(
            "code maps mix {}-bit and {}-bit codes",
            first.code_bits(),
            odd.code_bits()
        )));
    }
    let bins = first.bins();
    let rows = grid.blocks() * bins;
    let mut data = DMatrix::zeros(rows, maps.len());
    for (j, map) in maps.iter().enumerate() {
        let fv = block_histograms(map, grid, bins)?;
        data.column_mut(j).copy_from_slice(&fv.values);
    }
    FeatureTensor::from_matrix(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, bits: u32, f: impl Fn(usize, usize) -> u32) -> CodeMap {
        let codes = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        CodeMap::new(w, h, bits, codes).unwrap()
    }

    #[test]
    fn constant_map_is_one_hot_per_block() {
        let fv = block_histograms(&map(64, 64, 8, |_, _| 77), Grid::DEFAULT, 256).unwrap();
        assert_eq!(fv.values.len(), 16 * 256);
        for b in 0..16 {
            let seg = fv.segment(b);
            assert_eq!(seg[77], 1.0);
            assert_eq!(seg.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn exact_division_gives_equal_blocks() {
        let counts = block_counts(&map(16, 16, 4, |x, y| ((x + y) % 16) as u32), Grid::DEFAULT, 16).unwrap();
        for block in counts.chunks(16) {
            assert_eq!(block.iter().sum::<u64>(), 16);
        }
    }

    #[test]
    fn remainder_goes_to_last_blocks() {
        let counts = block_counts(&map(62, 62, 1, |_, _| 0), Grid::DEFAULT, 2).unwrap();
        let sizes: Vec<u64> = counts.chunks(2).map(|c| c[0]).collect();
        assert_eq!(sizes[0], 15 * 15);
        assert_eq!(sizes[3], 15 * 17);
        assert_eq!(sizes[15], 17 * 17);
    }

    #[test]
    fn assemble_shapes_and_errors() {
        let maps: Vec<CodeMap> = (0..15).map(|k| map(64, 64, 8, move |x, y| ((x * y + k) % 256) as u32)).collect();
        let t = assemble_tensor(&maps, Grid::DEFAULT).unwrap();
        assert_eq!((t.mode1_dim(), t.mode2_dim()), (4096, 15));
        assert_eq!(t.flatten().len(), 61440);

        let single = assemble_tensor(&maps[..1], Grid::DEFAULT).unwrap();
        assert_eq!(single.flatten(), block_histograms(&maps[0], Grid::DEFAULT, 256).unwrap().values);

        let mixed = vec![maps[0].clone(), map(64, 64, 4, |_, _| 1)];
        assert_eq!(assemble_tensor(&mixed, Grid::DEFAULT).unwrap_err().category(), "dimension");
    }

    #[test]
    fn map_smaller_than_grid_is_rejected() {
        assert!(block_histograms(&map(3, 8, 2, |_, _| 0), Grid::DEFAULT, 4).is_err());
    }

    #[test]
    fn column_order_follows_input_order() {
        let maps: Vec<CodeMap> = (0..4).map(|k| map(16, 16, 3, move |x, _| ((x as u32) + k) % 8)).collect();
        let t = assemble_tensor(&maps, Grid::DEFAULT).unwrap();
        let perm = [2usize, 0, 3, 1];
        let shuffled: Vec<CodeMap> = perm.iter().map(|&i| maps[i].clone()).collect();
        let s = assemble_tensor(&shuffled, Grid::DEFAULT).unwrap();
        let mut restored = DMatrix::zeros(t.mode1_dim(), 4);
        for (pos, &orig) in perm.iter().enumerate() {
            restored.set_column(orig, &s.matrix().column(pos));
        }
        assert_eq!(&restored, t.matrix());
    }

    proptest! {
        #[test]
        fn permuting_pixels_inside_a_block_keeps_histograms(
            codes in prop::collection::vec(0u32..16, 16 * 16),
            swaps in prop::collection::vec((0usize..4, 0usize..4, 0usize..4, 0usize..4), 1..20),
        ) {
            let original = CodeMap::new(16, 16, 4, codes.clone()).unwrap();
            let mut permuted = codes;
            // block (1, 2) spans x in 8..12, y in 4..8
            for (ax, ay, bx, by) in swaps {
                permuted.swap((4 + ay) * 16 + 8 + ax, (4 + by) * 16 + 8 + bx);
            }
            let permuted = CodeMap::new(16, 16, 4, permuted).unwrap();
            prop_assert_eq!(
                block_counts(&original, Grid::DEFAULT, 16).unwrap(),
                block_counts(&permuted, Grid::DEFAULT, 16).unwrap()
            );
        }

        #[test]
        fn flatten_round_trips(values in prop::collection::vec(0.0f64..1.0, 12)) {
            let t = FeatureTensor::unflatten(&values, 4, 3).unwrap();
            prop_assert_eq!(t.flatten(), values);
        }
    }
}
