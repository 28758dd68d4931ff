//! Symmetric fixed-point ICA with the cube nonlinearity on whitened data.

use nalgebra::{DMatrix, DMatrixView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KinError, Result};
use crate::linalg::symmetric_decorrelation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IcaOptions {
    fn default() -> Self {
        IcaOptions {
            tolerance: 1e-5,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcaOutcome {
    /// n×n, rows orthonormal.
    pub unmixing: DMatrix<f64>,
    pub iterations: usize,
    pub last_change: f64,
}

/// `whitened` is n×N (one column per sample).
pub fn fixed_point_ica(whitened: &DMatrix<f64>, seed: u64, opts: IcaOptions) -> Result<IcaOutcome> {
    let n = whitened.nrows();
    let samples = whitened.ncols() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init)?;
    let whitened_t = DMatrixView::from_slice_with_strides(whitened.as_slice(), whitened.ncols(), n, n, 1);

    // Stabilization: the plain fixed-point step (mu = 1) is used until the
    // iteration oscillates between two points or half the budget is spent;
    // from then on a damped Newton step with step size mu is taken.
    let mut mu = 1.0;
    let mut long_run = false;
    let mut previous: Option<DMatrix<f64>> = None;
    let mut last_change = f64::INFINITY;
    for iteration in 1..=opts.max_iterations {
        let y = &w * whitened;
        let g = y.map(|v| v * v * v);
        let next = if mu == 1.0 {
            let mean_dg: Vec<f64> = y
                .row_iter()
                .map(|row| row.iter().map(|v| 3.0 * v * v).sum::<f64>() / samples)
                .collect();
            let mut next = (&g * whitened_t) / samples;
            for (i, dg) in mean_dg.iter().enumerate() {
                let scaled = w.row(i) * *dg;
                let mut row = next.row_mut(i);
                row -= scaled;
            }
            next
        } else {
            let gy = (&g * y.transpose()) / samples;
            let mut step = gy;
            for i in 0..n {
                let beta = step[(i, i)];
                let second = y.row(i).iter().map(|v| v * v).sum::<f64>() / samples;
                step[(i, i)] -= beta;
                let scale = 1.0 / (beta - 3.0 * second);
                let mut row = step.row_mut(i);
                row *= scale;
            }
            &w + (step * &w) * mu
        };
        let next = symmetric_decorrelation(&next)?;

        let change_from = |other: &DMatrix<f64>| {
            (0..n)
                .map(|i| (next.row(i).dot(&other.row(i)).abs() - 1.0).abs())
                .fold(0.0, f64::max)
        };
        last_change = change_from(&w);
        if last_change < opts.tolerance {
            return Ok(IcaOutcome {
                unmixing: next,
                iterations: iteration,
                last_change,
            });
        }
        if previous.as_ref().is_some_and(|p| change_from(p) < opts.tolerance) {
            // two-cycle
            mu *= 0.5;
        } else if !long_run && iteration > opts.max_iterations / 2 {
            long_run = true;
            mu *= 0.5;
        }
        previous = Some(std::mem::replace(&mut w, next));
    }
    Err(KinError::NoConvergence {
        iterations: opts.max_iterations,
        last_change,
    })
}
