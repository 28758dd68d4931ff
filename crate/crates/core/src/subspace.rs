//! Tensor exponential discriminant subspaces learned from labeled pairs.
//!
//! For one mode the recipe is: kin-pair differences give the within scatter,
//! non-kin-pair differences the between scatter; both are exponentiated and
//! the generalized problem `exp_b w = λ exp_w w` keeps the leading
//! eigenvectors. [`txqda_fit`] alternates that recipe over the two modes of
//! the feature tensors, after a PCA pre-reduction of the (large) mode 1.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};
use crate::features::FeatureTensor;
use crate::linalg::{asymmetry, canonical_sign, max_abs, sorted_eigen, symmetrize};
use crate::scoring::Label;

/// Within (kin) and between (non-kin) scatters, plus their exponentials once computed.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    pub exp_within: Option<DMatrix<f64>>,
    pub exp_between: Option<DMatrix<f64>>,
}

impl ScatterPair {
    /// Fills both exponentials, clamping the spectra to `clip` first.
    pub fn exponentiate(&mut self, clip: SpectrumClip) -> Result<()> {
        self.exp_within = Some(clipped_exp_sym(&self.within, clip)?);
        self.exp_between = Some(clipped_exp_sym(&self.between, clip)?);
        Ok(())
    }
}

/// One labeled pair of equal-length feature vectors.
#[derive(Debug, Clone, Copy)]
pub struct VectorPair<'a> {
    pub parent: &'a [f64],
    pub child: &'a [f64],
    pub label: Label,
}

/// `S_w = Σ_kin (p - c)(p - c)ᵀ / N_kin`, `S_b` likewise over non-kin pairs.
pub fn compute_sild_scatters(pairs: &[VectorPair<'_>], dim: usize) -> Result<ScatterPair> {
    for (i, p) in pairs.iter().enumerate() {
        if p.parent.len() != dim || p.child.len() != dim {
            return Err(KinError::DimensionMismatch(format!(
                "pair {i} has lengths {} and {}, expected {dim}",
                p.parent.len(),
                p.child.len()
            )));
        }
    }
    let diffs = pairs.iter().map(|p| {
        let d = DVector::from_iterator(dim, p.parent.iter().zip(p.child).map(|(a, b)| a - b));
        (DMatrix::from_column_slice(dim, 1, d.as_slice()), p.label)
    });
    scatters_from_differences(diffs, dim)
}

/// Scatter pair from per-pair difference matrices `D` (dim × k): each pair
/// contributes `D Dᵀ`, normalized by its class count.
pub fn scatters_from_differences(
    diffs: impl IntoIterator<Item = (DMatrix<f64>, Label)>,
    dim: usize,
) -> Result<ScatterPair> {
    let mut within = DMatrix::zeros(dim, dim);
    let mut between = DMatrix::zeros(dim, dim);
    let (mut n_kin, mut n_non) = (0usize, 0usize);
    for (d, label) in diffs {
        if d.nrows() != dim {
            return Err(KinError::DimensionMismatch(format!(
                "difference with {} rows, expected {dim}",
                d.nrows()
            )));
        }
        let target = match label {
            Label::Kin => {
                n_kin += 1;
                &mut within
            }
            Label::NonKin => {
                n_non += 1;
                &mut between
            }
        };
        target.gemm(1.0, &d, &d.transpose(), 1.0);
    }
    if n_kin == 0 {
        return Err(KinError::SingleClass("no kin pairs for the within scatter".into()));
    }
    if n_non == 0 {
        return Err(KinError::SingleClass("no non-kin pairs for the between scatter".into()));
    }
    within /= n_kin as f64;
    between /= n_non as f64;
    symmetrize(&mut within);
    symmetrize(&mut between);
    Ok(ScatterPair {
        within,
        between,
        exp_within: None,
        exp_between: None,
    })
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(KinError::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            s.nrows(),
            s.ncols()
        )));
    }
    let tol = 1e-9 * max_abs(s).max(1.0);
    let asym = asymmetry(s);
    if asym > tol {
        return Err(KinError::NotSymmetric(asym));
    }
    Ok(())
}

/// `exp(S) = Q exp(Λ) Qᵀ` for symmetric `S`.
pub fn matrix_exp_sym(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    clipped_exp_sym(s, SpectrumClip::NONE)
}

/// Bounds applied to the eigenvalues of a scatter before exponentiation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumClip {
    pub min: f64,
    pub max: f64,
}

impl SpectrumClip {
    pub const NONE: SpectrumClip = SpectrumClip {
        min: f64::NEG_INFINITY,
        max: f64::INFINITY,
    };
    pub const DEFAULT: SpectrumClip = SpectrumClip { min: 0.0, max: 50.0 };
}

impl Default for SpectrumClip {
    fn default() -> Self {
        SpectrumClip::DEFAULT
    }
}

pub fn clipped_exp_sym(s: &DMatrix<f64>, clip: SpectrumClip) -> Result<DMatrix<f64>> {
    check_symmetric(s)?;
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let scaled_vectors = {
        let mut q = eig.eigenvectors.clone();
        for (j, mut col) in q.column_iter_mut().enumerate() {
            col *= eig.eigenvalues[j].clamp(clip.min, clip.max).exp();
        }
        q
    };
    let mut out = scaled_vectors * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Leading generalized eigenvectors of `(exp_b, exp_w)`.
#[derive(Debug, Clone)]
pub struct EdaSolution {
    /// d × m, columns `w` normalized so that `wᵀ exp_w w = 1`.
    pub projection: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Ridge added to `exp_w` when its Cholesky factorization failed (0 otherwise).
    pub ridge: f64,
}

pub fn solve_eda(sc: &ScatterPair, m: usize) -> Result<EdaSolution> {
    let (exp_b, exp_w) = match (&sc.exp_between, &sc.exp_within) {
        (Some(b), Some(w)) => (b, w),
        _ => {
            return Err(KinError::InvalidArgument(
                "scatter exponentials have not been computed".into(),
            ))
        }
    };
    let d = exp_w.nrows();
    if exp_b.nrows() != d || !exp_b.is_square() || !exp_w.is_square() {
        return Err(KinError::DimensionMismatch("scatter exponentials differ in shape".into()));
    }
    if m == 0 || m > d {
        return Err(KinError::InvalidArgument(format!(
            "{m} eigenvectors requested from a {d}-dimensional problem"
        )));
    }

    let (chol, ridge) = match Cholesky::new(exp_w.clone()) {
        Some(c) => (c, 0.0),
        None => {
            let ridge = 1e-6 * exp_w.trace() / d as f64;
            let regularized = exp_w + DMatrix::identity(d, d) * ridge;
            let c = Cholesky::new(regularized).ok_or_else(|| {
                KinError::Degenerate("within exponential is singular after regularization".into())
            })?;
            (c, ridge)
        }
    };
    let l = chol.l();
    // C = L⁻¹ exp_b L⁻ᵀ
    let a = l
        .solve_lower_triangular(exp_b)
        .ok_or_else(|| KinError::Degenerate("singular Cholesky factor".into()))?;
    let mut c = l
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| KinError::Degenerate("singular Cholesky factor".into()))?;
    symmetrize(&mut c);
    let (values, vectors) = sorted_eigen(c);
    let y = vectors.columns(0, m).into_owned();
    let mut w = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| KinError::Degenerate("singular Cholesky factor".into()))?;
    for mut col in w.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        canonical_sign(&mut v);
        col.copy_from_slice(&v);
    }
    Ok(EdaSolution {
        projection: w,
        eigenvalues: values.iter().take(m).copied().collect(),
        ridge,
    })
}

/// `max |exp_b W - exp_w W diag(λ)|` for a solution of `sc`, with the ridge
/// the solver applied included in `exp_w`.
pub fn eda_residual(sc: &ScatterPair, sol: &EdaSolution) -> f64 {
    let (Some(exp_b), Some(exp_w)) = (&sc.exp_between, &sc.exp_within) else {
        return f64::NAN;
    };
    let d = exp_w.nrows();
    let exp_w = exp_w + DMatrix::identity(d, d) * sol.ridge;
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&sol.eigenvalues));
    let r = exp_b * &sol.projection - exp_w * &sol.projection * lambda;
    max_abs(&r)
}

/// Mean-centered principal projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: DVector<f64>,
    /// d × d', orthonormal columns, leading components first.
    pub basis: DMatrix<f64>,
    /// Sample variance along each retained component.
    pub variances: Vec<f64>,
}

impl PcaProjection {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Projects every column of `x` (d × k).
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        self.basis.transpose() * &centered
    }
}

/// Above this size the leading components come from subspace iteration
/// instead of a full eigen-decomposition.
const EXACT_PCA_LIMIT: usize = 512;
const SUBSPACE_OVERSAMPLE: usize = 12;
const SUBSPACE_ITERATIONS: usize = 12;

/// PCA over the columns of `samples` (d × N) keeping `target` components.
pub fn pca_reduce(samples: &DMatrix<f64>, target: usize, seed: u64) -> Result<PcaProjection> {
    let (d, n) = samples.shape();
    if target == 0 || n < 2 || target > (n - 1).min(d) {
        return Err(KinError::RankDeficient(format!(
            "{target} components from {n} samples of dimension {d}"
        )));
    }
    let mean = DVector::from_iterator(d, samples.row_iter().map(|r| r.mean()));
    let mut centered = samples.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let scale = 1.0 / n as f64;

    let (values, basis) = if d.min(n) <= EXACT_PCA_LIMIT {
        if d <= n {
            let cov = centered.clone() * centered.transpose() * scale;
            let (vals, vecs) = sorted_eigen(cov);
            (vals.as_slice()[..target].to_vec(), vecs.columns(0, target).into_owned())
        } else {
            // Gram route: eigenvectors u of XᵀX map to Xu / sqrt(λ N)
            let gram = centered.transpose() * &centered * scale;
            let (vals, vecs) = sorted_eigen(gram);
            check_rank(vals.as_slice(), target)?;
            let mut basis = &centered * vecs.columns(0, target);
            for (j, mut col) in basis.column_iter_mut().enumerate() {
                col /= (vals[j] * n as f64).sqrt();
            }
            (vals.as_slice()[..target].to_vec(), basis)
        }
    } else {
        subspace_iteration(&centered, target, seed)?
    };
    check_rank(&values, target)?;

    let mut basis = basis;
    for mut col in basis.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        canonical_sign(&mut v);
        col.copy_from_slice(&v);
    }
    Ok(PcaProjection {
        mean,
        basis,
        variances: values,
    })
}

fn check_rank(values: &[f64], target: usize) -> Result<()> {
    let floor = values[0].max(0.0) * 1e-12;
    if !(values[target - 1] > floor) {
        return Err(KinError::RankDeficient(format!(
            "component {target} has variance {:.3e}; the data rank is lower",
            values[target - 1]
        )));
    }
    Ok(())
}

/// Block power iteration on `X Xᵀ / N` with Rayleigh-Ritz extraction.
fn subspace_iteration(
    centered: &DMatrix<f64>,
    target: usize,
    seed: u64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (d, n) = centered.shape();
    let block = (target + SUBSPACE_OVERSAMPLE).min(d).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    // explicit transpose: the plain product takes the blocked gemm path
    let centered_t = centered.transpose();
    let mut q = (centered * omega).qr().q();
    for _ in 0..SUBSPACE_ITERATIONS {
        let y = centered * (&centered_t * &q);
        q = y.qr().q();
    }
    let projected = &centered_t * &q;
    let small = projected.transpose() * &projected / n as f64;
    let (vals, vecs) = sorted_eigen(small);
    let basis = q * vecs.columns(0, target);
    Ok((vals.as_slice()[..target].to_vec(), basis))
}

/// One labeled pair of feature tensors.
#[derive(Debug, Clone, Copy)]
pub struct TensorPair<'a> {
    pub parent: &'a FeatureTensor,
    pub child: &'a FeatureTensor,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxqdaOptions {
    /// Output dimension per mode (mode 1, mode 2).
    pub dims: (usize, usize),
    pub sweeps: usize,
    /// Cap on the mode-1 PCA dimension; `None` disables the pre-reduction.
    pub pca_cap: Option<usize>,
    pub clip: SpectrumClip,
    pub seed: u64,
}

impl Default for TxqdaOptions {
    fn default() -> Self {
        TxqdaOptions {
            dims: (40, 8),
            sweeps: 2,
            pca_cap: Some(200),
            clip: SpectrumClip::DEFAULT,
            seed: 0,
        }
    }
}

/// Diagnostics for the last update of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    pub residual: f64,
    /// Residual divided by the largest entry of the two exponentials.
    pub relative_residual: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeProjection {
    /// d_k × m_k.
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub modes: Vec<ModeProjection>,
    pub pca: Option<PcaProjection>,
    pub sweeps: usize,
    pub seed: u64,
}

impl SubspaceModel {
    pub fn output_dim(&self) -> usize {
        self.modes.iter().map(|m| m.matrix.ncols()).product()
    }

    /// Expected (mode1, mode2) dimensions of input tensors.
    pub fn input_dims(&self) -> (usize, usize) {
        let d1 = match &self.pca {
            Some(p) => p.input_dim(),
            None => self.modes[0].matrix.nrows(),
        };
        (d1, self.modes[1].matrix.nrows())
    }
}

/// Result of a fit together with per-mode diagnostics of the final sweep.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: SubspaceModel,
    pub mode_fits: Vec<Option<ModeFit>>,
}

pub fn txqda_fit(pairs: &[TensorPair<'_>], opts: TxqdaOptions) -> Result<SubspaceModel> {
    txqda_fit_with_report(pairs, opts).map(|r| r.model)
}

pub fn txqda_fit_with_report(pairs: &[TensorPair<'_>], opts: TxqdaOptions) -> Result<FitReport> {
    let first = pairs
        .first()
        .ok_or_else(|| KinError::InvalidArgument("no training pairs".into()))?;
    let (d1, d2) = (first.parent.mode1_dim(), first.parent.mode2_dim());
    for (i, p) in pairs.iter().enumerate() {
        for t in [p.parent, p.child] {
            if (t.mode1_dim(), t.mode2_dim()) != (d1, d2) {
                return Err(KinError::DimensionMismatch(format!(
                    "pair {i} has a {}x{} tensor, expected {d1}x{d2}",
                    t.mode1_dim(),
                    t.mode2_dim()
                )));
            }
        }
    }
    let n_kin = pairs.iter().filter(|p| p.label.is_kin()).count();
    if n_kin == 0 || n_kin == pairs.len() {
        return Err(KinError::SingleClass("TXQDA needs kin and non-kin pairs".into()));
    }

    let pca = match opts.pca_cap {
        Some(cap) => {
            let target = d1.min(pairs.len().saturating_sub(1)).min(cap);
            let mut samples = DMatrix::zeros(d1, 2 * pairs.len() * d2);
            for (i, p) in pairs.iter().enumerate() {
                for (k, t) in [p.parent, p.child].into_iter().enumerate() {
                    samples
                        .columns_mut((2 * i + k) * d2, d2)
                        .copy_from(t.matrix());
                }
            }
            Some(pca_reduce(&samples, target, opts.seed)?)
        }
        None => None,
    };
    let reduce = |t: &FeatureTensor| match &pca {
        Some(p) => p.apply(t.matrix()),
        None => t.matrix().clone(),
    };
    let reduced: Vec<(DMatrix<f64>, DMatrix<f64>, Label)> = pairs
        .iter()
        .map(|p| (reduce(p.parent), reduce(p.child), p.label))
        .collect();
    let dims = [reduced[0].0.nrows(), d2];
    let targets = [opts.dims.0, opts.dims.1];
    for k in 0..2 {
        if targets[k] == 0 || targets[k] > dims[k] {
            return Err(KinError::InvalidArgument(format!(
                "mode {} output dimension {} must be in 1..={}",
                k + 1,
                targets[k],
                dims[k]
            )));
        }
    }

    let mut projections: [DMatrix<f64>; 2] = [
        DMatrix::identity(dims[0], dims[0]),
        DMatrix::identity(dims[1], dims[1]),
    ];
    let mut eigenvalues: [Vec<f64>; 2] = [vec![1.0; targets[0]], vec![1.0; targets[1]]];
    let mut mode_fits: Vec<Option<ModeFit>> = vec![None, None];

    for _ in 0..opts.sweeps {
        for k in 0..2 {
            if dims[k] == 1 {
                // nothing to discriminate along a singleton mode
                continue;
            }
            let diffs = reduced.iter().map(|(p, c, label)| {
                let d = p - c;
                let unfolded = if k == 0 {
                    d * &projections[1]
                } else {
                    (projections[0].transpose() * d).transpose()
                };
                (unfolded, *label)
            });
            let mut scatter = scatters_from_differences(diffs, dims[k])?;
            scatter.exponentiate(opts.clip)?;
            let sol = solve_eda(&scatter, targets[k])?;
            let residual = eda_residual(&scatter, &sol);
            let magnitude = max_abs(scatter.exp_between.as_ref().unwrap())
                .max(max_abs(scatter.exp_within.as_ref().unwrap()));
            mode_fits[k] = Some(ModeFit {
                residual,
                relative_residual: residual / magnitude,
                ridge: sol.ridge,
            });
            projections[k] = sol.projection;
            eigenvalues[k] = sol.eigenvalues;
        }
    }

    let modes = projections
        .into_iter()
        .zip(eigenvalues)
        .zip(targets)
        .map(|((matrix, eigenvalues), m)| ModeProjection {
            matrix: matrix.columns(0, m).into_owned(),
            eigenvalues,
        })
        .collect();
    Ok(FitReport {
        model: SubspaceModel {
            modes,
            pca,
            sweeps: opts.sweeps,
            seed: opts.seed,
        },
        mode_fits,
    })
}

/// `W₁ᵀ · PCA(T) · W₂`, flattened column-major.
pub fn project(model: &SubspaceModel, t: &FeatureTensor) -> Result<Vec<f64>> {
    let (d1, d2) = model.input_dims();
    if (t.mode1_dim(), t.mode2_dim()) != (d1, d2) {
        return Err(KinError::DimensionMismatch(format!(
            "{}x{} tensor for a model expecting {d1}x{d2}",
            t.mode1_dim(),
            t.mode2_dim()
        )));
    }
    let reduced = match &model.pca {
        Some(p) => p.apply(t.matrix()),
        None => t.matrix().clone(),
    };
    let out = model.modes[0].matrix.transpose() * &reduced * &model.modes[1].matrix;
    Ok(out.as_slice().to_vec())
}
