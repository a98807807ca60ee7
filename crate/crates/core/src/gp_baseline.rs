//! Closed-form transport between Gaussian measures fitted to curves on a
//! common grid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FotError, Result};
use crate::funcdata::{uniform_grid, Domain, FunctionalDataset, FunctionalSample};

const SYMMETRY_TOLERANCE: f64 = 1e-10;
const EIGEN_CLAMP: f64 = 1e-10;
/// Relative eigenvalue floor used when a strictly positive definite matrix is required.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m);
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, c)] * f(values[c]));
    symmetrize(&(scaled * vectors.transpose()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a PSD matrix; negative rounding noise is clamped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |v| v.max(0.0).sqrt())
}

/// Inverse square root with eigenvalues floored at `floor · trace`.
pub fn psd_inv_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let trace = m.trace();
    if !(trace > 0.0) {
        return Err(FotError::Validity("matrix is singular (zero trace) after regularization".into()));
    }
    let min = floor * trace;
    Ok(spectral_map(m, |v| 1.0 / v.max(min).sqrt()))
}

/// Clamps eigenvalues below the floor up to it, making the matrix PD.
pub fn regularize(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let min = floor * m.trace();
    spectral_map(m, |v| v.max(min))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Design points the coordinates refer to, when fitted from curves.
    pub grid: Option<Vec<f64>>,
}

impl GaussianMeasure {
    /// Validates symmetry and positive semidefiniteness; small negative
    /// eigenvalues are clamped to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(FotError::Dimension(format!("mean has length {d} but covariance is {:?}", cov.shape())));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(FotError::NonFinite("Gaussian parameters".into()));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > SYMMETRY_TOLERANCE * scale {
            return Err(FotError::Validity("covariance is not symmetric".into()));
        }
        let cov = symmetrize(&cov);
        let (values, _) = sorted_eigen(&cov);
        let trace = cov.trace().abs();
        if d > 0 && values[d - 1] < -EIGEN_CLAMP * trace.max(f64::MIN_POSITIVE) {
            return Err(FotError::Validity(format!("covariance has negative eigenvalue {:e}", values[d - 1])));
        }
        let cov = if d > 0 && values[d - 1] < 0.0 { spectral_map(&cov, |v| v.max(0.0)) } else { cov };
        Ok(Self { mean, cov, grid: None })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Result<Self> {
        if grid.len() != self.dim() {
            return Err(FotError::Dimension(format!("grid has {} points for a {}-dimensional measure", grid.len(), self.dim())));
        }
        self.grid = Some(grid);
        Ok(self)
    }
}

/// Union of all design points restricted to the interval every sample
/// covers; replaced by a uniform grid on that interval when it would exceed
/// `max_points`.
pub fn common_grid(dataset: &FunctionalDataset, max_points: usize) -> Result<Vec<f64>> {
    let (lo, hi) = dataset.overlap();
    if !(lo < hi) {
        return Err(FotError::Validity("samples share no common interval".into()));
    }
    let mut points: Vec<f64> =
        dataset.samples.iter().flat_map(|s| s.x.iter().copied()).filter(|&x| x >= lo && x <= hi).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    if points.len() > max_points.max(2) || points.len() < 2 {
        return Ok(uniform_grid(lo, hi, max_points.max(2)));
    }
    Ok(points)
}

/// Linear interpolation of every sample onto `grid`.
pub fn resample(dataset: &FunctionalDataset, grid: &[f64]) -> Result<FunctionalDataset> {
    let samples = dataset
        .samples
        .iter()
        .map(|s| FunctionalSample::new(grid.to_vec(), s.interpolate(grid)))
        .collect::<Result<Vec<_>>>()?;
    FunctionalDataset::new(dataset.domain, samples)
}

/// Empirical mean and covariance (denominator `n`) of curves that share
/// their design points.
pub fn fit_gaussian(dataset: &FunctionalDataset) -> Result<GaussianMeasure> {
    let n = dataset.len();
    if n < 2 {
        return Err(FotError::Validity(format!("need at least 2 samples to fit a Gaussian, got {n}")));
    }
    let grid = &dataset.samples[0].x;
    if dataset.samples.iter().any(|s| &s.x != grid) {
        return Err(FotError::Dimension("samples must share design points; resample to a common grid first".into()));
    }
    let d = grid.len();
    let data = DMatrix::from_fn(d, n, |i, l| dataset.samples[l].y[i]);
    let mean = data.column_mean();
    let centered = DMatrix::from_fn(d, n, |i, l| data[(i, l)] - mean[i]);
    let cov = symmetrize(&(&centered * centered.transpose() / n as f64));
    GaussianMeasure::new(mean, cov)?.with_grid(grid.clone())
}

/// Squared 2-Wasserstein distance `‖m−n‖² + Tr(V + U − 2(V^½ U V^½)^½)`.
pub fn gaussian_w2(g1: &GaussianMeasure, g2: &GaussianMeasure) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(FotError::Dimension(format!("dimensions {} and {}", g1.dim(), g2.dim())));
    }
    let root = psd_sqrt(&g1.cov);
    let cross = psd_sqrt(&symmetrize(&(&root * &g2.cov * &root)));
    let value = (&g1.mean - &g2.mean).norm_squared() + g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Symmetric map `T = U^½ (U^½ V U^½)^{−½} U^½` pushing `N(V)` to `N(U)`,
/// with `V` the source and `U` the target covariance.
pub fn gaussian_ot_map(g_source: &GaussianMeasure, g_target: &GaussianMeasure) -> Result<DMatrix<f64>> {
    let d = g_source.dim();
    if g_target.dim() != d {
        return Err(FotError::Dimension(format!("dimensions {d} and {}", g_target.dim())));
    }
    if !(g_source.cov.trace() > 0.0) {
        return Err(FotError::Validity("source covariance is singular".into()));
    }
    let v = regularize(&g_source.cov, EIGEN_FLOOR);
    let root_u = psd_sqrt(&g_target.cov);
    let middle = symmetrize(&(&root_u * v * &root_u));
    if !(middle.trace() > 0.0) {
        // U = 0: everything collapses onto the target mean
        return Ok(DMatrix::zeros(d, d));
    }
    let inv = psd_inv_sqrt(&middle, EIGEN_FLOOR)?;
    Ok(symmetrize(&(&root_u * inv * &root_u)))
}

/// Maps every sample `x ↦ n + T(x − m)`. Samples must lie on the source
/// grid; outputs lie on the target grid (or an even grid on `[0, 1]`).
pub fn gp_pushforward(
    samples: &FunctionalDataset,
    g_source: &GaussianMeasure,
    g_target: &GaussianMeasure,
) -> Result<FunctionalDataset> {
    let map = gaussian_ot_map(g_source, g_target)?;
    push_with_map(samples, g_source, g_target, &map)
}

fn push_with_map(
    samples: &FunctionalDataset,
    g_source: &GaussianMeasure,
    g_target: &GaussianMeasure,
    map: &DMatrix<f64>,
) -> Result<FunctionalDataset> {
    let d = g_source.dim();
    let out_grid = g_target.grid.clone().unwrap_or_else(|| uniform_grid(0.0, 1.0, g_target.dim()));
    let mut pushed = Vec::with_capacity(samples.len());
    for (l, s) in samples.samples.iter().enumerate() {
        let on_grid = match &g_source.grid {
            Some(grid) => &s.x == grid,
            None => s.len() == d,
        };
        if !on_grid {
            return Err(FotError::Dimension(format!("sample {l} is not on the source grid")));
        }
        let x = DVector::from_column_slice(&s.y);
        let y = &g_target.mean + map * (x - &g_source.mean);
        pushed.push(FunctionalSample::new(out_grid.clone(), y.iter().copied().collect())?);
    }
    FunctionalDataset::new(Domain::Target, pushed)
}

/// The full baseline: Gaussians fitted on each side's common grid and the
/// closed-form map between them.
#[derive(Debug, Clone)]
pub struct GpotModel {
    pub source: GaussianMeasure,
    pub target: GaussianMeasure,
    pub map: DMatrix<f64>,
}

impl GpotModel {
    pub fn fit(source: &FunctionalDataset, target: &FunctionalDataset, max_grid: usize) -> Result<Self> {
        let source_grid = common_grid(source, max_grid)?;
        let target_grid = common_grid(target, max_grid)?;
        let gs = fit_gaussian(&resample(source, &source_grid)?)?;
        let gt = fit_gaussian(&resample(target, &target_grid)?)?;
        // the map needs equal dimensions; put the target on a grid of the source's size
        let gt = if gt.dim() != gs.dim() {
            let (lo, hi) = target.overlap();
            fit_gaussian(&resample(target, &uniform_grid(lo, hi, gs.dim()))?)?
        } else {
            gt
        };
        let map = gaussian_ot_map(&gs, &gt)?;
        Ok(Self { source: gs, target: gt, map })
    }

    /// Resamples arbitrary curves onto the source grid and maps them.
    pub fn push(&self, curves: &FunctionalDataset) -> Result<FunctionalDataset> {
        let grid = self.source.grid.as_ref().expect("fitted measures carry a grid");
        push_with_map(&resample(curves, grid)?, &self.source, &self.target, &self.map)
    }
}
