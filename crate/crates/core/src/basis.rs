//! Karhunen–Loève basis systems.
//!
//! Three families are supported: the Brownian-motion kernel `min(s, t)` on
//! `[0, 1]`, the squared-exponential kernel under a Gaussian measure on the
//! real line, and empirical bases obtained from the eigendecomposition of a
//! kernel matrix on a grid. Every family evaluates to a dense
//! `points × k` matrix whose column `j` is the `j`-th eigenfunction.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FotError, Result};

const DOMAIN_SLACK: f64 = 1e-12;
const EIGEN_CLAMP_RELATIVE: f64 = 1e-12;
const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-8;
const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Derived constants of the squared-exponential eigendecomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub big_a: f64,
    pub big_b: f64,
}

impl SeConstants {
    pub fn new(lengthscale: f64, sigma: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(FotError::Parameter(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FotError::Parameter(format!(
                "measure scale sigma must be positive, got {sigma}"
            )));
        }
        let a = 1.0 / (4.0 * sigma * sigma);
        let b = 1.0 / (2.0 * lengthscale * lengthscale);
        let c = (a * a + 2.0 * a * b).sqrt();
        let big_a = a + b + c;
        let big_b = b / big_a;
        Ok(Self { a, b, c, big_a, big_b })
    }

    /// Eigenvalue of order `k` (zero-based).
    pub fn eigenvalue(&self, k: usize) -> f64 {
        (2.0 * self.a / self.big_a).sqrt() * self.big_b.powi(k as i32)
    }
}

/// A single closed-form eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eigenfunction {
    /// `√2 · sin(frequency · t)` on `[0, 1]`.
    Sine { frequency: f64 },
    /// Hermite eigenfunction of the given order, normalized in `L²(N(0, σ²))`.
    Hermite { order: usize, constants: SeConstants, sigma: f64 },
}

impl Eigenfunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Eigenfunction::Sine { frequency } => SQRT_2 * (frequency * x).sin(),
            Eigenfunction::Hermite { order, constants, sigma } => {
                let h = normalized_hermite_upto(order, (2.0 * constants.c).sqrt() * x);
                se_envelope(&constants, sigma, x) * h[order]
            }
        }
    }
}

/// Eigenvalues paired with evaluable eigenfunctions.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Eigenfunction>,
}

/// `λ_k = 4 / ((2k − 1)² π²)` and `φ_k(t) = √2 sin((k − ½) π t)`, `k = 1..=K`.
pub fn brownian_eigenpairs(count: usize) -> Result<Eigenpairs> {
    if count == 0 {
        return Err(FotError::Parameter("basis count must be at least 1".into()));
    }
    let (eigenvalues, eigenfunctions) = (1..=count)
        .map(|k| {
            let odd = (2 * k - 1) as f64;
            (
                4.0 / (odd * odd * PI * PI),
                Eigenfunction::Sine { frequency: (k as f64 - 0.5) * PI },
            )
        })
        .unzip();
    Ok(Eigenpairs { eigenvalues, eigenfunctions })
}

/// Squared-exponential eigenpairs for orders `0..K`.
pub fn se_eigenpairs(lengthscale: f64, sigma: f64, count: usize) -> Result<Eigenpairs> {
    let constants = SeConstants::new(lengthscale, sigma)?;
    if count == 0 {
        return Err(FotError::Parameter("basis count must be at least 1".into()));
    }
    let eigenvalues = (0..count).map(|k| constants.eigenvalue(k)).collect();
    let eigenfunctions = (0..count)
        .map(|order| Eigenfunction::Hermite { order, constants, sigma })
        .collect();
    Ok(Eigenpairs { eigenvalues, eigenfunctions })
}

/// Physicists' Hermite polynomials `H_0..=H_k` at `x` by the three-term recurrence.
pub fn hermite_upto(k: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(2.0 * x);
    }
    for n in 1..k {
        let next = 2.0 * x * out[n] - 2.0 * n as f64 * out[n - 1];
        out.push(next);
    }
    out
}

pub fn hermite(k: usize, x: f64) -> f64 {
    hermite_upto(k, x)[k]
}

/// `H_n(x) / √(2ⁿ n!)` for `n = 0..=k`, computed with the rescaled recurrence
/// so that high orders do not overflow.
pub fn normalized_hermite_upto(k: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(SQRT_2 * x);
    }
    for n in 1..k {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

// exp(−(c − a)x²) times the normalization √(2σ√c), which makes ∫φ_k² dN(0, σ²) = 1.
fn se_envelope(constants: &SeConstants, sigma: f64, x: f64) -> f64 {
    (2.0 * sigma * constants.c.sqrt()).sqrt() * (-(constants.c - constants.a) * x * x).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    BrownianMotion,
    SquaredExponential {
        lengthscale: f64,
        sigma: f64,
    },
    /// Orthonormal eigenvectors of a kernel matrix, stored column-wise
    /// (`eigenvectors[j]` is the `j`-th eigenvector over `grid`).
    Empirical {
        grid: Vec<f64>,
        eigenvectors: Vec<Vec<f64>>,
    },
}

/// `K` evaluable orthonormal basis functions with their eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    #[serde(flatten)]
    kind: BasisKind,
    count: usize,
    eigenvalues: Vec<f64>,
}

/// Serialized layout of an empirical basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalBasisJson {
    pub grid: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

impl BasisSet {
    pub fn brownian(count: usize) -> Result<Self> {
        let pairs = brownian_eigenpairs(count)?;
        Ok(Self { kind: BasisKind::BrownianMotion, count, eigenvalues: pairs.eigenvalues })
    }

    pub fn squared_exponential(lengthscale: f64, sigma: f64, count: usize) -> Result<Self> {
        let pairs = se_eigenpairs(lengthscale, sigma, count)?;
        Ok(Self {
            kind: BasisKind::SquaredExponential { lengthscale, sigma },
            count,
            eigenvalues: pairs.eigenvalues,
        })
    }

    /// Top-`count` eigenvectors of a symmetric PSD kernel matrix sampled on `grid`.
    pub fn empirical(grid: &[f64], kernel_matrix: &DMatrix<f64>, count: usize) -> Result<Self> {
        let n = kernel_matrix.nrows();
        if kernel_matrix.ncols() != n {
            return Err(FotError::Dimension(format!(
                "kernel matrix must be square, got {}x{}",
                n,
                kernel_matrix.ncols()
            )));
        }
        if grid.len() != n {
            return Err(FotError::Dimension(format!(
                "grid has {} points but kernel matrix is {n}x{n}",
                grid.len()
            )));
        }
        if count == 0 || count > n {
            return Err(FotError::Dimension(format!(
                "requested {count} eigenvectors from a {n}x{n} kernel matrix"
            )));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FotError::Validity("empirical basis grid must be strictly increasing".into()));
        }
        if kernel_matrix.iter().any(|v| !v.is_finite()) {
            return Err(FotError::NonFinite("kernel matrix".into()));
        }
        let scale = kernel_matrix.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (kernel_matrix[(i, j)] - kernel_matrix[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(FotError::Validity(format!(
                        "kernel matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }

        let trace = kernel_matrix.trace();
        let sym = (kernel_matrix + kernel_matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let smallest = eig.eigenvalues[order[n - 1]];
        if smallest < -NEGATIVE_EIGEN_TOLERANCE * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(FotError::Validity(format!(
                "kernel matrix is not positive semidefinite (eigenvalue {smallest:e})"
            )));
        }

        let largest = eig.eigenvalues[order[0]].max(0.0);
        let mut eigenvalues = Vec::with_capacity(count);
        let mut eigenvectors = Vec::with_capacity(count);
        for &idx in order.iter().take(count) {
            let mut value = eig.eigenvalues[idx];
            if value < EIGEN_CLAMP_RELATIVE * largest {
                value = 0.0;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            // sign convention: largest-magnitude entry is positive
            let pivot = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            eigenvalues.push(value);
            eigenvectors.push(v);
        }

        Ok(Self {
            kind: BasisKind::Empirical { grid: grid.to_vec(), eigenvectors },
            count,
            eigenvalues,
        })
    }

    pub fn from_empirical_json(json: &EmpiricalBasisJson) -> Result<Self> {
        let n = json.grid.len();
        if json.eigenvalues.len() != json.eigenvectors.len() || json.eigenvalues.is_empty() {
            return Err(FotError::Dimension("eigenvalue/eigenvector counts differ".into()));
        }
        if json.eigenvectors.iter().any(|v| v.len() != n) {
            return Err(FotError::Dimension("eigenvector length differs from grid length".into()));
        }
        if json.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FotError::Validity("empirical basis grid must be strictly increasing".into()));
        }
        Ok(Self {
            kind: BasisKind::Empirical { grid: json.grid.clone(), eigenvectors: json.eigenvectors.clone() },
            count: json.eigenvalues.len(),
            eigenvalues: json.eigenvalues.clone(),
        })
    }

    pub fn to_empirical_json(&self) -> Option<EmpiricalBasisJson> {
        match &self.kind {
            BasisKind::Empirical { grid, eigenvectors } => Some(EmpiricalBasisJson {
                grid: grid.clone(),
                eigenvalues: self.eigenvalues.clone(),
                eigenvectors: eigenvectors.clone(),
            }),
            _ => None,
        }
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Closed interval on which the basis may be evaluated.
    pub fn domain(&self) -> (f64, f64) {
        match &self.kind {
            BasisKind::BrownianMotion => (0.0, 1.0),
            BasisKind::SquaredExponential { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            BasisKind::Empirical { grid, .. } => (grid[0], grid[grid.len() - 1]),
        }
    }

    pub fn check_domain(&self, points: &[f64]) -> Result<()> {
        let (lo, hi) = self.domain();
        let label = match self.kind {
            BasisKind::BrownianMotion => "[0, 1]",
            BasisKind::SquaredExponential { .. } => "(-inf, inf)",
            BasisKind::Empirical { .. } => "empirical grid range",
        };
        for &p in points {
            if !p.is_finite() || p < lo - DOMAIN_SLACK || p > hi + DOMAIN_SLACK {
                return Err(FotError::Domain { point: p, domain: label });
            }
        }
        Ok(())
    }

    /// Matrix with entry `(i, j) = φ_j(points[i])` for `j < k_max`.
    pub fn evaluate(&self, points: &[f64], k_max: usize) -> Result<DMatrix<f64>> {
        if k_max == 0 || k_max > self.count {
            return Err(FotError::Dimension(format!(
                "requested {k_max} basis functions from a basis of size {}",
                self.count
            )));
        }
        self.check_domain(points)?;
        let mut out = DMatrix::zeros(points.len(), k_max);
        match &self.kind {
            BasisKind::BrownianMotion => {
                for (i, &t) in points.iter().enumerate() {
                    for j in 0..k_max {
                        out[(i, j)] = SQRT_2 * ((j as f64 + 0.5) * PI * t).sin();
                    }
                }
            }
            &BasisKind::SquaredExponential { lengthscale, sigma } => {
                let constants = SeConstants::new(lengthscale, sigma)?;
                let root = (2.0 * constants.c).sqrt();
                for (i, &x) in points.iter().enumerate() {
                    let envelope = se_envelope(&constants, sigma, x);
                    let h = normalized_hermite_upto(k_max - 1, root * x);
                    for j in 0..k_max {
                        out[(i, j)] = envelope * h[j];
                    }
                }
            }
            BasisKind::Empirical { grid, eigenvectors } => {
                let root_n = (grid.len() as f64).sqrt();
                for (i, &x) in points.iter().enumerate() {
                    let (lo, hi, w) = bracket(grid, x);
                    for j in 0..k_max {
                        let v = &eigenvectors[j];
                        out[(i, j)] = root_n * ((1.0 - w) * v[lo] + w * v[hi]);
                    }
                }
            }
        }
        Ok(out)
    }
}

// Index pair and interpolation weight for `x` inside a sorted grid.
fn bracket(grid: &[f64], x: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    let w = (x - grid[lo]) / (grid[hi] - grid[lo]);
    (lo, hi, w)
}
