//! Finite-rank Hilbert–Schmidt operators `T = Σ λ_ji U_i ⊗ V_j`.
//!
//! The operator is stored as its `K₂ × K₁` coefficient matrix together with
//! the source and target bases. A sample `(x, y)` is pushed forward to
//! `V(x') Λ U(x)ᵀ y` at target points `x'`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{FotError, Result};
use crate::funcdata::{FunctionalDataset, FunctionalSample};

/// How source coefficients `⟨f, U_i⟩` are formed from observed values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientRule {
    /// Plain dot product `U(x)ᵀ y`.
    #[default]
    DotProduct,
    /// Trapezoid weights over the sample's design points.
    Trapezoid,
}

impl CoefficientRule {
    /// Quadrature weights for the given design points.
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CoefficientRule::DotProduct => vec![1.0; x.len()],
            CoefficientRule::Trapezoid => trapezoid_weights(x),
        }
    }
}

pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| match i {
            0 => 0.5 * (x[1] - x[0]),
            _ if i == n - 1 => 0.5 * (x[n - 1] - x[n - 2]),
            _ => 0.5 * (x[i + 1] - x[i - 1]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCoeffs {
    lambda: DMatrix<f64>,
    source_basis: BasisSet,
    target_basis: BasisSet,
    rule: CoefficientRule,
}

impl OperatorCoeffs {
    /// `lambda` is `K₂ × K₁`; the first `K₁` (`K₂`) functions of the source
    /// (target) basis are used.
    pub fn new(lambda: DMatrix<f64>, source_basis: BasisSet, target_basis: BasisSet) -> Result<Self> {
        if lambda.ncols() == 0 || lambda.nrows() == 0 {
            return Err(FotError::Dimension("coefficient matrix must be nonempty".into()));
        }
        if lambda.ncols() > source_basis.count() || lambda.nrows() > target_basis.count() {
            return Err(FotError::Dimension(format!(
                "coefficient matrix is {}x{} but bases provide {} target and {} source functions",
                lambda.nrows(),
                lambda.ncols(),
                target_basis.count(),
                source_basis.count()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(FotError::NonFinite("operator coefficients".into()));
        }
        Ok(Self { lambda, source_basis, target_basis, rule: CoefficientRule::default() })
    }

    pub fn zeros(k_target: usize, k_source: usize, source_basis: BasisSet, target_basis: BasisSet) -> Result<Self> {
        Self::new(DMatrix::zeros(k_target, k_source), source_basis, target_basis)
    }

    pub fn with_rule(mut self, rule: CoefficientRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn set_lambda(&mut self, lambda: DMatrix<f64>) -> Result<()> {
        if lambda.shape() != self.lambda.shape() {
            return Err(FotError::Dimension(format!(
                "expected {:?} coefficient matrix, got {:?}",
                self.lambda.shape(),
                lambda.shape()
            )));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn source_basis(&self) -> &BasisSet {
        &self.source_basis
    }

    pub fn target_basis(&self) -> &BasisSet {
        &self.target_basis
    }

    pub fn rule(&self) -> CoefficientRule {
        self.rule
    }

    pub fn k_source(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn k_target(&self) -> usize {
        self.lambda.nrows()
    }

    /// Source coefficients `U(x)ᵀ (w ∘ y)`.
    pub fn source_coefficients(&self, f: &FunctionalSample) -> Result<DVector<f64>> {
        source_coefficients(&self.source_basis, self.k_source(), self.rule, f)
    }

    pub fn pushforward_values(&self, f: &FunctionalSample, target_points: &[f64]) -> Result<Vec<f64>> {
        if target_points.is_empty() {
            return Err(FotError::Dimension("no target points to evaluate".into()));
        }
        let a = self.source_coefficients(f)?;
        let v = self.target_basis.evaluate(target_points, self.k_target())?;
        Ok((v * (&self.lambda * a)).iter().copied().collect())
    }

    pub fn pushforward(&self, f: &FunctionalSample, target_points: &[f64]) -> Result<FunctionalSample> {
        let y = self.pushforward_values(f, target_points)?;
        FunctionalSample::new(target_points.to_vec(), y)
    }

    /// `C_lk = ‖V_k Λ a_l − y_k‖²` with every target at its own design points.
    pub fn cost_matrix(&self, source: &FunctionalDataset, target: &FunctionalDataset) -> Result<DMatrix<f64>> {
        let cache = DesignCache::new(
            &self.source_basis,
            &self.target_basis,
            self.k_source(),
            self.k_target(),
            self.rule,
            source,
            target,
        )?;
        Ok(cache.cost_matrix(&self.lambda))
    }

    pub fn hs_norm_sq(&self) -> f64 {
        hs_norm_sq(&self.lambda)
    }
}

pub fn hs_norm_sq(lambda: &DMatrix<f64>) -> f64 {
    lambda.iter().map(|v| v * v).sum()
}

fn source_coefficients(
    basis: &BasisSet,
    k: usize,
    rule: CoefficientRule,
    f: &FunctionalSample,
) -> Result<DVector<f64>> {
    let u = basis.evaluate(&f.x, k)?;
    let w = rule.weights(&f.x);
    let wy = DVector::from_iterator(f.len(), f.y.iter().zip(&w).map(|(y, w)| y * w));
    Ok(u.transpose() * wy)
}

/// Basis evaluations for both datasets; these never change during a fit.
#[derive(Debug, Clone)]
pub struct DesignCache {
    /// Column `l` holds the coefficients `a_l` of source sample `l` (`K₁ × n₁`).
    pub source_coeffs: DMatrix<f64>,
    /// `V_k` for every target sample (`d_k × K₂`).
    pub target_evals: Vec<DMatrix<f64>>,
    pub target_values: Vec<DVector<f64>>,
    /// `V_kᵀ V_k`.
    pub target_gram: Vec<DMatrix<f64>>,
    /// `V_kᵀ y_k`.
    pub target_proj: Vec<DVector<f64>>,
    pub target_sq_norm: Vec<f64>,
}

impl DesignCache {
    pub fn new(
        source_basis: &BasisSet,
        target_basis: &BasisSet,
        k_source: usize,
        k_target: usize,
        rule: CoefficientRule,
        source: &FunctionalDataset,
        target: &FunctionalDataset,
    ) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(FotError::Validity("datasets must be nonempty".into()));
        }
        let mut source_coeffs = DMatrix::zeros(k_source, source.len());
        for (l, s) in source.samples.iter().enumerate() {
            source_coeffs.set_column(l, &source_coefficients(source_basis, k_source, rule, s)?);
        }
        let mut target_evals = Vec::with_capacity(target.len());
        let mut target_values = Vec::with_capacity(target.len());
        let mut target_gram = Vec::with_capacity(target.len());
        let mut target_proj = Vec::with_capacity(target.len());
        let mut target_sq_norm = Vec::with_capacity(target.len());
        for s in &target.samples {
            let v = target_basis.evaluate(&s.x, k_target)?;
            let y = DVector::from_column_slice(&s.y);
            target_gram.push(v.transpose() * &v);
            target_proj.push(v.transpose() * &y);
            target_sq_norm.push(y.norm_squared());
            target_evals.push(v);
            target_values.push(y);
        }
        Ok(Self { source_coeffs, target_evals, target_values, target_gram, target_proj, target_sq_norm })
    }

    pub fn n_source(&self) -> usize {
        self.source_coeffs.ncols()
    }

    pub fn n_target(&self) -> usize {
        self.target_evals.len()
    }

    pub fn k_source(&self) -> usize {
        self.source_coeffs.nrows()
    }

    pub fn k_target(&self) -> usize {
        self.target_gram.first().map(|g| g.nrows()).unwrap_or(0)
    }

    /// Each entry is computed independently from the residual vector, so the
    /// result does not depend on evaluation order.
    pub fn cost_matrix(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        let n1 = self.n_source();
        let n2 = self.n_target();
        let mapped = lambda * &self.source_coeffs;
        let rows: Vec<Vec<f64>> = (0..n1)
            .into_par_iter()
            .map(|l| {
                let b = mapped.column(l);
                (0..n2)
                    .map(|k| {
                        let pred = &self.target_evals[k] * b;
                        (pred - &self.target_values[k]).norm_squared()
                    })
                    .collect()
            })
            .collect();
        DMatrix::from_fn(n1, n2, |l, k| rows[l][k])
    }
}

/// Serialized map: coefficients (row-major, `K₂` rows) plus both bases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapFile {
    pub lambda: Vec<Vec<f64>>,
    pub source_basis: BasisSet,
    pub target_basis: BasisSet,
    #[serde(default)]
    pub coefficient_rule: CoefficientRule,
}

impl From<&OperatorCoeffs> for MapFile {
    fn from(op: &OperatorCoeffs) -> Self {
        Self {
            lambda: op.lambda.row_iter().map(|r| r.iter().copied().collect()).collect(),
            source_basis: op.source_basis.clone(),
            target_basis: op.target_basis.clone(),
            coefficient_rule: op.rule,
        }
    }
}

impl TryFrom<MapFile> for OperatorCoeffs {
    type Error = FotError;

    fn try_from(file: MapFile) -> Result<Self> {
        let rows = file.lambda.len();
        let cols = file.lambda.first().map(Vec::len).unwrap_or(0);
        if file.lambda.iter().any(|r| r.len() != cols) {
            return Err(FotError::Dimension("ragged coefficient matrix".into()));
        }
        let lambda = DMatrix::from_fn(rows, cols, |i, j| file.lambda[i][j]);
        Ok(OperatorCoeffs::new(lambda, file.source_basis, file.target_basis)?.with_rule(file.coefficient_rule))
    }
}
