use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fot_core::basis::BasisSet;
use fot_core::coupling::{sinkhorn as core_sinkhorn, Marginals, SinkhornOptions};
use fot_core::evaluate::matching_loss as core_matching_loss;
use fot_core::funcdata::{
    generate_sinusoid_mixture, load_dataset, save_dataset, DataFormat, Domain, FunctionalDataset, FunctionalSample,
    ParamDist, PointsRule, SinusoidComponent,
};
use fot_core::gp_baseline::{gaussian_w2 as core_gaussian_w2, GaussianMeasure};
use fot_core::operator::{MapFile, OperatorCoeffs};
use fot_core::solver::{fit as core_fit, SolverConfig};
use fot_core::FotError;

fn to_py(e: FotError) -> PyErr {
    match e {
        FotError::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (FotError::NonFinite(_) | FotError::Convergence { .. } | FotError::Diverged { .. }) => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn domain(name: &str) -> PyResult<Domain> {
    match name {
        "source" => Ok(Domain::Source),
        "target" => Ok(Domain::Target),
        other => Err(PyValueError::new_err(format!("domain must be 'source' or 'target', got {other:?}"))),
    }
}

/// A set of curves, each observed at its own increasing points in [0, 1].
#[pyclass(name = "Dataset", module = "fot_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: FunctionalDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (curves, domain="source"))]
    fn new(curves: Vec<(Vec<f64>, Vec<f64>)>, domain: &str) -> PyResult<Self> {
        let samples = curves
            .into_iter()
            .map(|(x, y)| FunctionalSample::new(x, y))
            .collect::<fot_core::Result<Vec<_>>>()
            .map_err(to_py)?;
        let inner = FunctionalDataset::new(self::domain(domain)?, samples).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a `.json` or `.csv` dataset file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let format = DataFormat::from_path(&path).map_err(to_py)?;
        Ok(Self { inner: load_dataset(&path, format, Domain::Source).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let format = DataFormat::from_path(&path).map_err(to_py)?;
        save_dataset(&self.inner, &path, format).map_err(to_py)
    }

    fn curves(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.inner.samples.iter().map(|s| (s.x.clone(), s.y.clone())).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} curves, {:?})", self.inner.len(), self.inner.domain)
    }
}

/// Linear operator between curve spaces, stored as basis coefficients.
#[pyclass(name = "Operator", module = "fot_py", skip_from_py_object)]
#[derive(Clone)]
struct PyOperator {
    inner: OperatorCoeffs,
}

#[pymethods]
impl PyOperator {
    /// Coefficient matrix with `k_target` rows and Brownian-motion bases on
    /// both sides.
    #[new]
    fn new(coefficients: Vec<Vec<f64>>) -> PyResult<Self> {
        let lambda = matrix(&coefficients)?;
        let (k2, k1) = lambda.shape();
        let source = BasisSet::brownian(k1).map_err(to_py)?;
        let target = BasisSet::brownian(k2).map_err(to_py)?;
        Ok(Self { inner: OperatorCoeffs::new(lambda, source, target).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyOSError::new_err(e.to_string()))?;
        let file: MapFile = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: OperatorCoeffs::try_from(file).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let text = serde_json::to_string_pretty(&MapFile::from(&self.inner)).map_err(|e| PyValueError::new_err(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[getter]
    fn coefficients(&self) -> Vec<Vec<f64>> {
        rows(self.inner.lambda())
    }

    /// Pushes every curve forward, evaluating at `points` or at each curve's
    /// own points.
    #[pyo3(signature = (curves, points=None))]
    fn push(&self, curves: &PyDataset, points: Option<Vec<f64>>) -> PyResult<PyDataset> {
        let pushed = curves
            .inner
            .samples
            .iter()
            .map(|s| self.inner.pushforward(s, points.as_deref().unwrap_or(&s.x)))
            .collect::<fot_core::Result<Vec<_>>>()
            .map_err(to_py)?;
        Ok(PyDataset { inner: FunctionalDataset::new(Domain::Target, pushed).map_err(to_py)? })
    }

    fn cost_matrix(&self, source: &PyDataset, target: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.cost_matrix(&source.inner, &target.inner).map_err(to_py)?))
    }

    fn hs_norm_sq(&self) -> f64 {
        self.inner.hs_norm_sq()
    }
}

#[pyclass(name = "FitResult", module = "fot_py")]
struct PyFitResult {
    #[pyo3(get)]
    operator: PyOperator,
    #[pyo3(get)]
    plan: Vec<Vec<f64>>,
    #[pyo3(get)]
    objective_trace: Vec<f64>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    iterations: usize,
}

/// Solver settings from a preset name and keyword overrides.
fn solver_config(preset: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<SolverConfig> {
    let base = match preset {
        Some(name) => SolverConfig::preset(name).map_err(to_py)?,
        None => SolverConfig::default(),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let (Some(kwargs), Some(map)) = (overrides, value.as_object_mut()) {
        for (key, item) in kwargs.iter() {
            let key: String = key.extract()?;
            let json = if item.is_none() {
                serde_json::Value::Null
            } else if let Ok(b) = item.cast::<pyo3::types::PyBool>() {
                serde_json::Value::Bool(b.is_true())
            } else if let Ok(i) = item.extract::<i64>() {
                serde_json::Value::from(i)
            } else if let Ok(f) = item.extract::<f64>() {
                serde_json::Value::from(f)
            } else if let Ok(s) = item.extract::<String>() {
                serde_json::Value::from(s)
            } else {
                return Err(PyValueError::new_err(format!("unsupported value for solver option {key:?}")));
            };
            map.insert(key, json);
        }
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(format!("solver options: {e}")))
}

/// Jointly fits an operator and a coupling between two datasets with
/// Brownian-motion bases. Keyword arguments override solver settings.
#[pyfunction]
#[pyo3(signature = (source, target, preset=None, **options))]
fn fit(
    py: Python<'_>,
    source: &PyDataset,
    target: &PyDataset,
    preset: Option<&str>,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyFitResult> {
    let config = solver_config(preset, options)?;
    let (source, target) = (source.inner.clone(), target.inner.clone());
    let result = py
        .detach(move || {
            let sb = BasisSet::brownian(config.k_source)?;
            let tb = BasisSet::brownian(config.k_target)?;
            core_fit(&source, &target, &sb, &tb, &config)
        })
        .map_err(to_py)?;
    let objective_trace =
        std::iter::once(result.initial.total).chain(result.trace.iter().map(|r| r.objective.total)).collect();
    Ok(PyFitResult {
        plan: rows(&result.plan.plan),
        objective_trace,
        converged: result.flags.converged,
        iterations: result.flags.iterations,
        operator: PyOperator { inner: result.op },
    })
}

/// Entropic transport plan. Marginals default to uniform.
#[pyfunction]
#[pyo3(signature = (cost, gamma, source=None, target=None, tolerance=1e-9))]
fn sinkhorn(
    cost: Vec<Vec<f64>>,
    gamma: f64,
    source: Option<Vec<f64>>,
    target: Option<Vec<f64>>,
    tolerance: f64,
) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let cost = matrix(&cost)?;
    let (n1, n2) = cost.shape();
    let marginals = match (source, target) {
        (None, None) => Marginals::uniform(n1, n2),
        (Some(p), Some(q)) => Marginals::new(DVector::from_vec(p), DVector::from_vec(q)).map_err(to_py)?,
        _ => return Err(PyValueError::new_err("give both marginals or neither")),
    };
    let opts = SinkhornOptions { tolerance, ..Default::default() };
    let plan = core_sinkhorn(&cost, gamma, &marginals, &opts).map_err(to_py)?;
    Ok((rows(&plan.plan), plan.residual))
}

/// Near-exact transport cost between two curve sets.
#[pyfunction]
fn matching_loss(pushed: &PyDataset, target: &PyDataset) -> PyResult<f64> {
    Ok(core_matching_loss(&pushed.inner, &target.inner, None).map_err(to_py)?.loss)
}

/// Squared 2-Wasserstein distance between two Gaussians.
#[pyfunction]
fn gaussian_w2(mean1: Vec<f64>, cov1: Vec<Vec<f64>>, mean2: Vec<f64>, cov2: Vec<Vec<f64>>) -> PyResult<f64> {
    let g1 = GaussianMeasure::new(DVector::from_vec(mean1), matrix(&cov1)?).map_err(to_py)?;
    let g2 = GaussianMeasure::new(DVector::from_vec(mean2), matrix(&cov2)?).map_err(to_py)?;
    core_gaussian_w2(&g1, &g2).map_err(to_py)
}

/// Values of the first `count` Brownian-motion eigenfunctions, one row per point.
#[pyfunction]
fn brownian_basis(count: usize, points: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let basis = BasisSet::brownian(count).map_err(to_py)?;
    Ok(rows(&basis.evaluate(&points, count).map_err(to_py)?))
}

/// `n` curves `A sin(ωx + φ) + m` with each parameter uniform on the given
/// `(low, high)` range and a random number of sorted uniform points.
#[pyfunction]
#[pyo3(signature = (n, amplitude=(0.5, 1.5), frequency=(2.0, 8.0), phase=(0.0, std::f64::consts::TAU), offset=(-1.0, 1.0), points=(80, 120), seed=0, domain="source"))]
#[allow(clippy::too_many_arguments)]
fn sinusoids(
    n: usize,
    amplitude: (f64, f64),
    frequency: (f64, f64),
    phase: (f64, f64),
    offset: (f64, f64),
    points: (usize, usize),
    seed: u64,
    domain: &str,
) -> PyResult<PyDataset> {
    let uniform = |(low, high): (f64, f64)| ParamDist::Uniform { low, high };
    let component = SinusoidComponent {
        amplitude: uniform(amplitude),
        frequency: uniform(frequency),
        phase: uniform(phase),
        offset: uniform(offset),
    };
    let rule = PointsRule::RandomRange { min: points.0, max: points.1 };
    let inner = generate_sinusoid_mixture(n, &[component], &rule, seed, self::domain(domain)?).map_err(to_py)?;
    Ok(PyDataset { inner })
}

#[pymodule]
fn fot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(matching_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_w2, m)?)?;
    m.add_function(wrap_pyfunction!(brownian_basis, m)?)?;
    m.add_function(wrap_pyfunction!(sinusoids, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
