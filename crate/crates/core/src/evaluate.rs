//! Matching loss between pushed-forward and target curves, and the
//! simulation protocols built on top of it.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::coupling::{sinkhorn, sinkhorn_annealed, Marginals, SinkhornOptions, TransportPlan};
use crate::error::{FotError, Result};
use crate::funcdata::{
    generate_sinusoid_mixture, pushforward_dataset_by_groundtruth, uniform_grid, Domain, FunctionalDataset,
    FunctionalSample, ParamDist, PointsRule, SinusoidComponent,
};
use crate::gp_baseline::{resample, GpotModel};
use crate::operator::{CoefficientRule, OperatorCoeffs};
use crate::solver::{fit, LambdaInit, SolverConfig};

/// Relative entropy weight of the evaluation coupling.
pub const EVAL_GAMMA_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct MatchReport {
    pub loss: f64,
    pub plan: TransportPlan,
    /// `d(T f_l, g_k) / n_k` for every pair.
    pub distances: DMatrix<f64>,
}

/// Squared distances between pushed curves and targets at each target's
/// design points, divided by the target's length. Pushed curves observed at
/// other points are linearly interpolated.
pub fn distance_matrix(pushed: &FunctionalDataset, target: &FunctionalDataset) -> Result<DMatrix<f64>> {
    if pushed.is_empty() || target.is_empty() {
        return Err(FotError::Validity("matching loss needs nonempty datasets".into()));
    }
    let rows: Vec<Vec<f64>> = pushed
        .samples
        .par_iter()
        .map(|p| {
            target
                .samples
                .iter()
                .map(|t| {
                    let values = if p.x == t.x { p.y.clone() } else { p.interpolate(&t.x) };
                    values.iter().zip(&t.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(pushed.len(), target.len(), |l, k| rows[l][k]))
}

/// Near-exact optimal transport cost for a distance matrix. The entropy
/// weight defaults to `1e-3 · max D`.
pub fn matching_loss_from_distances(distances: DMatrix<f64>, gamma_eval: Option<f64>) -> Result<MatchReport> {
    let (n1, n2) = distances.shape();
    if n1 == 0 || n2 == 0 {
        return Err(FotError::Validity("matching loss needs nonempty datasets".into()));
    }
    if distances.iter().any(|v| !v.is_finite()) {
        return Err(FotError::NonFinite("distance matrix".into()));
    }
    let marginals = Marginals::uniform(n1, n2);
    let max = distances.max();
    if max <= 0.0 {
        return Ok(MatchReport { loss: 0.0, plan: TransportPlan::product(&marginals), distances });
    }
    let gamma = gamma_eval.unwrap_or(EVAL_GAMMA_FRACTION * max);
    let opts = SinkhornOptions { max_iters: 100_000, tolerance: 1e-10, ..Default::default() };
    let plan = sinkhorn_annealed(&distances, gamma, &marginals, &opts)?;
    if !plan.converged {
        log::warn!("evaluation coupling stopped at marginal residual {:e}", plan.residual);
    }
    let loss = plan.transport_cost(&distances).max(0.0);
    Ok(MatchReport { loss, plan, distances })
}

pub fn matching_loss(pushed: &FunctionalDataset, target: &FunctionalDataset, gamma_eval: Option<f64>) -> Result<MatchReport> {
    matching_loss_from_distances(distance_matrix(pushed, target)?, gamma_eval)
}

/// Matching loss of an operator, evaluating each pushed source curve exactly
/// at each target curve's design points.
pub fn operator_matching_loss(
    op: &OperatorCoeffs,
    source: &FunctionalDataset,
    target: &FunctionalDataset,
    gamma_eval: Option<f64>,
) -> Result<MatchReport> {
    let mut distances = op.cost_matrix(source, target)?;
    for (k, t) in target.samples.iter().enumerate() {
        distances.column_mut(k).scale_mut(1.0 / t.len() as f64);
    }
    matching_loss_from_distances(distances, gamma_eval)
}

/// Mixes a base seed with a stream index so protocol stages draw independent
/// random numbers.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Default single-component source prior for the simulation protocols.
pub fn default_source_prior() -> Vec<SinusoidComponent> {
    vec![SinusoidComponent {
        amplitude: ParamDist::Uniform { low: 0.5, high: 1.5 },
        frequency: ParamDist::Uniform { low: 2.0, high: 8.0 },
        phase: ParamDist::Uniform { low: 0.0, high: std::f64::consts::TAU },
        offset: ParamDist::Uniform { low: -1.0, high: 1.0 },
    }]
}

fn simulation_solver() -> SolverConfig {
    SolverConfig { coefficient_rule: CoefficientRule::Trapezoid, ..SolverConfig::preset("sim51").expect("builtin preset") }
}

fn standard_normal_matrix(rows: usize, cols: usize, seed: u64, scale: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(rows, cols);
    // row-major draw order so the matrix does not depend on storage layout
    for j in 0..rows {
        for i in 0..cols {
            let z: f64 = StandardNormal.sample(&mut rng);
            m[(j, i)] = z * scale(j, i);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2LeftConfig {
    pub n_source: usize,
    pub n_target: usize,
    /// Size of the ground-truth block on both sides.
    pub intrinsic_dim: usize,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub source_prior: Vec<SinusoidComponent>,
    pub source_points: PointsRule,
    pub target_points: PointsRule,
    pub solver: SolverConfig,
    pub gamma_eval: Option<f64>,
}

impl Default for Fig2LeftConfig {
    fn default() -> Self {
        Self {
            n_source: 30,
            n_target: 30,
            intrinsic_dim: 15,
            k_grid: vec![3, 6, 9, 12, 15, 18, 20],
            seeds: vec![0, 1, 2],
            source_prior: default_source_prior(),
            source_points: PointsRule::RandomRange { min: 80, max: 120 },
            target_points: PointsRule::RandomRange { min: 80, max: 120 },
            solver: simulation_solver(),
            gamma_eval: None,
        }
    }
}

impl Fig2LeftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 {
            return Err(FotError::Parameter("sample counts must be positive".into()));
        }
        if self.n_source != self.n_target {
            return Err(FotError::Parameter("the pushforward protocol pairs every source curve with one target".into()));
        }
        if self.intrinsic_dim == 0 || self.k_grid.is_empty() || self.k_grid.contains(&0) || self.seeds.is_empty() {
            return Err(FotError::Parameter("intrinsic dimension, K grid and seeds must be nonempty and positive".into()));
        }
        self.source_points.validate()?;
        self.target_points.validate()?;
        self.solver.validate()
    }

    pub fn basis_count(&self) -> usize {
        self.k_grid.iter().copied().max().unwrap_or(0).max(self.intrinsic_dim)
    }
}

/// Source curves, ground-truth operator and pushed target curves for one seed.
#[derive(Debug, Clone)]
pub struct GroundTruthData {
    pub source: FunctionalDataset,
    pub target: FunctionalDataset,
    pub truth: OperatorCoeffs,
}

pub fn fig2_left_data(config: &Fig2LeftConfig, seed: u64) -> Result<GroundTruthData> {
    let basis = BasisSet::brownian(config.basis_count())?;
    let source = generate_sinusoid_mixture(
        config.n_source,
        &config.source_prior,
        &config.source_points,
        derive_seed(seed, 1),
        Domain::Source,
    )?;
    let k = config.intrinsic_dim;
    let lambda = standard_normal_matrix(k, k, derive_seed(seed, 2), |_, _| 1.0);
    let truth = OperatorCoeffs::new(lambda, basis.clone(), basis)?.with_rule(config.solver.coefficient_rule);
    let target = pushforward_dataset_by_groundtruth(&source, &truth, &config.target_points, derive_seed(seed, 3))?;
    Ok(GroundTruthData { source, target, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k_source: usize,
    pub k_target: usize,
    /// Mean over the seeds that succeeded (NaN if none did).
    pub value: f64,
    pub per_seed: Vec<Option<f64>>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    fn assemble(grid: &[usize], n_seeds: usize, cells: Vec<Result<f64>>) -> Self {
        let mut cells = cells.into_iter();
        let points = grid
            .iter()
            .map(|&k| {
                let mut per_seed = Vec::with_capacity(n_seeds);
                let mut failures = Vec::new();
                for _ in 0..n_seeds {
                    match cells.next().expect("one cell per seed") {
                        Ok(v) => per_seed.push(Some(v)),
                        Err(e) => {
                            log::warn!("K = {k}: {e}");
                            failures.push(e.to_string());
                            per_seed.push(None);
                        }
                    }
                }
                let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
                let value = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
                CurvePoint { k_source: k, k_target: k, value, per_seed, failures }
            })
            .collect();
        Curve { points }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn value_at(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.k_source == k).map(|p| p.value)
    }

    /// `k1,k2,loss`
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "k1,k2,loss")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.k_source, p.k_target, p.value)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `k,frobenius`
    pub fn write_frobenius_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "k,frobenius")?;
        for p in &self.points {
            writeln!(out, "{},{}", p.k_source, p.value)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Matching loss of the fitted map as the truncation `K̂` grows, with data
/// pushed through a ground truth of finite intrinsic dimension.
pub fn run_fig2_left(config: &Fig2LeftConfig) -> Result<Curve> {
    config.validate()?;
    let data = config.seeds.iter().map(|&s| fig2_left_data(config, s)).collect::<Result<Vec<_>>>()?;
    let basis = BasisSet::brownian(config.basis_count())?;
    let cells: Vec<(usize, usize)> =
        config.k_grid.iter().flat_map(|&k| (0..data.len()).map(move |s| (k, s))).collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(k, s)| {
            let solver = SolverConfig { k_source: k, k_target: k, ..config.solver.clone() };
            let d = &data[s];
            let result = fit(&d.source, &d.target, &basis, &basis, &solver)?;
            Ok(operator_matching_loss(&result.op, &d.source, &d.target, config.gamma_eval)?.loss)
        })
        .collect();
    Ok(Curve::assemble(&config.k_grid, data.len(), results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2RightConfig {
    pub n_source: usize,
    /// Truncation of the ground-truth operator; entries beyond it are zero.
    pub truth_dim: usize,
    /// Entries are `scale · z_ji / (i j)^decay` with 1-based indices.
    pub decay: f64,
    pub scale: f64,
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub source_prior: Vec<SinusoidComponent>,
    pub source_points: PointsRule,
    pub target_points: PointsRule,
    pub solver: SolverConfig,
    /// Start each fit from the true block instead of the solver's rule.
    pub init_at_truth: bool,
}

impl Default for Fig2RightConfig {
    fn default() -> Self {
        Self {
            n_source: 30,
            truth_dim: 40,
            decay: 1.0,
            scale: 1.0,
            k_grid: vec![2, 4, 6, 8, 10, 12],
            seeds: vec![0, 1, 2],
            source_prior: default_source_prior(),
            source_points: PointsRule::RandomRange { min: 80, max: 120 },
            target_points: PointsRule::RandomRange { min: 80, max: 120 },
            solver: simulation_solver(),
            init_at_truth: false,
        }
    }
}

impl Fig2RightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.truth_dim == 0 || self.seeds.is_empty() || self.k_grid.is_empty() {
            return Err(FotError::Parameter("sample count, truth dimension, seeds and K grid must be nonempty".into()));
        }
        if self.k_grid.iter().any(|&k| k == 0 || k > self.truth_dim) {
            return Err(FotError::Parameter("every K must lie in 1..=truth_dim".into()));
        }
        if !self.decay.is_finite() || !self.scale.is_finite() {
            return Err(FotError::Parameter("decay and scale must be finite".into()));
        }
        self.source_points.validate()?;
        self.target_points.validate()?;
        self.solver.validate()
    }
}

pub fn fig2_right_data(config: &Fig2RightConfig, seed: u64) -> Result<GroundTruthData> {
    let basis = BasisSet::brownian(config.truth_dim)?;
    let source = generate_sinusoid_mixture(
        config.n_source,
        &config.source_prior,
        &config.source_points,
        derive_seed(seed, 1),
        Domain::Source,
    )?;
    let n = config.truth_dim;
    let (decay, scale) = (config.decay, config.scale);
    let lambda =
        standard_normal_matrix(n, n, derive_seed(seed, 2), |j, i| scale * (((i + 1) * (j + 1)) as f64).powf(-decay));
    let truth = OperatorCoeffs::new(lambda, basis.clone(), basis)?.with_rule(config.solver.coefficient_rule);
    let target = pushforward_dataset_by_groundtruth(&source, &truth, &config.target_points, derive_seed(seed, 3))?;
    Ok(GroundTruthData { source, target, truth })
}

/// `‖T*_K − T̂_K‖_F` where `T*_K` is the leading `K × K` block of the
/// ground truth in the shared orthonormal basis.
pub fn run_fig2_right(config: &Fig2RightConfig) -> Result<Curve> {
    config.validate()?;
    let data = config.seeds.iter().map(|&s| fig2_right_data(config, s)).collect::<Result<Vec<_>>>()?;
    let basis = BasisSet::brownian(config.truth_dim)?;
    let cells: Vec<(usize, usize)> =
        config.k_grid.iter().flat_map(|&k| (0..data.len()).map(move |s| (k, s))).collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(k, s)| {
            let d = &data[s];
            let block = d.truth.lambda().view((0, 0), (k, k)).into_owned();
            let lambda_init = if config.init_at_truth {
                LambdaInit::Given { lambda: block.row_iter().map(|r| r.iter().copied().collect()).collect() }
            } else {
                config.solver.lambda_init.clone()
            };
            let solver = SolverConfig { k_source: k, k_target: k, lambda_init, ..config.solver.clone() };
            let result = fit(&d.source, &d.target, &basis, &basis, &solver)?;
            Ok((result.op.lambda() - block).norm())
        })
        .collect();
    Ok(Curve::assemble(&config.k_grid, data.len(), results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fot,
    Gpot,
    VectorSinkhorn,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Fot => "FOT",
            Method::Gpot => "GPOT",
            Method::VectorSinkhorn => "VectorSinkhorn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub methods: Vec<Method>,
    pub basis_count: usize,
    pub solver: SolverConfig,
    /// Maximum size of the common grid the Gaussians are fitted on.
    pub gp_grid: usize,
    /// Length of the fixed grid for the vector method; defaults to the mean
    /// target curve length so its costs are on the same scale as the
    /// functional costs.
    pub vector_grid: Option<usize>,
    /// Entropy weight for the vector method; defaults to the solver's.
    pub vector_gamma: Option<f64>,
    pub gamma_eval: Option<f64>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::Fot, Method::Gpot, Method::VectorSinkhorn],
            basis_count: 10,
            solver: SolverConfig { k_source: 10, k_target: 10, ..simulation_solver() },
            gp_grid: 200,
            vector_grid: None,
            vector_gamma: None,
            gamma_eval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub method: Method,
    pub loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub rows: Vec<BaselineRow>,
}

impl BaselineTable {
    pub fn loss(&self, method: Method) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).and_then(|r| r.loss)
    }

    /// `method,loss`; failed methods get an empty loss.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "method,loss")?;
        for r in &self.rows {
            match r.loss {
                Some(v) => writeln!(out, "{},{v}", r.method.label())?,
                None => writeln!(out, "{},", r.method.label())?,
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Discrete map between curves treated as vectors on a fixed grid: an
/// entropic coupling followed by the barycentric projection onto the target
/// vectors. New curves take the projection of their nearest training curve.
#[derive(Debug, Clone)]
pub struct VectorSinkhornMap {
    pub grid: Vec<f64>,
    pub sources: FunctionalDataset,
    pub projections: FunctionalDataset,
}

impl VectorSinkhornMap {
    pub fn fit(source: &FunctionalDataset, target: &FunctionalDataset, grid_len: usize, gamma: f64) -> Result<Self> {
        let (slo, shi) = source.overlap();
        let (tlo, thi) = target.overlap();
        let (lo, hi) = (slo.max(tlo), shi.min(thi));
        if !(lo < hi) {
            return Err(FotError::Validity("source and target curves share no common interval".into()));
        }
        let grid = uniform_grid(lo, hi, grid_len.max(2));
        let xs = resample(source, &grid)?;
        let ys = resample(target, &grid)?;
        let cost = DMatrix::from_fn(xs.len(), ys.len(), |l, k| squared_distance(&xs.samples[l].y, &ys.samples[k].y));
        let marginals = Marginals::uniform(xs.len(), ys.len());
        let plan = sinkhorn(&cost, gamma, &marginals, &SinkhornOptions::default())?;
        let mut projections = Vec::with_capacity(xs.len());
        for l in 0..xs.len() {
            let mass: f64 = plan.plan.row(l).sum();
            let values = (0..grid.len())
                .map(|i| (0..ys.len()).map(|k| plan.plan[(l, k)] * ys.samples[k].y[i]).sum::<f64>() / mass)
                .collect();
            projections.push(FunctionalSample::new(grid.clone(), values)?);
        }
        Ok(Self { grid, sources: xs, projections: FunctionalDataset::new(Domain::Target, projections)? })
    }

    pub fn push(&self, source: &FunctionalDataset) -> Result<FunctionalDataset> {
        let xs = resample(source, &self.grid)?;
        let pushed = xs
            .samples
            .iter()
            .map(|x| {
                let nearest = (0..self.sources.len())
                    .min_by(|&a, &b| {
                        squared_distance(&x.y, &self.sources.samples[a].y)
                            .total_cmp(&squared_distance(&x.y, &self.sources.samples[b].y))
                    })
                    .expect("fitted map has training curves");
                self.projections.samples[nearest].clone()
            })
            .collect();
        FunctionalDataset::new(Domain::Target, pushed)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pushforward of the training curves themselves.
pub fn vector_sinkhorn_pushforward(
    source: &FunctionalDataset,
    target: &FunctionalDataset,
    grid_len: usize,
    gamma: f64,
) -> Result<FunctionalDataset> {
    Ok(VectorSinkhornMap::fit(source, target, grid_len, gamma)?.projections)
}

/// In-sample comparison: every method is fitted and scored on the same pair
/// of datasets.
pub fn compare_baselines(
    source: &FunctionalDataset,
    target: &FunctionalDataset,
    settings: &BaselineSettings,
) -> Result<BaselineTable> {
    compare_baselines_heldout(source, target, source, target, settings)
}

/// Fits every method on the training pair and scores the pushforward of the
/// test sources against the test targets. A failing method is recorded in
/// its row and the others still run.
pub fn compare_baselines_heldout(
    train_source: &FunctionalDataset,
    train_target: &FunctionalDataset,
    test_source: &FunctionalDataset,
    test_target: &FunctionalDataset,
    settings: &BaselineSettings,
) -> Result<BaselineTable> {
    if [train_source, train_target, test_source, test_target].iter().any(|d| d.is_empty()) {
        return Err(FotError::Validity("baseline comparison needs nonempty datasets".into()));
    }
    let run = |method: Method| -> Result<f64> {
        match method {
            Method::Fot => {
                let basis = BasisSet::brownian(settings.basis_count)?;
                let result = fit(train_source, train_target, &basis, &basis, &settings.solver)?;
                Ok(operator_matching_loss(&result.op, test_source, test_target, settings.gamma_eval)?.loss)
            }
            Method::Gpot => {
                let model = GpotModel::fit(train_source, train_target, settings.gp_grid)?;
                Ok(matching_loss(&model.push(test_source)?, test_target, settings.gamma_eval)?.loss)
            }
            Method::VectorSinkhorn => {
                let lengths = train_target.samples.iter().map(|s| s.len()).sum::<usize>();
                let mean_len = lengths as f64 / train_target.len() as f64;
                let grid_len = settings.vector_grid.unwrap_or(mean_len.round() as usize);
                let gamma = settings.vector_gamma.unwrap_or(settings.solver.gamma_h);
                let map = VectorSinkhornMap::fit(train_source, train_target, grid_len, gamma)?;
                Ok(matching_loss(&map.push(test_source)?, test_target, settings.gamma_eval)?.loss)
            }
        }
    };
    let rows = settings
        .methods
        .par_iter()
        .map(|&method| match run(method) {
            Ok(loss) => BaselineRow { method, loss: Some(loss), error: None },
            Err(e) => {
                log::warn!("{} failed: {e}", method.label());
                BaselineRow { method, loss: None, error: Some(e.to_string()) }
            }
        })
        .collect();
    Ok(BaselineTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineExperiment {
    pub n_source: usize,
    pub n_target: usize,
    /// Held-out curves per side; zero scores the methods in-sample.
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub source_prior: Vec<SinusoidComponent>,
    pub target_prior: Vec<SinusoidComponent>,
    pub source_points: PointsRule,
    pub target_points: PointsRule,
    pub settings: BaselineSettings,
}

impl Default for BaselineExperiment {
    fn default() -> Self {
        let component = |offset: f64, frequency: f64| SinusoidComponent {
            amplitude: ParamDist::Uniform { low: 0.8, high: 1.2 },
            frequency: ParamDist::Uniform { low: frequency - 0.5, high: frequency + 0.5 },
            phase: ParamDist::Uniform { low: 0.0, high: 0.5 },
            offset: ParamDist::Uniform { low: offset - 0.2, high: offset + 0.2 },
        };
        Self {
            n_source: 30,
            n_target: 30,
            n_test: 30,
            seeds: vec![0, 1, 2],
            source_prior: vec![component(0.0, 4.0)],
            target_prior: vec![component(1.5, 3.0), component(-1.5, 6.0)],
            source_points: PointsRule::RandomRange { min: 80, max: 120 },
            target_points: PointsRule::RandomRange { min: 80, max: 120 },
            settings: BaselineSettings::default(),
        }
    }
}

impl BaselineExperiment {
    fn draw(&self, seed: u64, stream: u64, n: usize, prior: &[SinusoidComponent], points: &PointsRule) -> Result<FunctionalDataset> {
        let domain = if stream % 2 == 1 { Domain::Source } else { Domain::Target };
        generate_sinusoid_mixture(n, prior, points, derive_seed(seed, stream), domain)
    }

    /// Training pair for one seed.
    pub fn data(&self, seed: u64) -> Result<(FunctionalDataset, FunctionalDataset)> {
        Ok((
            self.draw(seed, 1, self.n_source, &self.source_prior, &self.source_points)?,
            self.draw(seed, 2, self.n_target, &self.target_prior, &self.target_points)?,
        ))
    }

    /// Held-out pair for one seed, drawn from independent streams.
    pub fn test_data(&self, seed: u64) -> Result<Option<(FunctionalDataset, FunctionalDataset)>> {
        if self.n_test == 0 {
            return Ok(None);
        }
        Ok(Some((
            self.draw(seed, 3, self.n_test, &self.source_prior, &self.source_points)?,
            self.draw(seed, 4, self.n_test, &self.target_prior, &self.target_points)?,
        )))
    }

    pub fn run_seed(&self, seed: u64) -> Result<BaselineTable> {
        let (source, target) = self.data(seed)?;
        match self.test_data(seed)? {
            Some((ts, tt)) => compare_baselines_heldout(&source, &target, &ts, &tt, &self.settings),
            None => compare_baselines(&source, &target, &self.settings),
        }
    }

    /// Mean loss per method over the seeds. A method that fails on any seed
    /// keeps the first error instead of a loss.
    pub fn run(&self) -> Result<BaselineTable> {
        self.settings.solver.validate()?;
        if self.seeds.is_empty() {
            return Err(FotError::Parameter("baseline experiment needs at least one seed".into()));
        }
        let tables = self.seeds.iter().map(|&s| self.run_seed(s)).collect::<Result<Vec<_>>>()?;
        let rows = self
            .settings
            .methods
            .iter()
            .enumerate()
            .map(|(i, &method)| {
                let per_seed: Vec<&BaselineRow> = tables.iter().map(|t| &t.rows[i]).collect();
                if let Some(err) = per_seed.iter().find_map(|r| r.error.clone()) {
                    return BaselineRow { method, loss: None, error: Some(err) };
                }
                let mean = per_seed.iter().filter_map(|r| r.loss).sum::<f64>() / per_seed.len() as f64;
                BaselineRow { method, loss: Some(mean), error: None }
            })
            .collect();
        Ok(BaselineTable { rows })
    }
}
