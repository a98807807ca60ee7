//! Alternating minimization over the operator coefficients and the coupling.
//!
//! Each outer iteration solves for `π` with `Λ` fixed (Sinkhorn when the
//! power weight is zero, the augmented Lagrangian otherwise) and then takes a
//! fixed number of gradient steps on `Λ` with `π` fixed.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::coupling::{
    entropy_term, lagrangian_coupling, power_term, sinkhorn_warm, CouplingConfig, Marginals,
    PrimalStep, SinkhornMode, SinkhornOptions, TransportPlan,
};
use crate::error::{FotError, Result};
use crate::evaluate::operator_matching_loss;
use crate::funcdata::FunctionalDataset;
use crate::operator::{hs_norm_sq, CoefficientRule, DesignCache, MapFile, OperatorCoeffs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaInit {
    #[default]
    Zero,
    /// Entries i.i.d. `N(0, scale²)` drawn from the config seed.
    Random { scale: f64 },
    /// Row-major `K₂ × K₁` matrix.
    Given { lambda: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PiInit {
    #[default]
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eta: f64,
    pub gamma_h: f64,
    pub gamma_p: f64,
    pub p: f64,
    pub k_source: usize,
    pub k_target: usize,
    pub lr_lambda: f64,
    /// Euclidean step for the Lagrangian primal updates; unset selects the
    /// preconditioned multiplicative step.
    pub lr_pi: Option<f64>,
    pub max_outer: usize,
    pub inner_lambda_steps: usize,
    pub lambda_init: LambdaInit,
    pub pi_init: PiInit,
    pub seed: u64,
    pub coefficient_rule: CoefficientRule,
    /// Stop once the relative objective decrease stays below this value for
    /// `stop_patience` consecutive outer iterations.
    pub stop_tolerance: f64,
    pub stop_patience: usize,
    /// Shared penalty `ρ` for both marginal constraints and the slack.
    pub rho: f64,
    pub coupling_max_iters: usize,
    pub coupling_tolerance: f64,
    pub coupling_inner_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            gamma_h: 20.0,
            gamma_p: 0.0,
            p: 2.0,
            k_source: 10,
            k_target: 10,
            lr_lambda: 4e-4,
            lr_pi: None,
            max_outer: 1000,
            inner_lambda_steps: 20,
            lambda_init: LambdaInit::Zero,
            pi_init: PiInit::Product,
            seed: 0,
            coefficient_rule: CoefficientRule::DotProduct,
            stop_tolerance: 1e-8,
            stop_patience: 10,
            rho: 800.0,
            coupling_max_iters: 10_000,
            // tight enough that marginal infeasibility cannot show up as an
            // objective increase between outer iterations
            coupling_tolerance: 1e-12,
            coupling_inner_iters: 200,
        }
    }
}

pub const PRESET_NAMES: [&str; 2] = ["appendix", "sim51"];

impl SolverConfig {
    /// Named hyperparameter sets: `appendix` (the optimization appendix) and
    /// `sim51` (the simulation study).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "appendix" => Ok(Self {
                rho: 800.0,
                lr_lambda: 4e-4,
                lr_pi: Some(1e-5),
                max_outer: 1000,
                eta: 0.001,
                gamma_h: 40.0,
                gamma_p: -10.0,
                p: 3.0,
                ..Self::default()
            }),
            "sim51" => Ok(Self { gamma_h: 20.0, eta: 1.0, ..Self::default() }),
            other => Err(FotError::Config(format!(
                "unknown solver preset {other:?} (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(FotError::Parameter("eta must be finite and nonnegative".into()));
        }
        if self.k_source == 0 || self.k_target == 0 {
            return Err(FotError::Parameter("K1 and K2 must be at least 1".into()));
        }
        // lr = 0 is allowed and freezes Λ
        if !(self.lr_lambda >= 0.0 && self.lr_lambda.is_finite()) {
            return Err(FotError::Parameter("lr_lambda must be finite and nonnegative".into()));
        }
        if self.max_outer == 0 {
            return Err(FotError::Parameter("max_outer must be at least 1".into()));
        }
        if let LambdaInit::Random { scale } = self.lambda_init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(FotError::Parameter("random init scale must be finite and nonnegative".into()));
            }
        }
        self.coupling_config().validate()
    }

    pub fn coupling_config(&self) -> CouplingConfig {
        CouplingConfig {
            gamma_h: self.gamma_h,
            gamma_p: self.gamma_p,
            p: self.p,
            max_iters: self.coupling_max_iters,
            tolerance: self.coupling_tolerance,
            rho_target: self.rho,
            rho_source: self.rho,
            rho_slack: self.rho,
            primal_step: match self.lr_pi {
                Some(lr) => PrimalStep::Fixed { lr },
                None => PrimalStep::default(),
            },
            inner_iters: self.coupling_inner_iters,
            divergence_window: 50,
            sinkhorn_mode: SinkhornMode::Log,
        }
    }

    fn initial_lambda(&self) -> Result<DMatrix<f64>> {
        let (k2, k1) = (self.k_target, self.k_source);
        match &self.lambda_init {
            LambdaInit::Zero => Ok(DMatrix::zeros(k2, k1)),
            LambdaInit::Random { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok(DMatrix::from_fn(k2, k1, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }))
            }
            LambdaInit::Given { lambda } => {
                if lambda.len() != k2 || lambda.iter().any(|r| r.len() != k1) {
                    return Err(FotError::Dimension(format!("initial lambda must be {k2}x{k1}")));
                }
                Ok(DMatrix::from_fn(k2, k1, |j, i| lambda[j][i]))
            }
        }
    }
}

/// Per-term breakdown of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub transport: f64,
    /// `γ_h Σ π log π`
    pub entropy: f64,
    /// `γ_p Σ π^p`
    pub power: f64,
    /// `η ‖Λ‖²_F`
    pub hs: f64,
    pub total: f64,
}

impl ObjectiveTerms {
    pub fn compute(cost: &DMatrix<f64>, plan: &DMatrix<f64>, lambda: &DMatrix<f64>, config: &SolverConfig) -> Self {
        let transport = plan.component_mul(cost).sum();
        let entropy = config.gamma_h * entropy_term(plan);
        let power = if config.gamma_p == 0.0 { 0.0 } else { config.gamma_p * power_term(plan, config.p) };
        let hs = config.eta * hs_norm_sq(lambda);
        Self { transport, entropy, power, hs, total: transport + entropy + power + hs }
    }

    pub fn is_finite(&self) -> bool {
        [self.transport, self.entropy, self.power, self.hs, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub objective: ObjectiveTerms,
    pub coupling_iterations: usize,
    pub coupling_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    /// Stopping rule triggered before `max_outer`.
    pub converged: bool,
    /// Every coupling solve reached its tolerance.
    pub couplings_converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub op: OperatorCoeffs,
    pub plan: TransportPlan,
    pub initial: ObjectiveTerms,
    pub trace: Vec<OuterRecord>,
    pub flags: FitFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResultJson {
    pub map: MapFile,
    pub plan: Vec<Vec<f64>>,
    pub initial: ObjectiveTerms,
    pub trace: Vec<OuterRecord>,
    pub flags: FitFlags,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map(|r| r.objective.total).unwrap_or(self.initial.total)
    }

    pub fn to_json(&self) -> FitResultJson {
        FitResultJson {
            map: MapFile::from(&self.op),
            plan: self.plan.plan.row_iter().map(|r| r.iter().copied().collect()).collect(),
            initial: self.initial,
            trace: self.trace.clone(),
            flags: self.flags,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// `iteration,total,transport,entropy,power,hs` with iteration 0 the start.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "iteration,total,transport,entropy,power,hs")?;
        let rows = std::iter::once((0, self.initial)).chain(self.trace.iter().map(|r| (r.iteration, r.objective)));
        for (it, t) in rows {
            writeln!(out, "{it},{},{},{},{},{}", t.total, t.transport, t.entropy, t.power, t.hs)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Plan-weighted second moments used by the `Λ` gradient. With
/// `G_k = V_kᵀV_k`, `M_k = Σ_l π_lk a_l a_lᵀ`, `m_k = Σ_l π_lk a_l`,
/// `w_k = V_kᵀ y_k` the gradient is `2 Σ_k (G_k Λ M_k − w_k m_kᵀ) + 2ηΛ`.
pub struct LambdaMoments<'a> {
    cache: &'a DesignCache,
    second: Vec<DMatrix<f64>>,
    linear: DMatrix<f64>,
}

impl<'a> LambdaMoments<'a> {
    pub fn new(cache: &'a DesignCache, plan: &DMatrix<f64>) -> Self {
        let a = &cache.source_coeffs;
        let k1 = cache.k_source();
        let mut second = Vec::with_capacity(cache.n_target());
        let mut linear = DMatrix::zeros(cache.k_target(), k1);
        for k in 0..cache.n_target() {
            let weights = plan.column(k);
            let weighted = DMatrix::from_fn(k1, a.ncols(), |i, l| a[(i, l)] * weights[l]);
            second.push(&weighted * a.transpose());
            let m_k: DVector<f64> = a * weights;
            linear += &cache.target_proj[k] * m_k.transpose();
        }
        Self { cache, second, linear }
    }

    pub fn gradient(&self, lambda: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
        let mut grad = -&self.linear;
        for (g, m) in self.cache.target_gram.iter().zip(&self.second) {
            grad += (g * lambda) * m;
        }
        grad * 2.0 + lambda * (2.0 * eta)
    }
}

/// Exact gradient of `Σ π_lk C_lk(Λ) + η‖Λ‖²_F` with respect to `Λ`.
pub fn grad_lambda(cache: &DesignCache, lambda: &DMatrix<f64>, plan: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    LambdaMoments::new(cache, plan).gradient(lambda, eta)
}

/// `Σ π_lk C_lk(Λ) + η‖Λ‖²_F`, the part of the objective that depends on `Λ`.
pub fn lambda_objective(cache: &DesignCache, lambda: &DMatrix<f64>, plan: &DMatrix<f64>, eta: f64) -> f64 {
    cache.cost_matrix(lambda).component_mul(plan).sum() + eta * hs_norm_sq(lambda)
}

pub fn fit(
    source: &FunctionalDataset,
    target: &FunctionalDataset,
    source_basis: &BasisSet,
    target_basis: &BasisSet,
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    source.validate()?;
    target.validate()?;
    for (basis, k, side) in [(source_basis, config.k_source, "source"), (target_basis, config.k_target, "target")] {
        if k > basis.count() {
            return Err(FotError::Dimension(format!("{side} basis has {} functions, K = {k} requested", basis.count())));
        }
    }
    let cache = DesignCache::new(
        source_basis,
        target_basis,
        config.k_source,
        config.k_target,
        config.coefficient_rule,
        source,
        target,
    )?;
    let marginals = Marginals::uniform(source.len(), target.len());
    let coupling = config.coupling_config();
    let sinkhorn_opts = SinkhornOptions {
        max_iters: config.coupling_max_iters,
        tolerance: config.coupling_tolerance,
        mode: SinkhornMode::Log,
        ..Default::default()
    };

    let mut lambda = config.initial_lambda()?;
    let mut plan = match config.pi_init {
        PiInit::Product => TransportPlan::product(&marginals),
    };
    let mut cost = cache.cost_matrix(&lambda);
    let initial = ObjectiveTerms::compute(&cost, &plan.plan, &lambda, config);
    if !initial.is_finite() {
        return Err(FotError::Diverged {
            message: "initial objective is not finite".into(),
            iteration: 0,
            objective_trace: vec![initial.total],
        });
    }

    let mut trace: Vec<OuterRecord> = Vec::new();
    let mut previous = initial.total;
    let mut stall = 0;
    let mut converged = false;
    let mut couplings_converged = true;
    let mut potentials = None;

    for t in 1..=config.max_outer {
        plan = if config.gamma_p == 0.0 {
            sinkhorn_warm(&cost, config.gamma_h, &marginals, &sinkhorn_opts, potentials.as_ref())?
        } else {
            lagrangian_coupling(&cost, &marginals, &coupling)?
        };
        if !plan.converged {
            couplings_converged = false;
            log::debug!("coupling solve at outer iteration {t} stopped at residual {:e}", plan.residual);
        }
        if config.gamma_p == 0.0 {
            potentials = plan.potentials.clone();
        }

        if config.lr_lambda > 0.0 {
            let moments = LambdaMoments::new(&cache, &plan.plan);
            for _ in 0..config.inner_lambda_steps {
                let grad = moments.gradient(&lambda, config.eta);
                lambda -= grad * config.lr_lambda;
            }
        }
        cost = cache.cost_matrix(&lambda);
        let objective = ObjectiveTerms::compute(&cost, &plan.plan, &lambda, config);
        let record = OuterRecord {
            iteration: t,
            objective,
            coupling_iterations: plan.iterations,
            coupling_residual: plan.residual,
        };
        trace.push(record);
        if !objective.is_finite() || lambda.iter().any(|v| !v.is_finite()) {
            return Err(FotError::Diverged {
                message: "objective became non-finite; lr_lambda is likely too large".into(),
                iteration: t,
                objective_trace: trace.iter().map(|r| r.objective.total).collect(),
            });
        }
        log::debug!("outer {t}: objective {:.12e}", objective.total);

        let decrease = (previous - objective.total) / previous.abs().max(f64::MIN_POSITIVE);
        stall = if decrease < config.stop_tolerance { stall + 1 } else { 0 };
        previous = objective.total;
        if stall >= config.stop_patience {
            converged = true;
            break;
        }
    }

    let op = OperatorCoeffs::new(lambda, source_basis.clone(), target_basis.clone())?.with_rule(config.coefficient_rule);
    let iterations = trace.len();
    Ok(FitResult { op, plan, initial, trace, flags: FitFlags { converged, couplings_converged, iterations } })
}

/// Objective at `(Λ, π)` for a fitted or hypothetical operator.
pub fn joint_objective(
    cache: &DesignCache,
    lambda: &DMatrix<f64>,
    plan: &DMatrix<f64>,
    config: &SolverConfig,
) -> ObjectiveTerms {
    ObjectiveTerms::compute(&cache.cost_matrix(lambda), plan, lambda, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub k_source: usize,
    pub k_target: usize,
    pub loss: f64,
    pub fold_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub best: (usize, usize),
}

impl CvTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "k1,k2,loss")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.k_source, r.k_target, r.loss)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn fold_indices(n: usize, n_folds: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % n_folds != fold)
}

/// K-fold cross-validation over a grid of `(K₁, K₂)`. Samples are assigned
/// to folds round-robin by index; for every fold the held-out source curves
/// are pushed through the map fitted on the rest and compared against the
/// held-out target curves.
pub fn cross_validate(
    source: &FunctionalDataset,
    target: &FunctionalDataset,
    source_basis: &BasisSet,
    target_basis: &BasisSet,
    k_grid: &[(usize, usize)],
    config: &SolverConfig,
    n_folds: usize,
) -> Result<CvTable> {
    if k_grid.is_empty() {
        return Err(FotError::Parameter("K grid must be nonempty".into()));
    }
    if n_folds < 2 {
        return Err(FotError::Parameter("cross-validation needs at least 2 folds".into()));
    }
    let mut splits = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let (s_train, s_held) = fold_indices(source.len(), n_folds, fold);
        let (t_train, t_held) = fold_indices(target.len(), n_folds, fold);
        for (name, part) in [("source training", &s_train), ("source held-out", &s_held), ("target training", &t_train), ("target held-out", &t_held)] {
            if part.len() < 2 {
                return Err(FotError::Validity(format!("fold {fold}: {name} split has {} samples, need at least 2", part.len())));
            }
        }
        splits.push((source.subset(&s_train), source.subset(&s_held), target.subset(&t_train), target.subset(&t_held)));
    }

    let cells: Vec<(usize, usize)> = (0..k_grid.len()).flat_map(|g| (0..n_folds).map(move |f| (g, f))).collect();
    let losses: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(g, f)| {
            let (k1, k2) = k_grid[g];
            let cfg = SolverConfig { k_source: k1, k_target: k2, ..config.clone() };
            let (s_train, s_held, t_train, t_held) = &splits[f];
            let result = fit(s_train, t_train, source_basis, target_basis, &cfg)?;
            Ok(operator_matching_loss(&result.op, s_held, t_held, None)?.loss)
        })
        .collect();

    let mut rows = Vec::with_capacity(k_grid.len());
    let mut losses = losses.into_iter();
    for &(k1, k2) in k_grid {
        let fold_losses = (0..n_folds).map(|_| losses.next().expect("one result per cell")).collect::<Result<Vec<f64>>>()?;
        let loss = fold_losses.iter().sum::<f64>() / n_folds as f64;
        rows.push(CvRow { k_source: k1, k_target: k2, loss, fold_losses });
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .map(|r| (r.k_source, r.k_target))
        .expect("nonempty grid");
    Ok(CvTable { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcdata::{Domain, FunctionalSample};
    use rand::Rng;

    fn random_instance(seed: u64, n1: usize, n2: usize, k1: usize, k2: usize) -> (DesignCache, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = |rng: &mut ChaCha8Rng| {
            let d = rng.random_range(3..8);
            let mut x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            x.sort_by(f64::total_cmp);
            let y = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            FunctionalSample::new(x, y).unwrap()
        };
        let source = FunctionalDataset::new(Domain::Source, (0..n1).map(|_| sample(&mut rng)).collect()).unwrap();
        let target = FunctionalDataset::new(Domain::Target, (0..n2).map(|_| sample(&mut rng)).collect()).unwrap();
        let basis = BasisSet::brownian(12).unwrap();
        let cache = DesignCache::new(&basis, &basis, k1, k2, CoefficientRule::DotProduct, &source, &target).unwrap();
        let lambda = DMatrix::from_fn(k2, k1, |_, _| rng.random::<f64>() - 0.5);
        let plan = DMatrix::from_fn(n1, n2, |_, _| rng.random::<f64>());
        let plan = &plan / plan.sum();
        (cache, lambda, plan)
    }

    fn finite_difference(cache: &DesignCache, lambda: &DMatrix<f64>, plan: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
        let h = 1e-6;
        DMatrix::from_fn(lambda.nrows(), lambda.ncols(), |j, i| {
            let mut up = lambda.clone();
            up[(j, i)] += h;
            let mut down = lambda.clone();
            down[(j, i)] -= h;
            (lambda_objective(cache, &up, plan, eta) - lambda_objective(cache, &down, plan, eta)) / (2.0 * h)
        })
    }

    #[test]
    fn zero_plan_leaves_only_regularizer() {
        let (cache, lambda, _) = random_instance(1, 3, 4, 3, 2);
        let grad = grad_lambda(&cache, &lambda, &DMatrix::zeros(3, 4), 0.7);
        assert!((grad - &lambda * 1.4).amax() < 1e-14);
    }

    #[test]
    fn single_pair_at_zero_operator() {
        let (cache, _, _) = random_instance(2, 2, 2, 4, 3);
        let mut plan = DMatrix::zeros(2, 2);
        plan[(1, 0)] = 1.0;
        let grad = grad_lambda(&cache, &DMatrix::zeros(3, 4), &plan, 0.0);
        let expected = -(&cache.target_proj[0] * cache.source_coeffs.column(1).transpose()) * 2.0;
        assert!((&grad - expected).amax() < 1e-12);
        let fd = finite_difference(&cache, &DMatrix::zeros(3, 4), &plan, 0.0);
        assert!((grad - fd).amax() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (cache, lambda, plan) = random_instance(10 + seed, 4, 5, 5, 4);
            let grad = grad_lambda(&cache, &lambda, &plan, 0.3);
            let fd = finite_difference(&cache, &lambda, &plan, 0.3);
            for (g, f) in grad.iter().zip(fd.iter()) {
                assert!((g - f).abs() <= 1e-5 * f.abs().max(1e-3), "{g} vs {f}");
            }
        }
    }

    #[test]
    fn presets_match_reported_values() {
        let a = SolverConfig::preset("appendix").unwrap();
        assert_eq!((a.rho, a.lr_lambda, a.lr_pi, a.max_outer), (800.0, 4e-4, Some(1e-5), 1000));
        assert_eq!((a.eta, a.gamma_h, a.gamma_p, a.p), (0.001, 40.0, -10.0, 3.0));
        let s = SolverConfig::preset("sim51").unwrap();
        assert_eq!((s.gamma_h, s.eta), (20.0, 1.0));
        assert!(SolverConfig::preset("nope").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SolverConfig { eta: -1.0, ..Default::default() },
            SolverConfig { k_source: 0, ..Default::default() },
            SolverConfig { lr_lambda: f64::NAN, ..Default::default() },
            SolverConfig { max_outer: 0, ..Default::default() },
            SolverConfig { gamma_h: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = toml::from_str::<SolverConfig>("eta = 1.0\nbogus = 2\n");
        assert!(err.is_err());
        let ok: SolverConfig = toml::from_str("eta = 0.5\nlambda_init = { rule = \"random\", scale = 0.1 }\n").unwrap();
        assert_eq!(ok.eta, 0.5);
        assert_eq!(ok.lambda_init, LambdaInit::Random { scale: 0.1 });
    }
}
