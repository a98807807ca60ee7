//! Couplings between two empirical measures for a fixed cost matrix.
//!
//! [`sinkhorn`] solves the entropy-regularized problem by alternating
//! marginal scaling (log-domain by default). [`lagrangian_coupling`] handles
//! the additional `γ_p Σ π^p` term with an augmented Lagrangian: slack
//! variables for `π ≥ 0`, quadratic penalties on both marginals and dual
//! ascent on the multipliers.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FotError, Result};

const MARGINAL_SUM_TOLERANCE: f64 = 1e-9;

/// Prescribed row (`source`) and column (`target`) marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub source: DVector<f64>,
    pub target: DVector<f64>,
}

impl Marginals {
    pub fn uniform(n_source: usize, n_target: usize) -> Self {
        Self {
            source: DVector::from_element(n_source, 1.0 / n_source as f64),
            target: DVector::from_element(n_target, 1.0 / n_target as f64),
        }
    }

    pub fn new(source: DVector<f64>, target: DVector<f64>) -> Result<Self> {
        let m = Self { source, target };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err(FotError::Dimension("marginals must be nonempty".into()));
        }
        for v in self.source.iter().chain(self.target.iter()) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(FotError::Validity("marginal weights must be finite and nonnegative".into()));
            }
        }
        let (a, b) = (self.source.sum(), self.target.sum());
        if (a - 1.0).abs() > MARGINAL_SUM_TOLERANCE || (b - 1.0).abs() > MARGINAL_SUM_TOLERANCE {
            return Err(FotError::Validity(format!("marginals must each sum to 1 (got {a}, {b})")));
        }
        Ok(())
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.source * self.target.transpose()
    }
}

/// A nonnegative coupling together with its solve report.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    pub marginals: Marginals,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Objective sampled during the solve: the negative dual every
    /// `record_every` Sinkhorn iterations, the primal objective after every
    /// dual update of the Lagrangian solver.
    pub objective_trace: Vec<f64>,
    /// Marginal residual after every dual update (Lagrangian solver only).
    pub residual_trace: Vec<f64>,
    /// Dual potentials `(f, g)` in cost units when available.
    pub potentials: Option<(DVector<f64>, DVector<f64>)>,
}

impl TransportPlan {
    pub fn from_matrix(plan: DMatrix<f64>, marginals: Marginals) -> Self {
        let residual = marginal_residual(&plan, &marginals);
        Self {
            plan,
            marginals,
            iterations: 0,
            residual,
            converged: true,
            objective_trace: Vec::new(),
            residual_trace: Vec::new(),
            potentials: None,
        }
    }

    pub fn product(marginals: &Marginals) -> Self {
        Self::from_matrix(marginals.product(), marginals.clone())
    }

    pub fn marginal_residual(&self) -> f64 {
        marginal_residual(&self.plan, &self.marginals)
    }

    pub fn transport_cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.plan.component_mul(cost).sum()
    }

    /// Writes `l,k,pi` rows for heat-map plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "l,k,pi")?;
        for l in 0..self.plan.nrows() {
            for k in 0..self.plan.ncols() {
                writeln!(out, "{l},{k},{}", self.plan[(l, k)])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `max(‖π1 − p‖∞, ‖πᵀ1 − q‖∞)`.
pub fn marginal_residual(plan: &DMatrix<f64>, marginals: &Marginals) -> f64 {
    let rows = plan.column_sum();
    let cols = plan.row_sum();
    let r = (rows - &marginals.source).amax();
    let c = (cols.transpose() - &marginals.target).amax();
    r.max(c)
}

/// `Σ C π + γ_h Σ π log π + γ_p Σ π^p`, with `0 log 0 = 0`.
pub fn coupling_objective(cost: &DMatrix<f64>, plan: &DMatrix<f64>, gamma_h: f64, gamma_p: f64, p: f64) -> f64 {
    let transport = plan.component_mul(cost).sum();
    transport + gamma_h * entropy_term(plan) + gamma_p * power_term(plan, p)
}

pub fn entropy_term(plan: &DMatrix<f64>) -> f64 {
    plan.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum()
}

pub fn power_term(plan: &DMatrix<f64>, p: f64) -> f64 {
    plan.iter().map(|&v| v.max(0.0).powf(p)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornMode {
    #[default]
    Log,
    /// Direct scaling of the Gibbs kernel `exp(−C/γ)`; fails on underflow.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornOptions {
    pub max_iters: usize,
    pub tolerance: f64,
    pub mode: SinkhornMode,
    /// Record the primal objective every this many iterations (0 = never).
    pub record_every: usize,
    /// Periodically polish the log-domain iterate with Newton steps on the
    /// dual; speeds up convergence when the plan is close to a permutation.
    pub newton_polish: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { max_iters: 10_000, tolerance: 1e-9, mode: SinkhornMode::Log, record_every: 0, newton_polish: true }
    }
}

fn check_inputs(cost: &DMatrix<f64>, gamma: f64, marginals: &Marginals) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(FotError::Parameter(format!("entropy weight must be positive, got {gamma}")));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(FotError::NonFinite("cost matrix".into()));
    }
    if cost.nrows() != marginals.source.len() || cost.ncols() != marginals.target.len() {
        return Err(FotError::Dimension(format!(
            "cost matrix is {}x{} but marginals have lengths {} and {}",
            cost.nrows(),
            cost.ncols(),
            marginals.source.len(),
            marginals.target.len()
        )));
    }
    marginals.validate()
}

pub fn sinkhorn(cost: &DMatrix<f64>, gamma: f64, marginals: &Marginals, opts: &SinkhornOptions) -> Result<TransportPlan> {
    sinkhorn_warm(cost, gamma, marginals, opts, None)
}

/// Sinkhorn iteration, optionally warm-started from dual potentials.
pub fn sinkhorn_warm(
    cost: &DMatrix<f64>,
    gamma: f64,
    marginals: &Marginals,
    opts: &SinkhornOptions,
    init: Option<&(DVector<f64>, DVector<f64>)>,
) -> Result<TransportPlan> {
    check_inputs(cost, gamma, marginals)?;
    match opts.mode {
        SinkhornMode::Log => sinkhorn_log(cost, gamma, marginals, opts, init),
        SinkhornMode::Naive => sinkhorn_naive(cost, gamma, marginals, opts),
    }
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn gibbs_plan(cost: &DMatrix<f64>, gamma: f64, f: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(cost.nrows(), cost.ncols(), |l, k| ((f[l] + g[k] - cost[(l, k)]) / gamma).exp())
}

/// Scaling sweeps between Newton polishing attempts.
const POLISH_AFTER: usize = 50;

/// Newton iterations on the dual `Σ p f + Σ q g − γ Σ exp((f + g − C)/γ)`.
/// The Hessian `[diag(π1) π; πᵀ diag(πᵀ1)] / γ` is singular along
/// `(1, −1)`, so the last target potential is held fixed. Returns the number
/// of steps taken and whether the tolerance was reached; the potentials are
/// only ever replaced by ones with a smaller marginal residual.
fn newton_polish(
    cost: &DMatrix<f64>,
    gamma: f64,
    marginals: &Marginals,
    f: &mut DVector<f64>,
    g: &mut DVector<f64>,
    tolerance: f64,
    max_steps: usize,
) -> (usize, bool) {
    let (n1, n2) = cost.shape();
    let dim = n1 + n2 - 1;
    let mut plan = gibbs_plan(cost, gamma, f, g);
    let mut residual = marginal_residual(&plan, marginals);
    let mut steps = 0;
    while steps < max_steps.min(30) {
        if residual <= tolerance {
            return (steps, true);
        }
        steps += 1;
        let rows = plan.column_sum();
        let cols = plan.row_sum();
        let mut hessian = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for l in 0..n1 {
            hessian[(l, l)] = rows[l];
            rhs[l] = gamma * (marginals.source[l] - rows[l]);
            for k in 0..n2 - 1 {
                hessian[(l, n1 + k)] = plan[(l, k)];
                hessian[(n1 + k, l)] = plan[(l, k)];
            }
        }
        for k in 0..n2 - 1 {
            hessian[(n1 + k, n1 + k)] = cols[k];
            rhs[n1 + k] = gamma * (marginals.target[k] - cols[k]);
        }
        // near-permutation plans leave the support graph almost disconnected;
        // a small ridge keeps the step finite along the resulting null directions
        let ridge = 1e-10 * hessian.diagonal().max();
        for i in 0..dim {
            hessian[(i, i)] += ridge;
        }
        let Some(chol) = hessian.cholesky() else {
            return (steps, false);
        };
        let delta = chol.solve(&rhs);
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let f_new = DVector::from_fn(n1, |l, _| f[l] + step * delta[l]);
            let g_new = DVector::from_fn(n2, |k, _| if k + 1 < n2 { g[k] + step * delta[n1 + k] } else { g[k] });
            let plan_new = gibbs_plan(cost, gamma, &f_new, &g_new);
            let r = marginal_residual(&plan_new, marginals);
            if r.is_finite() && r < residual {
                *f = f_new;
                *g = g_new;
                plan = plan_new;
                residual = r;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            return (steps, false);
        }
    }
    (steps, residual <= tolerance)
}

/// `−(⟨f, p⟩ + ⟨g, q⟩ − γ Σ π + γ)` for the plan `π = exp((f ⊕ g − C)/γ)` of
/// total `mass`. Sinkhorn minimizes it by exact block steps, and at the
/// solution it equals minus the entropic primal objective.
fn negative_dual(f: &DVector<f64>, g: &DVector<f64>, mass: f64, marginals: &Marginals, gamma: f64) -> f64 {
    let pair = |pot: &DVector<f64>, m: &DVector<f64>| -> f64 {
        pot.iter().zip(m.iter()).filter(|(_, &w)| w > 0.0).map(|(a, w)| a * w).sum()
    };
    -(pair(f, &marginals.source) + pair(g, &marginals.target) - gamma * mass + gamma)
}

fn absorb(potential: &mut DVector<f64>, scaling: &DVector<f64>, gamma: f64) {
    for (f, s) in potential.iter_mut().zip(scaling.iter()) {
        *f += gamma * s.ln();
    }
}

fn sinkhorn_log(
    cost: &DMatrix<f64>,
    gamma: f64,
    marginals: &Marginals,
    opts: &SinkhornOptions,
    init: Option<&(DVector<f64>, DVector<f64>)>,
) -> Result<TransportPlan> {
    let (n1, n2) = cost.shape();
    let log_p: Vec<f64> = marginals.source.iter().map(|v| v.ln()).collect();
    let log_q: Vec<f64> = marginals.target.iter().map(|v| v.ln()).collect();
    let (mut f, mut g) = match init {
        Some((f0, g0)) if f0.len() == n1 && g0.len() == n2 && f0.iter().chain(g0.iter()).all(|v| v.is_finite()) => {
            (f0.clone(), g0.clone())
        }
        _ => (DVector::zeros(n1), DVector::zeros(n2)),
    };

    let p = &marginals.source;
    let q = &marginals.target;
    let lse_sweep = |f: &mut DVector<f64>, g: &mut DVector<f64>| {
        for l in 0..n1 {
            f[l] = if log_p[l] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                gamma * (log_p[l] - log_sum_exp((0..n2).map(|k| (g[k] - cost[(l, k)]) / gamma)))
            };
        }
        for k in 0..n2 {
            g[k] = if log_q[k] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                gamma * (log_q[k] - log_sum_exp((0..n1).map(|l| (f[l] - cost[(l, k)]) / gamma)))
            };
        }
    };

    // One exact log-sum-exp sweep puts the potentials on the right scale.
    // After that the iteration scales the kernel exp((f + g − C)/γ) by u, v
    // and folds u, v back into the potentials whenever they drift far from 1.
    lse_sweep(&mut f, &mut g);
    let mut iterations = 1;
    let mut kernel = gibbs_plan(cost, gamma, &f, &g);
    let mut u = DVector::from_element(n1, 1.0);
    let mut v = DVector::from_element(n2, 1.0);
    let mut trace = Vec::new();
    let max_iters = opts.max_iters.max(1);
    let polish = opts.newton_polish && p.iter().chain(q.iter()).all(|&x| x > 0.0);
    let mut last_polish = 0;
    loop {
        let kv = &kernel * &v;
        let residual = (0..n1).map(|l| (u[l] * kv[l] - p[l]).abs()).fold(0.0, f64::max);
        if opts.record_every > 0 && iterations % opts.record_every == 0 {
            let mass = u.dot(&kv);
            let fu = DVector::from_fn(n1, |l, _| f[l] + gamma * u[l].ln());
            let gv = DVector::from_fn(n2, |k, _| g[k] + gamma * v[k].ln());
            trace.push(negative_dual(&fu, &gv, mass, marginals, gamma));
        }
        if residual <= opts.tolerance || iterations >= max_iters {
            break;
        }
        if polish && iterations - last_polish >= POLISH_AFTER {
            absorb(&mut f, &u, gamma);
            absorb(&mut g, &v, gamma);
            u.fill(1.0);
            v.fill(1.0);
            let (steps, done) = newton_polish(cost, gamma, marginals, &mut f, &mut g, opts.tolerance, max_iters - iterations);
            iterations += steps;
            last_polish = iterations;
            kernel = gibbs_plan(cost, gamma, &f, &g);
            if done {
                break;
            }
            continue;
        }
        iterations += 1;
        for l in 0..n1 {
            u[l] = if p[l] > 0.0 { p[l] / kv[l] } else { 0.0 };
        }
        let ktu = kernel.tr_mul(&u);
        for k in 0..n2 {
            v[k] = if q[k] > 0.0 { q[k] / ktu[k] } else { 0.0 };
        }
        let finite = u.iter().chain(v.iter()).all(|x| x.is_finite());
        if !finite {
            // part of the kernel underflowed; restart the scaling from an exact sweep
            lse_sweep(&mut f, &mut g);
        } else if u.iter().chain(v.iter()).any(|&x| x > 1e50 || (x > 0.0 && x < 1e-50)) {
            absorb(&mut f, &u, gamma);
            absorb(&mut g, &v, gamma);
        } else {
            continue;
        }
        kernel = gibbs_plan(cost, gamma, &f, &g);
        u.fill(1.0);
        v.fill(1.0);
    }
    absorb(&mut f, &u, gamma);
    absorb(&mut g, &v, gamma);
    let plan = gibbs_plan(cost, gamma, &f, &g);
    let residual = marginal_residual(&plan, marginals);
    // potentials of zero-mass rows/columns are -inf; keep them out of warm starts
    let potentials = if f.iter().chain(g.iter()).all(|v| v.is_finite()) { Some((f, g)) } else { None };
    Ok(TransportPlan {
        plan,
        marginals: marginals.clone(),
        iterations,
        residual,
        converged: residual <= opts.tolerance,
        objective_trace: trace,
        residual_trace: Vec::new(),
        potentials,
    })
}

fn sinkhorn_naive(cost: &DMatrix<f64>, gamma: f64, marginals: &Marginals, opts: &SinkhornOptions) -> Result<TransportPlan> {
    let (n1, n2) = cost.shape();
    let kernel = cost.map(|c| (-c / gamma).exp());
    let underflow = || {
        FotError::NonFinite(format!(
            "Gibbs kernel underflow at entropy weight {gamma:e}; use the log-domain solver"
        ))
    };
    let mut u = DVector::from_element(n1, 1.0);
    let mut v = DVector::from_element(n2, 1.0 / n2 as f64);
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut plan = DMatrix::zeros(n1, n2);
    for it in 1..=opts.max_iters.max(1) {
        iterations = it;
        let kv = &kernel * &v;
        for l in 0..n1 {
            if kv[l] <= 0.0 && marginals.source[l] > 0.0 {
                return Err(underflow());
            }
            u[l] = if marginals.source[l] > 0.0 { marginals.source[l] / kv[l] } else { 0.0 };
        }
        let ktu = kernel.transpose() * &u;
        for k in 0..n2 {
            if ktu[k] <= 0.0 && marginals.target[k] > 0.0 {
                return Err(underflow());
            }
            v[k] = if marginals.target[k] > 0.0 { marginals.target[k] / ktu[k] } else { 0.0 };
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(underflow());
        }
        plan = DMatrix::from_fn(n1, n2, |l, k| u[l] * kernel[(l, k)] * v[k]);
        residual = marginal_residual(&plan, marginals);
        if opts.record_every > 0 && it % opts.record_every == 0 {
            let fu = u.map(|x| gamma * x.ln());
            let gv = v.map(|x| gamma * x.ln());
            trace.push(negative_dual(&fu, &gv, plan.sum(), marginals, gamma));
        }
        if residual <= opts.tolerance {
            break;
        }
    }
    let potentials = if u.iter().chain(v.iter()).all(|x| *x > 0.0) {
        Some((u.map(|x| gamma * x.ln()), v.map(|x| gamma * x.ln())))
    } else {
        None
    };
    Ok(TransportPlan {
        plan,
        marginals: marginals.clone(),
        iterations,
        residual,
        converged: residual <= opts.tolerance,
        objective_trace: trace,
        residual_trace: Vec::new(),
        potentials,
    })
}

/// Log-domain Sinkhorn with entropy annealing: the weight starts at the cost
/// range and is halved down to `gamma`, warm-starting each stage. Intended
/// for near-unregularized problems where a cold start converges slowly.
pub fn sinkhorn_annealed(cost: &DMatrix<f64>, gamma: f64, marginals: &Marginals, opts: &SinkhornOptions) -> Result<TransportPlan> {
    check_inputs(cost, gamma, marginals)?;
    let range = cost.max() - cost.min();
    let mut stage_gamma = range.max(gamma);
    let mut potentials: Option<(DVector<f64>, DVector<f64>)> = None;
    let stage_opts = SinkhornOptions { max_iters: 2_000, tolerance: 1e-6, mode: SinkhornMode::Log, ..Default::default() };
    while stage_gamma > 2.0 * gamma {
        let plan = sinkhorn_warm(cost, stage_gamma, marginals, &stage_opts, potentials.as_ref())?;
        potentials = plan.potentials;
        stage_gamma *= 0.5;
    }
    let final_opts = SinkhornOptions { mode: SinkhornMode::Log, ..*opts };
    sinkhorn_warm(cost, gamma, marginals, &final_opts, potentials.as_ref())
}

/// Inner primal step rule for the augmented Lagrangian solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimalStep {
    /// Multiplicative update `π ← π exp(−scale · ∇/D)` where `D` is a
    /// Gershgorin bound on the curvature in log coordinates.
    Preconditioned { scale: f64 },
    /// Euclidean projected gradient `π ← max(π − lr ∇, floor)`.
    Fixed { lr: f64 },
}

impl Default for PrimalStep {
    fn default() -> Self {
        PrimalStep::Preconditioned { scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub gamma_h: f64,
    pub gamma_p: f64,
    pub p: f64,
    /// Dual updates for the Lagrangian solver, iterations for Sinkhorn.
    pub max_iters: usize,
    pub tolerance: f64,
    /// Penalty on the target (column) marginal constraint, `ρ_k`.
    pub rho_target: f64,
    /// Penalty on the source (row) marginal constraint, `ρ_l`.
    pub rho_source: f64,
    /// Penalty on the slack constraint `π = s`, `ρ_lk`; also its dual step.
    pub rho_slack: f64,
    pub primal_step: PrimalStep,
    pub inner_iters: usize,
    /// Dual updates over which residual growth signals divergence.
    pub divergence_window: usize,
    pub sinkhorn_mode: SinkhornMode,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            gamma_h: 20.0,
            gamma_p: 0.0,
            p: 2.0,
            max_iters: 10_000,
            tolerance: 1e-9,
            rho_target: 800.0,
            rho_source: 800.0,
            rho_slack: 800.0,
            primal_step: PrimalStep::default(),
            inner_iters: 200,
            divergence_window: 50,
            sinkhorn_mode: SinkhornMode::Log,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_h > 0.0 && self.gamma_h.is_finite()) {
            return Err(FotError::Parameter("gamma_h must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(FotError::Parameter("tolerance must be positive".into()));
        }
        if !(self.p >= 1.0) {
            return Err(FotError::Parameter("power p must be at least 1".into()));
        }
        if !self.gamma_p.is_finite() {
            return Err(FotError::Parameter("gamma_p must be finite".into()));
        }
        for (name, v) in [("rho_target", self.rho_target), ("rho_source", self.rho_source), ("rho_slack", self.rho_slack)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FotError::Parameter(format!("{name} must be positive")));
            }
        }
        match self.primal_step {
            PrimalStep::Preconditioned { scale } if !(scale > 0.0 && scale <= 1.0) => {
                Err(FotError::Parameter("preconditioned step scale must lie in (0, 1]".into()))
            }
            PrimalStep::Fixed { lr } if !(lr > 0.0) => Err(FotError::Parameter("primal lr must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn sinkhorn_options(&self) -> SinkhornOptions {
        SinkhornOptions { max_iters: self.max_iters, tolerance: self.tolerance, mode: self.sinkhorn_mode, ..Default::default() }
    }
}

/// Augmented-Lagrangian coupling for `Σ Cπ + γ_h Σ π log π + γ_p Σ π^p`.
pub fn lagrangian_coupling(cost: &DMatrix<f64>, marginals: &Marginals, config: &CouplingConfig) -> Result<TransportPlan> {
    config.validate()?;
    check_inputs(cost, config.gamma_h, marginals)?;
    static NEGATIVE_POWER_WARNING: std::sync::Once = std::sync::Once::new();
    if config.gamma_p < 0.0 {
        NEGATIVE_POWER_WARNING.call_once(|| log::warn!(
            "gamma_p = {} is negative; the power term rewards mass concentration and is bounded only by the marginal constraints",
            config.gamma_p
        ));
    }
    let (n1, n2) = cost.shape();
    let floor = 1e-300_f64;
    let p = &marginals.source;
    let q = &marginals.target;
    let mut pi = marginals.product().map(|v| v.max(floor));
    let mut dual_row = DVector::<f64>::zeros(n1);
    let mut dual_col = DVector::<f64>::zeros(n2);
    let mut dual_slack = DMatrix::<f64>::zeros(n1, n2);
    let mut slack = pi.clone();

    let mut residual_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut residual = marginal_residual(&pi, marginals);
    let mut iterations = 0;
    let mut converged = false;

    for t in 1..=config.max_iters.max(1) {
        iterations = t;
        for _ in 0..config.inner_iters.max(1) {
            // the minimizer over s ≥ 0 is available in closed form
            slack = (&pi + &dual_slack / config.rho_slack).map(|v| v.max(0.0));
            let rows = pi.column_sum();
            let cols = pi.row_sum();
            let grad = DMatrix::from_fn(n1, n2, |l, k| {
                let v = pi[(l, k)];
                cost[(l, k)]
                    + config.gamma_h * (v.ln() + 1.0)
                    + config.gamma_p * config.p * v.powf(config.p - 1.0)
                    + dual_row[l]
                    + dual_col[k]
                    + config.rho_source * (rows[l] - p[l])
                    + config.rho_target * (cols[k] - q[k])
                    + dual_slack[(l, k)]
                    + config.rho_slack * (v - slack[(l, k)])
            });
            match config.primal_step {
                PrimalStep::Preconditioned { scale } => {
                    for l in 0..n1 {
                        for k in 0..n2 {
                            let v = pi[(l, k)];
                            let curvature = config.gamma_h
                                + config.rho_source * rows[l]
                                + config.rho_target * cols[k]
                                + config.rho_slack * v
                                + config.gamma_p.abs() * config.p * (config.p - 1.0).abs() * v.powf(config.p - 1.0);
                            let step = (scale * grad[(l, k)] / curvature).clamp(-1.0, 1.0);
                            pi[(l, k)] = (v * (-step).exp()).max(floor);
                        }
                    }
                }
                PrimalStep::Fixed { lr } => {
                    let lower = 1e-12 / (n1 * n2) as f64;
                    pi.zip_apply(&grad, |v, g| *v = (*v - lr * g).max(lower));
                }
            }
            if pi.iter().any(|v| !v.is_finite()) {
                return Err(FotError::Convergence {
                    message: "non-finite coupling in primal step".into(),
                    iterations: t,
                    residual,
                    residual_trace,
                });
            }
        }

        let rows = pi.column_sum();
        let cols = pi.row_sum();
        dual_col += (cols.transpose() - q) * config.rho_target;
        dual_row += (&rows - p) * config.rho_source;
        dual_slack += (&pi - &slack) * config.rho_slack;

        residual = marginal_residual(&pi, marginals);
        residual_trace.push(residual);
        objective_trace.push(coupling_objective(cost, &pi, config.gamma_h, config.gamma_p, config.p));
        if residual <= config.tolerance {
            converged = true;
            break;
        }
        let w = config.divergence_window;
        if w > 0 && residual_trace.len() > w {
            let earlier = residual_trace[residual_trace.len() - 1 - w];
            if !residual.is_finite() || residual > 10.0 * earlier.max(config.tolerance) {
                return Err(FotError::Convergence {
                    message: format!("marginal residual grew from {earlier:e} over {w} dual updates"),
                    iterations: t,
                    residual,
                    residual_trace,
                });
            }
        }
    }

    Ok(TransportPlan {
        plan: pi,
        marginals: marginals.clone(),
        iterations,
        residual,
        converged,
        objective_trace,
        residual_trace,
        potentials: Some((-dual_row, -dual_col)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts() -> SinkhornOptions {
        SinkhornOptions::default()
    }

    #[test]
    fn zero_cost_gives_product_plan() {
        let m = Marginals::uniform(4, 4);
        let plan = sinkhorn(&DMatrix::zeros(4, 4), 1.0, &m, &opts()).unwrap();
        assert!(plan.plan.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn single_point_plan_is_forced() {
        let m = Marginals::uniform(1, 1);
        let plan = sinkhorn(&DMatrix::from_element(1, 1, 123.0), 0.01, &m, &opts()).unwrap();
        assert_abs_diff_eq!(plan.plan[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_by_two_approaches_permutation() {
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let plan = sinkhorn(&c, 0.05, &Marginals::uniform(2, 2), &opts()).unwrap();
        assert_abs_diff_eq!(plan.plan[(0, 0)], 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(plan.plan[(1, 1)], 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(plan.plan[(0, 1)], 0.0, epsilon = 1e-3);
    }

    #[test]
    fn naive_underflow_is_reported() {
        let c = DMatrix::from_row_slice(2, 2, &[1e4, 2e4, 3e4, 1e4]);
        let naive = SinkhornOptions { mode: SinkhornMode::Naive, ..opts() };
        assert!(matches!(sinkhorn(&c, 1.0, &Marginals::uniform(2, 2), &naive), Err(FotError::NonFinite(_))));
        assert!(sinkhorn(&c, 1.0, &Marginals::uniform(2, 2), &opts()).unwrap().converged);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 1)] = f64::NAN;
        assert!(matches!(sinkhorn(&c, 1.0, &Marginals::uniform(2, 2), &opts()), Err(FotError::NonFinite(_))));
        assert!(sinkhorn(&DMatrix::zeros(2, 2), 0.0, &Marginals::uniform(2, 2), &opts()).is_err());
        assert!(sinkhorn(&DMatrix::zeros(2, 3), 1.0, &Marginals::uniform(2, 2), &opts()).is_err());
    }

    #[test]
    fn log_and_naive_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (n1, n2) = (rng.random_range(2..8), rng.random_range(2..8));
            let c = DMatrix::from_fn(n1, n2, |_, _| rng.random::<f64>());
            let m = Marginals::uniform(n1, n2);
            let tight = SinkhornOptions { tolerance: 1e-14, ..opts() };
            let a = sinkhorn(&c, 0.2, &m, &tight).unwrap();
            let b = sinkhorn(&c, 0.2, &m, &SinkhornOptions { mode: SinkhornMode::Naive, ..tight }).unwrap();
            assert!((a.plan - b.plan).amax() < 1e-8);
        }
    }

    #[test]
    fn nonuniform_marginals_respected() {
        let m = Marginals::new(DVector::from_vec(vec![0.2, 0.8]), DVector::from_vec(vec![0.5, 0.25, 0.25])).unwrap();
        let c = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 2.0, 1.0, 0.0]);
        let plan = sinkhorn(&c, 0.1, &m, &opts()).unwrap();
        assert!(plan.marginal_residual() < 1e-9);
        assert!(Marginals::new(DVector::from_vec(vec![0.5, 0.6]), DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn large_entropy_gives_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = DMatrix::from_fn(6, 5, |_, _| rng.random::<f64>() * 3.0);
        let m = Marginals::uniform(6, 5);
        let plan = sinkhorn(&c, 1e3 * c.max(), &m, &opts()).unwrap();
        assert!((plan.plan - m.product()).amax() < 1e-3);
    }

    #[test]
    fn annealed_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = DMatrix::from_fn(7, 7, |_, _| rng.random::<f64>());
        let m = Marginals::uniform(7, 7);
        let tight = SinkhornOptions { tolerance: 1e-12, max_iters: 200_000, ..opts() };
        let a = sinkhorn(&c, 0.01, &m, &tight).unwrap();
        let b = sinkhorn_annealed(&c, 0.01, &m, &tight).unwrap();
        assert!((a.plan - b.plan).amax() < 1e-8);
    }

    #[test]
    fn objective_examples() {
        let uniform = DMatrix::from_element(2, 2, 0.25);
        assert_abs_diff_eq!(
            coupling_objective(&DMatrix::zeros(2, 2), &uniform, 1.0, 0.0, 1.0),
            (0.25f64).ln(),
            epsilon = 1e-15
        );
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let diag = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(coupling_objective(&c, &diag, 0.0, 0.0, 2.0), 0.0);
        assert_eq!(coupling_objective(&c, &uniform, 0.0, 0.0, 2.0), 0.5);
        // 0 log 0 contributes nothing
        assert!(coupling_objective(&c, &diag, 1.0, 0.0, 2.0).is_finite());
    }

    #[test]
    fn lagrangian_matches_sinkhorn_without_power_term() {
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let m = Marginals::uniform(2, 2);
        let config = CouplingConfig { gamma_h: 0.05, gamma_p: 0.0, tolerance: 1e-9, ..Default::default() };
        let alm = lagrangian_coupling(&c, &m, &config).unwrap();
        let sk = sinkhorn(&c, 0.05, &m, &opts()).unwrap();
        assert!((alm.plan - sk.plan).amax() < 1e-3);
    }

    #[test]
    fn lagrangian_zero_cost_power_term_is_uniform() {
        let m = Marginals::uniform(3, 3);
        let config = CouplingConfig { gamma_h: 0.5, gamma_p: 2.0, p: 2.0, ..Default::default() };
        let plan = lagrangian_coupling(&DMatrix::zeros(3, 3), &m, &config).unwrap();
        assert!((plan.plan - m.product()).amax() < 1e-8);
    }

    #[test]
    fn lagrangian_residuals_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>());
        let m = Marginals::uniform(5, 5);
        let config = CouplingConfig { gamma_h: 0.1, gamma_p: 0.5, p: 2.0, tolerance: 1e-10, ..Default::default() };
        let plan = lagrangian_coupling(&c, &m, &config).unwrap();
        assert!(plan.converged, "residual trace {:?}", plan.residual_trace);
        let burn_in = 3.min(plan.residual_trace.len());
        for w in plan.residual_trace[burn_in..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", plan.residual_trace);
        }
    }

    #[test]
    fn lagrangian_handles_negative_power_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>());
        let m = Marginals::uniform(4, 4);
        let config = CouplingConfig { gamma_h: 0.5, gamma_p: -1.0, p: 3.0, ..Default::default() };
        let plan = lagrangian_coupling(&c, &m, &config).unwrap();
        assert!(plan.plan.iter().all(|&v| v >= 0.0));
        assert!(plan.marginal_residual() < 1e-6);
    }

    #[test]
    fn plan_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        TransportPlan::product(&Marginals::uniform(2, 1)).write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "l,k,pi\n0,0,0.5\n1,0,0.5\n");
    }
}
