//! The outer Bregman iteration for `min ½‖Su − z‖²` over the box, with the
//! regularizer `J(u) = ½‖u‖² + I_{U_ad}(u)`.
//!
//! Each step solves
//!
//! ```text
//! u_k = argmin_{u ∈ U_ad} ½‖Su − z − α_k μ_{k−1}‖² + (α_k/2)‖u‖²
//! μ_k = μ_{k−1} + (z − S u_k)/α_k,      λ_k = S*μ_k ∈ ∂J(u_k)
//! ```
//!
//! The Bregman-distance form (objective `½‖Su − z‖² + α_k D^{λ_{k−1}}(u, u_{k−1})`,
//! with `λ` updated by its own recursion) is kept for cross-checking, and the
//! proximal point method (`J = ½‖·‖²`) is available as a comparison mode.

use std::sync::Arc;
use std::time::Instant;

use crate::constraints::{default_theta, BoxConstraints};
use crate::diagnostics::{bregman_distance_raw, record_metrics, MetricRow, ReferenceSolution};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::{LinearMap, Operator};
use crate::subproblem::{
    solve_pdas, solve_projected_gradient, QuadSubproblem, SubproblemSolution, DEFAULT_PDAS_MAX_ITERS,
    DEFAULT_PG_MAX_ITERS, DEFAULT_TOL,
};

/// Regularization parameters `α_k`, `k ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `α_k = c_α k^{−s}`
    Polynomial {
        c_alpha: f64,
        s: f64,
    },
    /// Listed values; the last one is held once the list runs out.
    Explicit(Vec<f64>),
}

fn check_alpha(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSchedule(format!("{what} must be positive and finite, got {v}")))
    }
}

impl Schedule {
    pub fn constant(alpha: f64) -> Result<Self> {
        check_alpha("alpha", alpha)?;
        Ok(Schedule::Constant(alpha))
    }

    pub fn polynomial(c_alpha: f64, s: f64) -> Result<Self> {
        check_alpha("c_alpha", c_alpha)?;
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidSchedule(format!("exponent s must be >= 0, got {s}")));
        }
        Ok(Schedule::Polynomial { c_alpha, s })
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSchedule("explicit schedule is empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            check_alpha(&format!("alpha[{i}]"), *v)?;
        }
        Ok(Schedule::Explicit(values))
    }

    /// `α_k` for `k ≥ 1`.
    pub fn alpha(&self, k: usize) -> f64 {
        let k = k.max(1);
        match self {
            Schedule::Constant(a) => *a,
            Schedule::Polynomial { c_alpha, s } => c_alpha * (k as f64).powf(-s),
            Schedule::Explicit(v) => v[(k - 1).min(v.len() - 1)],
        }
    }
}

/// `min ½‖Su − z‖²_Y` over `U_ad`, optionally with a known solution.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub op: Arc<Operator>,
    pub z: GridFunction,
    pub bounds: BoxConstraints,
    pub reference: Option<ReferenceSolution>,
}

impl ProblemInstance {
    pub fn new(op: Arc<Operator>, z: GridFunction, bounds: BoxConstraints) -> Result<Self> {
        z.check_on(op.range(), "ProblemInstance z")?;
        bounds.lower().check_on(op.domain(), "ProblemInstance bounds")?;
        Ok(Self { op, z, bounds, reference: None })
    }

    pub fn with_reference(mut self, reference: ReferenceSolution) -> Result<Self> {
        reference.u_dagger.check_on(self.op.domain(), "reference u†")?;
        reference.p_dagger.check_on(self.op.domain(), "reference p†")?;
        reference.y_dagger.check_on(self.op.range(), "reference y†")?;
        self.reference = Some(reference);
        Ok(self)
    }

    /// `Θ = 1/‖S‖²` from the cached norm estimate.
    pub fn default_theta(&self) -> f64 {
        default_theta(self.op.norm_estimate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubSolver {
    ProjectedGradient,
    Pdas,
}

impl SubSolver {
    pub fn as_str(self) -> &'static str {
        match self {
            SubSolver::ProjectedGradient => "pg",
            SubSolver::Pdas => "pdas",
        }
    }
}

impl std::str::FromStr for SubSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg" => Ok(SubSolver::ProjectedGradient),
            "pdas" => Ok(SubSolver::Pdas),
            other => Err(Error::Parse(format!("unknown solver '{other}' (expected pg or pdas)"))),
        }
    }
}

/// Which equivalent subproblem is solved in a Bregman step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemForm {
    /// Shifted target `z + α μ`; `λ = S*μ`.
    ShiftedTarget,
    /// Bregman distance to the previous iterate; `λ` updated by its own recursion.
    BregmanDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub solver: SubSolver,
    pub tol: f64,
    pub pg_max_iters: usize,
    pub pdas_max_iters: usize,
    /// Retry with projected gradient when PDAS fails to converge.
    pub fallback_to_pg: bool,
    pub form: SubproblemForm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: SubSolver::Pdas,
            tol: DEFAULT_TOL,
            pg_max_iters: DEFAULT_PG_MAX_ITERS,
            pdas_max_iters: DEFAULT_PDAS_MAX_ITERS,
            fallback_to_pg: true,
            form: SubproblemForm::ShiftedTarget,
        }
    }
}

impl SolverConfig {
    pub fn with_solver(mut self, solver: SubSolver) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_form(mut self, form: SubproblemForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn solve(&self, sub: &QuadSubproblem<'_>, start: Option<&GridFunction>) -> Result<SubproblemSolution> {
        match self.solver {
            SubSolver::ProjectedGradient => solve_projected_gradient(sub, self.tol, self.pg_max_iters, start),
            SubSolver::Pdas => match solve_pdas(sub, self.tol, self.pdas_max_iters, start) {
                Err(e) if self.fallback_to_pg && e.is_non_convergence() => {
                    solve_projected_gradient(sub, self.tol, self.pg_max_iters, start)
                }
                other => other,
            },
        }
    }
}

/// Stopping rule: stationarity residual `≤ ε` (with step `Θ`) or `k = k_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub epsilon: Option<f64>,
    pub k_max: usize,
    /// `None` selects `1/‖S‖²`.
    pub theta: Option<f64>,
}

impl StopRule {
    pub const DEFAULT_K_MAX: usize = 10_000;

    /// `ε = 10⁻⁸‖z‖`, `k_max = 10⁴`, automatic `Θ`.
    pub fn default_for(p: &ProblemInstance) -> Self {
        Self { epsilon: Some(1e-8 * p.z.norm()), k_max: Self::DEFAULT_K_MAX, theta: None }
    }

    pub fn max_iterations(k_max: usize) -> Self {
        Self { epsilon: None, k_max, theta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationMode {
    Bregman,
    Ppm,
}

impl IterationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IterationMode::Bregman => "bregman",
            IterationMode::Ppm => "ppm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BregmanState {
    pub k: usize,
    pub u: GridFunction,
    /// Dual accumulator `μ_k` on the range grid.
    pub mu: GridFunction,
    /// Subgradient `λ_k ∈ ∂J(u_k)`; equals `u_k` in PPM mode.
    pub lambda: GridFunction,
    pub gamma: f64,
    /// `α_k` of the last step (0 before the first step).
    pub alpha: f64,
    /// `v_k = Σ (1/α_i) S(u† − u_i)`, tracked when a reference is available.
    pub v: Option<GridFunction>,
    pub mode: IterationMode,
    pub history: Vec<MetricRow>,
}

/// `u_0 = P(0)`, `μ_0 = 0`, `λ_0 = 0`, `γ_0 = 0`.
pub fn init_state(p: &ProblemInstance) -> BregmanState {
    let domain = p.op.domain().clone();
    let u = p.bounds.project_unchecked(&GridFunction::zeros(domain.clone()));
    BregmanState {
        k: 0,
        u,
        mu: GridFunction::zeros(p.op.range().clone()),
        lambda: GridFunction::zeros(domain),
        gamma: 0.0,
        alpha: 0.0,
        v: p.reference.as_ref().map(|_| GridFunction::zeros(p.op.range().clone())),
        mode: IterationMode::Bregman,
        history: Vec::new(),
    }
}

/// Starts from `u_0` with multiplier `μ_0`, so that `λ_0 = S*μ_0`. Requires
/// `u_0 = P_{U_ad}(λ_0)`, i.e. `λ_0 ∈ ∂J(u_0)`.
pub fn init_state_seeded(p: &ProblemInstance, u0: &GridFunction, mu0: &GridFunction) -> Result<BregmanState> {
    u0.check_on(p.op.domain(), "init_state_seeded u0")?;
    let lambda = p.op.apply_adjoint(mu0)?;
    let tol = p.bounds.default_tol();
    let consistency = u0.distance(&p.bounds.project_unchecked(&lambda));
    if consistency > 1e-8 * (1.0 + u0.norm()) {
        return Err(Error::Precondition(format!(
            "seed multiplier is not a subgradient at u0: ‖u0 − P(S*μ0)‖ = {consistency:.3e}"
        )));
    }
    if !p.bounds.contains(u0, tol) {
        return Err(Error::Precondition("u0 is not admissible".into()));
    }
    let mut state = init_state(p);
    state.u = u0.clone();
    state.mu = mu0.clone();
    state.lambda = lambda;
    Ok(state)
}

fn advance_v(state: &mut BregmanState, p: &ProblemInstance, alpha: f64, su: &GridFunction) {
    if let (Some(v), Some(r)) = (state.v.as_mut(), p.reference.as_ref()) {
        v.add_scaled_mut(1.0 / alpha, &r.y_dagger.sub(su));
    }
}

fn theta_for(p: &ProblemInstance, theta: Option<f64>) -> f64 {
    theta.unwrap_or_else(|| p.default_theta())
}

/// One outer Bregman step.
pub fn step(state: BregmanState, p: &ProblemInstance, schedule: &Schedule, cfg: &SolverConfig) -> Result<BregmanState> {
    step_with_theta(state, p, schedule, cfg, None)
}

fn step_with_theta(
    mut state: BregmanState,
    p: &ProblemInstance,
    schedule: &Schedule,
    cfg: &SolverConfig,
    theta: Option<f64>,
) -> Result<BregmanState> {
    let started = Instant::now();
    let k = state.k + 1;
    let alpha = schedule.alpha(k);
    let wrap = |e: Error| Error::Iteration { k, source: Box::new(e) };

    let sol = match (state.mode, cfg.form) {
        (IterationMode::Bregman, SubproblemForm::ShiftedTarget) => {
            let target = p.z.axpy(alpha, &state.mu);
            let sub = QuadSubproblem::new(&p.op, &target, alpha, &p.bounds).map_err(wrap)?;
            cfg.solve(&sub, Some(&state.u)).map_err(wrap)?
        }
        (IterationMode::Bregman, SubproblemForm::BregmanDistance) => {
            let sub = QuadSubproblem::new(&p.op, &p.z, alpha, &p.bounds)
                .and_then(|s| s.with_shift(&state.lambda))
                .map_err(wrap)?;
            cfg.solve(&sub, Some(&state.u)).map_err(wrap)?
        }
        // ½‖Su − z‖² + α‖u − u_k‖² has quadratic weight 2α and linear shift u_k
        (IterationMode::Ppm, _) => {
            let sub = QuadSubproblem::new(&p.op, &p.z, 2.0 * alpha, &p.bounds)
                .and_then(|s| s.with_shift(&state.u))
                .map_err(wrap)?;
            cfg.solve(&sub, Some(&state.u)).map_err(wrap)?
        }
    };

    let su = p.op.apply(&sol.u)?;
    let residual = p.z.sub(&su);
    match state.mode {
        IterationMode::Bregman => {
            state.mu.add_scaled_mut(1.0 / alpha, &residual);
            state.lambda = match cfg.form {
                SubproblemForm::ShiftedTarget => p.op.apply_adjoint(&state.mu)?,
                SubproblemForm::BregmanDistance => state.lambda.axpy(1.0 / alpha, &p.op.apply_adjoint(&residual)?),
            };
        }
        IterationMode::Ppm => state.lambda = sol.u.clone(),
    }
    state.u = sol.u;
    state.gamma += 1.0 / alpha;
    state.alpha = alpha;
    state.k = k;
    advance_v(&mut state, p, alpha, &su);

    let theta = theta_for(p, theta);
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let row = record_metrics(&state, p, theta, sol.iterations, wall_ms)?;
    state.history.push(row);
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Stationary,
    MaxIterations,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Stationary => "stationary",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: BregmanState,
    pub stop: StopReason,
}

impl RunOutcome {
    pub fn history(&self) -> &[MetricRow] {
        &self.state.history
    }
}

/// Iterates from `state` until the stationarity residual drops to `ε` or `k_max`
/// steps have been taken in total.
pub fn run_from(
    mut state: BregmanState,
    p: &ProblemInstance,
    schedule: &Schedule,
    stop: &StopRule,
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    if let Some(eps) = stop.epsilon {
        if !(eps > 0.0) {
            return Err(Error::Precondition(format!("epsilon must be positive, got {eps}")));
        }
    }
    while state.k < stop.k_max {
        state = step_with_theta(state, p, schedule, cfg, stop.theta)?;
        let stat = state.history.last().map(|r| r.stat_res).unwrap_or(f64::INFINITY);
        if stop.epsilon.is_some_and(|eps| stat <= eps) {
            return Ok(RunOutcome { state, stop: StopReason::Stationary });
        }
    }
    Ok(RunOutcome { state, stop: StopReason::MaxIterations })
}

pub fn run(p: &ProblemInstance, schedule: &Schedule, stop: &StopRule, cfg: &SolverConfig) -> Result<RunOutcome> {
    run_from(init_state(p), p, schedule, stop, cfg)
}

/// Proximal point method: `u_{k+1} = argmin ½‖Su − z‖² + α_{k+1}‖u − u_k‖²`.
pub fn run_ppm(p: &ProblemInstance, schedule: &Schedule, stop: &StopRule, cfg: &SolverConfig) -> Result<RunOutcome> {
    let mut state = init_state(p);
    state.mode = IterationMode::Ppm;
    state.lambda = state.u.clone();
    run_from(state, p, schedule, stop, cfg)
}

/// PPM started from an arbitrary admissible point.
pub fn run_ppm_from(
    p: &ProblemInstance,
    u0: &GridFunction,
    schedule: &Schedule,
    stop: &StopRule,
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    u0.check_on(p.op.domain(), "run_ppm_from u0")?;
    if !p.bounds.contains(u0, p.bounds.default_tol()) {
        return Err(Error::Precondition("u0 is not admissible".into()));
    }
    let mut state = init_state(p);
    state.mode = IterationMode::Ppm;
    state.u = u0.clone();
    state.lambda = u0.clone();
    run_from(state, p, schedule, stop, cfg)
}

/// `D^λ(u, v)` for `J = ½‖·‖² + I_{U_ad}` and `λ = v + w`:
/// `½‖u − v‖² − ⟨u − v, w⟩`, or `+∞` if `u ∉ U_ad`.
///
/// `v` must be admissible and `w` must lie in the normal cone at `v`.
pub fn bregman_distance(bounds: &BoxConstraints, u: &GridFunction, v: &GridFunction, w: &GridFunction) -> Result<f64> {
    let tol = bounds.default_tol();
    let violation = bounds.normal_cone_residual(v, w, tol)?;
    if violation > 1e-8 * (1.0 + w.norm()) {
        return Err(Error::Precondition(format!("w is not in the normal cone at v (violation {violation:.3e})")));
    }
    u.check_same_grid(v, "bregman_distance")?;
    if !bounds.contains(u, tol) {
        return Ok(f64::INFINITY);
    }
    Ok(bregman_distance_raw(u, v, w))
}
