//! The strongly convex box-constrained quadratic solved in every outer iteration:
//!
//! ```text
//! minimize  F(u) = ½‖Su − b‖²_Y + (α/2)‖u‖² − α⟨u, s⟩   over u_a ≤ u ≤ u_b
//! ```
//!
//! With `s = 0` and `b = z + α μ` this is the shifted-target form of the outer
//! iteration; with `b = z` and `s = λ` it is the Bregman-distance form. Two
//! independent solvers (accelerated projected gradient and a primal-dual active
//! set method) plus an exhaustive enumeration oracle for tiny instances.

use nalgebra::{DMatrix, DVector};

use crate::constraints::BoxConstraints;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::{LinearMap, Operator};

#[derive(Debug, Clone, Copy)]
pub struct QuadSubproblem<'a> {
    pub op: &'a Operator,
    /// `b`, on the range grid
    pub target: &'a GridFunction,
    pub alpha: f64,
    pub bounds: &'a BoxConstraints,
    /// Optional linear shift `s` on the domain grid.
    pub shift: Option<&'a GridFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    ProjectedGradient,
    Pdas,
    BruteForce,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::ProjectedGradient => "pg",
            SolverKind::Pdas => "pdas",
            SolverKind::BruteForce => "brute",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub u: GridFunction,
    /// Normal-cone element recovered from the optimality identity.
    pub w: GridFunction,
    /// Fixed-point residual `‖u − P(u − τ∇F(u))‖`, `τ = 1/(‖S‖² + α)`.
    pub kkt_residual: f64,
    /// Violation of `w ∈ ∂I_{U_ad}(u)`.
    pub normal_cone_residual: f64,
    pub iterations: usize,
    pub solver: SolverKind,
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_PG_MAX_ITERS: usize = 100_000;
pub const DEFAULT_PDAS_MAX_ITERS: usize = 100;
/// Full set exchanges allowed without progress before PDAS switches to its primal phase.
const PDAS_PATIENCE: usize = 3;

impl<'a> QuadSubproblem<'a> {
    pub fn new(op: &'a Operator, target: &'a GridFunction, alpha: f64, bounds: &'a BoxConstraints) -> Result<Self> {
        let sub = Self { op, target, alpha, bounds, shift: None };
        sub.validate()?;
        Ok(sub)
    }

    pub fn with_shift(mut self, shift: &'a GridFunction) -> Result<Self> {
        self.shift = Some(shift);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Precondition(format!("alpha must be positive and finite, got {}", self.alpha)));
        }
        self.target.check_on(self.op.range(), "QuadSubproblem target")?;
        self.bounds.lower().check_on(self.op.domain(), "QuadSubproblem bounds")?;
        if let Some(s) = self.shift {
            s.check_on(self.op.domain(), "QuadSubproblem shift")?;
        }
        Ok(())
    }

    /// `Su − b`
    fn residual(&self, u: &GridFunction) -> GridFunction {
        self.op.apply(u).expect("validated grids").sub(self.target)
    }

    /// `∇F(u) = S*(Su − b) + α(u − s)` in the weighted inner product.
    pub fn gradient(&self, u: &GridFunction) -> GridFunction {
        let r = self.residual(u);
        let mut g = self.op.apply_adjoint(&r).expect("validated grids");
        g.add_scaled_mut(self.alpha, u);
        if let Some(s) = self.shift {
            g.add_scaled_mut(-self.alpha, s);
        }
        g
    }

    pub fn objective(&self, u: &GridFunction) -> f64 {
        let r = self.residual(u);
        let mut f = 0.5 * r.norm_sq() + 0.5 * self.alpha * u.norm_sq();
        if let Some(s) = self.shift {
            f -= self.alpha * u.inner(s);
        }
        f
    }

    /// Step length `1/(‖S‖² + α)`, with a small margin on the norm estimate.
    pub fn step(&self) -> f64 {
        let l = self.op.norm_estimate();
        1.0 / (1.01 * l * l + self.alpha)
    }

    pub fn fixed_point_residual(&self, u: &GridFunction) -> f64 {
        let tau = self.step();
        let g = self.gradient(u);
        let p = self.bounds.project_unchecked(&u.axpy(-tau, &g));
        u.distance(&p)
    }

    /// `w = s − u − (1/α) S*(Su − b)`, the element making
    /// `S*(Su − b) + α(u − s + w) = 0` exact.
    pub fn recover_w(&self, u: &GridFunction) -> GridFunction {
        let g = self.gradient(u);
        g.scale(-1.0 / self.alpha)
    }

    fn finish(&self, u: GridFunction, iterations: usize, solver: SolverKind) -> SubproblemSolution {
        let w = self.recover_w(&u);
        let normal_cone_residual = self.bounds.normal_cone_residual_unchecked(&u, &w, self.bounds.default_tol());
        let kkt_residual = self.fixed_point_residual(&u);
        SubproblemSolution { u, w, kkt_residual, normal_cone_residual, iterations, solver }
    }

    /// Coordinate form `K u = r` of the unconstrained optimality condition, scaled by
    /// `W_U`: `K = Mᵀ W_Y M + α W_U`, `r = Mᵀ W_Y b + α W_U s`.
    fn coordinate_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let wu = self.op.domain().weights();
        let wy = self.op.range().weights();
        let mut k = self.op.gram().clone();
        for (i, w) in wu.iter().enumerate() {
            k[(i, i)] += self.alpha * w;
        }
        let wb: Vec<f64> = self.target.values().iter().zip(wy).map(|(b, w)| b * w).collect();
        let mut r = self.op.matrix().tr_mul(&DVector::from_vec(wb));
        if let Some(s) = self.shift {
            for (i, (sv, w)) in s.values().iter().zip(wu).enumerate() {
                r[i] += self.alpha * w * sv;
            }
        }
        (k, r)
    }
}

/// FISTA on `F` with function-value restart. Stops when the fixed-point residual
/// drops below `tol`.
pub fn solve_projected_gradient(
    sub: &QuadSubproblem<'_>,
    tol: f64,
    max_iters: usize,
    start: Option<&GridFunction>,
) -> Result<SubproblemSolution> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tol must be positive, got {tol}")));
    }
    let bounds = sub.bounds;
    let tau = sub.step();
    let mut u = match start {
        Some(s) => {
            s.check_on(sub.op.domain(), "solve_projected_gradient start")?;
            bounds.project_unchecked(s)
        }
        None => bounds.project_unchecked(&GridFunction::zeros(sub.op.domain().clone())),
    };
    let mut f_u = sub.objective(&u);
    let mut y = u.clone();
    let mut t = 1.0_f64;
    let mut best = (f64::INFINITY, u.clone());

    for it in 0..=max_iters {
        let res = sub.fixed_point_residual(&u);
        if res <= tol {
            return Ok(sub.finish(u, it, SolverKind::ProjectedGradient));
        }
        if res < best.0 {
            best = (res, u.clone());
        }
        if it == max_iters {
            break;
        }
        let g = sub.gradient(&y);
        let mut next = y.axpy(-tau, &g);
        bounds.project_in_place(next.values_mut());
        let f_next = sub.objective(&next);
        if f_next > f_u {
            // restart from the last accepted point with a plain gradient step
            t = 1.0;
            let g = sub.gradient(&u);
            next = u.axpy(-tau, &g);
            bounds.project_in_place(next.values_mut());
            y = next.clone();
            f_u = sub.objective(&next);
            u = next;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = next.axpy(momentum, &next.sub(&u));
        u = next;
        f_u = f_next;
        t = t_next;
    }
    Err(Error::NonConvergence {
        solver: "projected gradient",
        iterations: max_iters,
        residual: best.0,
        best: Some(Box::new(best.1)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Pattern {
    Lower,
    Free,
    Upper,
}

/// Solves the reduced system on the free nodes with the others pinned to their
/// bounds. Returns `None` if the reduced matrix is not positive definite.
fn solve_pattern(
    k: &DMatrix<f64>,
    r: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    pattern: &[Pattern],
) -> Option<Vec<f64>> {
    let n = pattern.len();
    let mut u: Vec<f64> = (0..n)
        .map(|i| match pattern[i] {
            Pattern::Lower => lower[i],
            Pattern::Upper => upper[i],
            Pattern::Free => 0.0,
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == Pattern::Free).collect();
    if free.is_empty() {
        return Some(u);
    }
    let fixed: Vec<usize> = (0..n).filter(|&i| pattern[i] != Pattern::Free).collect();
    let m = free.len();
    let kff = DMatrix::from_fn(m, m, |a, b| k[(free[a], free[b])]);
    let rhs = DVector::from_fn(m, |a, _| {
        let i = free[a];
        r[i] - fixed.iter().map(|&j| k[(i, j)] * u[j]).sum::<f64>()
    });
    let sol = kff.cholesky()?.solve(&rhs);
    for (a, &i) in free.iter().enumerate() {
        u[i] = sol[a];
    }
    Some(u)
}

/// Primal-dual active set iteration on the coordinate system `K u = r`.
///
/// The multiplier is `λ = r − K u`; a node is moved to the upper set when
/// `λ_i + c_i(u_i − b_i) > 0`, to the lower set when `λ_i + c_i(u_i − a_i) < 0`,
/// with `c_i = α h_i`. Stops when the sets repeat the previous ones.
///
/// Full set exchanges can cycle when `K` is not an M-matrix. If three exchanges in
/// a row fail to reduce the number of nodes that change sets, the remaining
/// iterations go to a primal feasible active-set method started from the projection
/// of the current iterate. Its objective decreases strictly, so it cannot cycle.
pub fn solve_pdas(
    sub: &QuadSubproblem<'_>,
    tol: f64,
    max_iters: usize,
    start: Option<&GridFunction>,
) -> Result<SubproblemSolution> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tol must be positive, got {tol}")));
    }
    let (k, r) = sub.coordinate_system();
    let lower = sub.bounds.lower().values();
    let upper = sub.bounds.upper().values();
    let wu = sub.op.domain().weights();
    let n = lower.len();

    let mut u: Vec<f64> = match start {
        Some(s) => {
            s.check_on(sub.op.domain(), "solve_pdas start")?;
            sub.bounds.project_unchecked(s).into_values()
        }
        None => sub.bounds.project_unchecked(&GridFunction::zeros(sub.op.domain().clone())).into_values(),
    };
    let pinned: Vec<bool> = (0..n).map(|i| upper[i] - lower[i] <= 0.0).collect();
    let mut lam: Vec<f64> = (&r - &k * DVector::from_column_slice(&u)).iter().copied().collect();
    let mut prev: Option<Vec<Pattern>> = None;
    let mut fewest_changes = usize::MAX;
    let mut patience = PDAS_PATIENCE;
    let grid = sub.op.domain().clone();

    for it in 1..=max_iters {
        let full: Vec<Pattern> = (0..n)
            .map(|i| {
                let c = sub.alpha * wu[i];
                if pinned[i] {
                    Pattern::Lower
                } else if lam[i] + c * (u[i] - upper[i]) > 0.0 {
                    Pattern::Upper
                } else if lam[i] + c * (u[i] - lower[i]) < 0.0 {
                    Pattern::Lower
                } else {
                    Pattern::Free
                }
            })
            .collect();
        if prev.as_ref() == Some(&full) {
            return polish(sub, GridFunction::from_parts(grid, u), it - 1, tol);
        }
        let pattern = match &prev {
            None => full,
            Some(prev) => {
                let changed: Vec<usize> = (0..n).filter(|&i| full[i] != prev[i]).collect();
                if changed.len() < fewest_changes {
                    fewest_changes = changed.len();
                    patience = PDAS_PATIENCE;
                    full
                } else if patience > 0 {
                    patience -= 1;
                    full
                } else {
                    let start: Vec<f64> = (0..n).map(|i| u[i].clamp(lower[i], upper[i])).collect();
                    let (v, used, done) = primal_active_set(&k, &r, lower, upper, &pinned, start, max_iters - it + 1)?;
                    if done {
                        return polish(sub, GridFunction::from_parts(grid, v), it - 1 + used, tol);
                    }
                    u = v;
                    break;
                }
            }
        };
        u = solve_pattern(&k, &r, lower, upper, &pattern)
            .ok_or_else(|| Error::Internal("reduced system is not positive definite".into()))?;
        let ku = &k * DVector::from_column_slice(&u);
        lam = (0..n).map(|i| if pattern[i] == Pattern::Free { 0.0 } else { r[i] - ku[i] }).collect();
        prev = Some(pattern);
    }
    let best = GridFunction::from_parts(grid, u);
    Err(Error::NonConvergence {
        solver: "primal-dual active set",
        iterations: max_iters,
        residual: sub.fixed_point_residual(&best),
        best: Some(Box::new(best)),
    })
}

/// Reports a PDAS result, polishing with projected gradient when the reduced solves
/// left the KKT residual above `tol`.
fn polish(sub: &QuadSubproblem<'_>, u: GridFunction, iterations: usize, tol: f64) -> Result<SubproblemSolution> {
    let out = sub.finish(u, iterations, SolverKind::Pdas);
    if out.kkt_residual <= tol {
        return Ok(out);
    }
    let polished = solve_projected_gradient(sub, tol, DEFAULT_PG_MAX_ITERS, Some(&out.u))?;
    Ok(SubproblemSolution { iterations: out.iterations + polished.iterations, solver: SolverKind::Pdas, ..polished })
}

/// Primal feasible active-set method for `min ½uᵀKu − rᵀu` over the box, from a
/// feasible `u`. Each step either moves to the minimizer on the current working set,
/// stopping at the first bound it would cross, or releases the bound with the most
/// violated multiplier. Returns the iterate, the steps taken and whether the
/// multipliers all had the right sign.
fn primal_active_set(
    k: &DMatrix<f64>,
    r: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    pinned: &[bool],
    mut u: Vec<f64>,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, bool)> {
    let n = u.len();
    let mut work: Vec<Pattern> = (0..n)
        .map(|i| {
            if pinned[i] || u[i] <= lower[i] {
                Pattern::Lower
            } else if u[i] >= upper[i] {
                Pattern::Upper
            } else {
                Pattern::Free
            }
        })
        .collect();
    // multipliers below this are treated as zero, so roundoff cannot release a bound
    // that the next step would immediately hit again
    let scale = r.amax() + k.amax() * u.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let drop_tol = 1e-13 * scale;
    for it in 1..=max_iters {
        let target = solve_pattern(k, r, lower, upper, &work)
            .ok_or_else(|| Error::Internal("reduced system is not positive definite".into()))?;
        let mut step = 1.0;
        let mut block = None;
        for i in (0..n).filter(|&i| work[i] == Pattern::Free) {
            let d = target[i] - u[i];
            let (t, side) = if target[i] < lower[i] && d < 0.0 {
                ((lower[i] - u[i]) / d, Pattern::Lower)
            } else if target[i] > upper[i] && d > 0.0 {
                ((upper[i] - u[i]) / d, Pattern::Upper)
            } else {
                continue;
            };
            if t < step {
                step = t;
                block = Some((i, side));
            }
        }
        match block {
            Some((j, side)) => {
                let step = step.max(0.0);
                for i in (0..n).filter(|&i| work[i] == Pattern::Free) {
                    u[i] = (u[i] + step * (target[i] - u[i])).clamp(lower[i], upper[i]);
                }
                u[j] = if side == Pattern::Lower { lower[j] } else { upper[j] };
                work[j] = side;
            }
            None => {
                u = target;
                let ku = k * DVector::from_column_slice(&u);
                let mut worst = drop_tol;
                let mut release = None;
                for i in (0..n).filter(|&i| !pinned[i]) {
                    let lam = r[i] - ku[i];
                    let violation = match work[i] {
                        Pattern::Lower => lam,
                        Pattern::Upper => -lam,
                        Pattern::Free => continue,
                    };
                    if violation > worst {
                        worst = violation;
                        release = Some(i);
                    }
                }
                match release {
                    Some(i) => work[i] = Pattern::Free,
                    None => return Ok((u, it, true)),
                }
            }
        }
    }
    Ok((u, max_iters, false))
}

/// Exhaustive search over all `3ⁿ` lower/free/upper patterns for the unique KKT
/// point. Validation oracle for `n ≤ 10`.
pub fn brute_force_oracle(sub: &QuadSubproblem<'_>) -> Result<GridFunction> {
    let n = sub.op.domain().len();
    if n > 10 {
        return Err(Error::Precondition(format!("brute force oracle limited to 10 nodes, got {n}")));
    }
    let (k, r) = sub.coordinate_system();
    let lower = sub.bounds.lower().values();
    let upper = sub.bounds.upper().values();
    let scale = 1.0 + r.amax() + k.amax() * (sub.bounds.max_width() + 1.0);
    let feas_tol = 1e-12 * (1.0 + sub.bounds.max_width());
    let sign_tol = 1e-12 * scale;

    let mut pattern = vec![Pattern::Lower; n];
    let total = 3usize.pow(n as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..total {
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = match c % 3 {
                0 => Pattern::Lower,
                1 => Pattern::Free,
                _ => Pattern::Upper,
            };
            c /= 3;
        }
        let Some(u) = solve_pattern(&k, &r, lower, upper, &pattern) else {
            continue;
        };
        let feasible = (0..n).all(|i| u[i] >= lower[i] - feas_tol && u[i] <= upper[i] + feas_tol);
        if !feasible {
            continue;
        }
        // multiplier λ = r − K u must be ≤ 0 on lower, ≥ 0 on upper
        let ku = &k * DVector::from_column_slice(&u);
        let signs_ok = (0..n).all(|i| {
            let lam = r[i] - ku[i];
            match pattern[i] {
                Pattern::Lower => upper[i] == lower[i] || lam <= sign_tol,
                Pattern::Upper => lam >= -sign_tol,
                Pattern::Free => true,
            }
        });
        if !signs_ok {
            continue;
        }
        // keep the candidate with the smallest objective to be robust to ties
        let uf = GridFunction::from_parts(sub.op.domain().clone(), u);
        let f = sub.objective(&uf);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, uf.into_values()));
        }
    }
    let (_, mut u) = best.ok_or_else(|| Error::Internal("no admissible activity pattern".into()))?;
    sub.bounds.project_in_place(&mut u);
    Ok(GridFunction::from_parts(sub.op.domain().clone(), u))
}

/// Bregman-form optimality check: recovers `w = λ_prev − u − (1/α)S*(Su − z)` with
/// `z = sub.target` and returns the normal-cone violation of `w` at `u`.
pub fn kkt_residual(sub: &QuadSubproblem<'_>, u: &GridFunction, lambda_prev: &GridFunction) -> Result<f64> {
    u.check_on(sub.op.domain(), "kkt_residual")?;
    lambda_prev.check_on(sub.op.domain(), "kkt_residual")?;
    let r = sub.op.apply(u)?.sub(sub.target);
    let g = sub.op.apply_adjoint(&r)?;
    let w = lambda_prev.sub(u).axpy(-1.0 / sub.alpha, &g);
    let tol = sub.bounds.default_tol();
    sub.bounds.normal_cone_residual(u, &w, tol)
}
