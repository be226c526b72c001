//! Benchmark problems with known solutions.
//!
//! Every builder constructs `u†` and `z` so that `u†` is optimal by construction,
//! then checks its own certificate (stationarity, adjoint state, non-attainability)
//! and refuses to return an instance that fails it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bregman::ProblemInstance;
use crate::constraints::{stationarity_residual, BoxConstraints};
use crate::diagnostics::{default_eps_grid, verify_asc_measure, ReferenceSolution};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::operator::{LinearMap, Operator, OperatorKind};

/// Stationarity residual every reference solution must reach.
pub const REFERENCE_STATIONARITY_TOL: f64 = 1e-8;
/// Smallest `‖z − S u†‖` accepted for a non-attainable instance.
pub const NON_ATTAINABILITY_MIN: f64 = 1e-3;
/// `|p†|` bound on the plateau of a mixed instance, relative to `max(1, ‖p†‖_∞)`.
pub const PLATEAU_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    Attainable,
    SourceCondition,
    BangBangAsc,
    MixedAsc,
    /// Mixed instance on a dense operator whose plateau columns are rank deficient,
    /// so `u†` is not unique.
    NonInjective,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 5] = [
        BenchmarkKind::Attainable,
        BenchmarkKind::SourceCondition,
        BenchmarkKind::BangBangAsc,
        BenchmarkKind::MixedAsc,
        BenchmarkKind::NonInjective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::Attainable => "attainable",
            BenchmarkKind::SourceCondition => "source_condition",
            BenchmarkKind::BangBangAsc => "bang_bang_asc",
            BenchmarkKind::MixedAsc => "mixed_asc",
            BenchmarkKind::NonInjective => "non_injective",
        }
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown benchmark kind '{s}'")))
    }
}

/// The pattern `v` in Y that becomes `z − S u†`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// `amplitude · sin(2π·frequency·x + phase)`
    Sine { amplitude: f64, frequency: f64, phase: f64 },
    /// Independent standard normal values times `amplitude`, drawn from the benchmark seed.
    Random { amplitude: f64 },
}

impl Pattern {
    pub fn sample(&self, grid: &Arc<Grid>, seed: u64) -> GridFunction {
        match *self {
            Pattern::Sine { amplitude, frequency, phase } => GridFunction::from_fn(grid.clone(), |x| {
                amplitude * (2.0 * std::f64::consts::PI * frequency * x + phase).sin()
            }),
            Pattern::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed0_f7a7_7e54);
                let values = (0..grid.len()).map(|_| amplitude * standard_normal(&mut rng)).collect();
                GridFunction::from_parts(grid.clone(), values)
            }
        }
    }
}

/// Everything needed to rebuild a benchmark instance. Building is deterministic:
/// equal specs give bit-identical instances.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub name: String,
    pub kind: BenchmarkKind,
    /// Number of grid nodes on `[0, 1]`.
    pub n: usize,
    pub operator: OperatorKind,
    /// Width `σ` of the Gaussian kernel `exp(−(x − t)²/(2σ²))` for Fredholm operators.
    pub kernel_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub pattern: Pattern,
    /// Amplification `M` of the source element; `None` picks a default.
    pub amplification: Option<f64>,
    /// Inactive interval of mixed instances.
    pub plateau: Option<(f64, f64)>,
    /// Value of `u†` for attainable instances; `None` uses `P_{U_ad}(0)`.
    pub interior_value: Option<f64>,
    /// Rank of the plateau block of a non-injective operator.
    pub plateau_rank: usize,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// Defaults for each kind: n = 201 on `[0, 1]`, box `[−1, 1]`.
    pub fn new(kind: BenchmarkKind) -> Self {
        let operator = match kind {
            // a smooth-kernel adjoint state cannot vanish on an interval without being
            // tiny everywhere, so mixed instances default to the Poisson operator
            BenchmarkKind::Attainable | BenchmarkKind::BangBangAsc | BenchmarkKind::MixedAsc => OperatorKind::Poisson1d,
            BenchmarkKind::SourceCondition => OperatorKind::Fredholm,
            BenchmarkKind::NonInjective => OperatorKind::Dense,
        };
        Self {
            name: kind.as_str().to_string(),
            kind,
            n: 201,
            operator,
            kernel_width: 0.1,
            lower: -1.0,
            upper: 1.0,
            pattern: Pattern::Sine { amplitude: 1.0, frequency: 1.0, phase: 0.1234 },
            amplification: None,
            plateau: matches!(kind, BenchmarkKind::MixedAsc | BenchmarkKind::NonInjective).then_some((0.4, 0.6)),
            interior_value: None,
            plateau_rank: 3,
            seed: 0,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_operator(mut self, operator: OperatorKind) -> Self {
        self.operator = operator;
        self
    }

    pub fn with_pattern(mut self, pattern: Pattern) -> Self {
        self.pattern = pattern;
        self
    }

    pub fn with_amplification(mut self, m: f64) -> Self {
        self.amplification = Some(m);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::uniform(self.n, 0.0, 1.0)?))
    }

    pub fn bounds(&self, grid: Arc<Grid>) -> Result<BoxConstraints> {
        BoxConstraints::uniform(grid, self.lower, self.upper)
    }

    pub fn operator(&self) -> Result<Arc<Operator>> {
        let grid = self.grid()?;
        let op = match (self.kind, self.operator) {
            (BenchmarkKind::NonInjective, OperatorKind::Dense) => {
                let (lo, hi) = self.plateau_or_err()?;
                non_injective_operator(grid, (lo, hi), self.plateau_rank, self.seed)?
            }
            (BenchmarkKind::NonInjective, other) => {
                return Err(Error::Construction(format!("non_injective benchmarks use a dense operator, not {other}")))
            }
            (_, OperatorKind::Poisson1d) => Operator::poisson1d(grid)?,
            (_, OperatorKind::Fredholm) => {
                let sigma = self.kernel_width;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Construction(format!("kernel width must be positive, got {sigma}")));
                }
                Operator::fredholm(grid.clone(), grid, |x, t| (-(x - t).powi(2) / (2.0 * sigma * sigma)).exp())?
            }
            (_, OperatorKind::Dense) => random_dense_operator(grid, self.seed)?,
        };
        Ok(Arc::new(op))
    }

    fn plateau_or_err(&self) -> Result<(f64, f64)> {
        self.plateau.ok_or_else(|| Error::Construction(format!("{} benchmark needs a plateau", self.kind.as_str())))
    }

    pub fn build(&self) -> Result<ProblemInstance> {
        let op = self.operator()?;
        let bounds = self.bounds(op.domain().clone())?;
        let v = self.pattern.sample(op.range(), self.seed);
        match self.kind {
            BenchmarkKind::Attainable => {
                let u = self.interior_value.map(|c| GridFunction::constant(op.domain().clone(), c));
                make_attainable(op, bounds, u)
            }
            BenchmarkKind::SourceCondition => make_source_condition(op, bounds, &v, self.amplification),
            BenchmarkKind::BangBangAsc => make_bang_bang_asc(op, bounds, &v),
            BenchmarkKind::MixedAsc | BenchmarkKind::NonInjective => {
                make_mixed_asc(op, bounds, self.plateau_or_err()?, &v, self.amplification)
            }
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `M_ij = g_ij / n` with standard normal `g_ij`.
fn random_dense_operator(grid: Arc<Grid>, seed: u64) -> Result<Operator> {
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng) / n as f64);
    Operator::dense(grid.clone(), grid, m)
}

/// Random dense operator whose columns on the plateau nodes span only a
/// `rank`-dimensional space, so `S` has a kernel supported on the plateau.
fn non_injective_operator(grid: Arc<Grid>, plateau: (f64, f64), rank: usize, seed: u64) -> Result<Operator> {
    let n = grid.len();
    let cols = plateau_nodes(&grid, plateau);
    if rank == 0 || rank >= cols.len() {
        return Err(Error::Construction(format!(
            "plateau rank {rank} must be in 1..{} (number of plateau nodes)",
            cols.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || standard_normal(&mut rng);
    let mut m = DMatrix::from_fn(n, n, |_, _| normal() / n as f64);
    let basis = DMatrix::from_fn(n, rank, |_, _| normal() / n as f64);
    for &j in &cols {
        let coef = DVector::from_fn(rank, |_, _| normal());
        m.set_column(j, &(&basis * coef));
    }
    Operator::dense(grid.clone(), grid, m)
}

fn plateau_nodes(grid: &Grid, (lo, hi): (f64, f64)) -> Vec<usize> {
    grid.nodes().iter().enumerate().filter(|(_, &x)| x > lo && x < hi).map(|(i, _)| i).collect()
}

/// `z = S u†` with `u†` admissible (default `P_{U_ad}(0)`); `p† = 0`, `H(u†) = 0`.
pub fn make_attainable(
    op: Arc<Operator>,
    bounds: BoxConstraints,
    u_dagger: Option<GridFunction>,
) -> Result<ProblemInstance> {
    let zero = GridFunction::zeros(op.domain().clone());
    let p0 = bounds.project(&zero)?;
    let u = match u_dagger {
        Some(u) => {
            u.check_on(op.domain(), "make_attainable u")?;
            let viol = bounds.infeasibility(&u);
            if viol > bounds.default_tol() {
                return Err(Error::Construction(format!("u† violates the bounds by {viol:.3e}")));
            }
            u
        }
        None => p0.clone(),
    };
    let y = op.apply(&u)?;
    let n = op.domain().len();
    // λ = S*0 = 0 is a subgradient at u† only when u† = P(0)
    let consistent = u.distance(&p0) == 0.0;
    let reference = ReferenceSolution {
        u_dagger: u,
        y_dagger: y.clone(),
        p_dagger: zero,
        source_w: consistent.then(|| GridFunction::zeros(op.range().clone())),
        inactive_set: Some((0..n).collect()),
        active_set: None,
        kappa: None,
        seed_multiplier: consistent.then(|| GridFunction::zeros(op.range().clone())),
    };
    finish(op, bounds, y, reference, false)
}

/// Non-attainable instance satisfying the source condition `u† = P_{U_ad}(S*w)`
/// with `w = M v`: `p† = S*v`, `u† = P(M p†)`, `z = S u† + v`.
///
/// `M` defaults to `10³ · ‖u_b − u_a‖_∞ / ‖p†‖_∞`.
pub fn make_source_condition(
    op: Arc<Operator>,
    bounds: BoxConstraints,
    v: &GridFunction,
    amplification: Option<f64>,
) -> Result<ProblemInstance> {
    v.check_on(op.range(), "make_source_condition v")?;
    if v.max_abs() == 0.0 {
        return Err(Error::Construction("pattern v is zero, so z would be attainable".into()));
    }
    let p = op.apply_adjoint(v)?;
    if p.max_abs() == 0.0 {
        return Err(Error::Construction("S*v vanishes; the source condition is trivial".into()));
    }
    let m = amplification.unwrap_or(1e3 * bounds.max_width().max(1.0) / p.max_abs());
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Construction(format!("amplification must be positive, got {m}")));
    }
    let w = v.scale(m);
    let u = bounds.project(&p.scale(m))?;
    let y = op.apply(&u)?;
    let z = y.add(v);
    let n = op.domain().len();
    let reference = ReferenceSolution {
        u_dagger: u,
        y_dagger: y,
        p_dagger: p,
        source_w: Some(w.clone()),
        inactive_set: Some((0..n).collect()),
        active_set: None,
        kappa: None,
        seed_multiplier: Some(w),
    };
    finish(op, bounds, z, reference, true)
}

/// Bang-bang instance: `p† = S*v`, `u† = u_b` where `p† > 0` and `u_a` where
/// `p† < 0`; `z = S u† + v`. Nodes with `p† = 0` (for instance boundary nodes of a
/// Dirichlet solution operator) take `P_{U_ad}(0)`.
///
/// The active set is `{|p†| > 10⁻¹² ‖p†‖_∞}`, `κ = 1` and `w = 0`. A pattern whose
/// adjoint vanishes on two neighbouring nodes is rejected as a plateau.
pub fn make_bang_bang_asc(op: Arc<Operator>, bounds: BoxConstraints, v: &GridFunction) -> Result<ProblemInstance> {
    v.check_on(op.range(), "make_bang_bang_asc v")?;
    let p = op.apply_adjoint(v)?;
    let pmax = p.max_abs();
    if pmax == 0.0 {
        return Err(Error::Construction("S*v vanishes identically".into()));
    }
    let tol = 1e-12 * pmax;
    let flat = p.values().windows(2).position(|w| w[0].abs() <= tol && w[1].abs() <= tol);
    if let Some(i) = flat {
        return Err(Error::Construction(format!(
            "p† vanishes on nodes {i} and {}; use a mixed instance for plateaus",
            i + 1
        )));
    }
    let zero_w = GridFunction::zeros(op.range().clone());
    let u = sign_pattern(&bounds, &p, &GridFunction::zeros(op.domain().clone()));
    let (active, inactive) = split_active(&p, tol, &[]);
    let seed = seed_multiplier(&op, &bounds, &zero_w, v, &p, &active)?;
    let y = op.apply(&u)?;
    let z = y.add(v);
    let reference = ReferenceSolution {
        u_dagger: u,
        y_dagger: y,
        p_dagger: p,
        source_w: Some(zero_w),
        inactive_set: Some(inactive),
        active_set: Some(active),
        kappa: Some(1.0),
        seed_multiplier: seed,
    };
    finish(op, bounds, z, reference, true)
}

/// Mixed instance: the pattern `v₀` is corrected by least squares so that
/// `p† = S*v` vanishes on the plateau, where `u† = P_{U_ad}(S*w)` with `w = M v₀`;
/// off the plateau `u†` is bang-bang by the sign of `p†`. `z = S u† + v`.
///
/// `M` defaults to `½‖u_b − u_a‖_∞ / max_plateau |S*v₀|`, which keeps part of the
/// plateau strictly inside the box. The fitted measure exponent of `p†` on the
/// active set is stored as `κ`.
pub fn make_mixed_asc(
    op: Arc<Operator>,
    bounds: BoxConstraints,
    plateau: (f64, f64),
    v0: &GridFunction,
    amplification: Option<f64>,
) -> Result<ProblemInstance> {
    v0.check_on(op.range(), "make_mixed_asc v")?;
    let n = op.domain().len();
    let plateau_idx = plateau_nodes(op.domain(), plateau);
    if plateau_idx.is_empty() {
        return Err(Error::Construction(format!(
            "plateau ({}, {}) contains no grid nodes; use a bang-bang instance",
            plateau.0, plateau.1
        )));
    }
    if plateau_idx.len() == n {
        return make_source_condition(op, bounds, v0, amplification);
    }

    let v = flatten_on(&op, v0, &plateau_idx)?;
    let p = op.apply_adjoint(&v)?;
    let pmax = p.max_abs();
    let on_plateau = plateau_idx.iter().map(|&i| p.values()[i].abs()).fold(0.0, f64::max);
    if on_plateau > PLATEAU_TOL * pmax.max(1.0) {
        return Err(Error::Construction(format!(
            "least-squares correction left |p†| = {on_plateau:.3e} on the plateau"
        )));
    }
    if pmax == 0.0 || v.max_abs() == 0.0 {
        return Err(Error::Construction("correction removed the whole pattern".into()));
    }

    let sw0 = op.apply_adjoint(v0)?;
    let sw0_max = plateau_idx.iter().map(|&i| sw0.values()[i].abs()).fold(0.0, f64::max);
    let m = match amplification {
        Some(m) => m,
        None if sw0_max > 0.0 => 0.5 * bounds.max_width() / sw0_max,
        None => 1.0,
    };
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Construction(format!("amplification must be positive, got {m}")));
    }
    let w = v0.scale(m);
    let sw = sw0.scale(m);

    let tol = 1e-12 * pmax;
    let (active, inactive) = split_active(&p, tol, &plateau_idx);
    let mut u = sign_pattern(&bounds, &p, &sw);
    let psw = bounds.project(&sw)?;
    for &i in &inactive {
        u.values_mut()[i] = psw.values()[i];
    }
    let kappa = if active.is_empty() {
        None
    } else {
        let eps = default_eps_grid(&p, &active, 16);
        verify_asc_measure(&p, &active, &eps).ok().map(|f| f.kappa).filter(|k| k.is_finite() && *k > 0.0)
    };
    let seed = seed_multiplier(&op, &bounds, &w, &v, &p, &active)?;
    let y = op.apply(&u)?;
    let z = y.add(&v);
    let reference = ReferenceSolution {
        u_dagger: u,
        y_dagger: y,
        p_dagger: p,
        source_w: Some(w),
        inactive_set: Some(inactive),
        active_set: Some(active),
        kappa,
        seed_multiplier: seed,
    };
    finish(op, bounds, z, reference, true)
}

/// Removes from `v₀` its `W_Y`-orthogonal projection onto the span of the operator
/// columns at `idx`, so that `(S*v)_i = 0` for `i ∈ idx`.
///
/// The span is orthonormalized by Gram-Schmidt with one re-orthogonalization pass;
/// columns that are numerically dependent on earlier ones are dropped.
fn flatten_on(op: &Operator, v0: &GridFunction, idx: &[usize]) -> Result<GridFunction> {
    let m = op.matrix();
    let sqrt_wy: Vec<f64> = op.range().weights().iter().map(|w| w.sqrt()).collect();
    let rows = m.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for &j in idx {
        let mut q = DVector::from_fn(rows, |r, _| sqrt_wy[r] * m[(r, j)]);
        let norm0 = q.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&q);
                q.axpy(-c, b, 1.0);
            }
        }
        let norm = q.norm();
        if norm > 1e-13 * norm0 {
            basis.push(q / norm);
        }
    }
    let mut vt = DVector::from_fn(rows, |r, _| sqrt_wy[r] * v0.values()[r]);
    for _ in 0..2 {
        for b in &basis {
            let c = b.dot(&vt);
            vt.axpy(-c, b, 1.0);
        }
    }
    let values = vt.iter().zip(&sqrt_wy).map(|(x, s)| x / s).collect();
    GridFunction::new(op.range().clone(), values)
}

/// `u_b` where `p > 0`, `u_a` where `p < 0`, and `P(fallback)` where `p = 0`.
fn sign_pattern(bounds: &BoxConstraints, p: &GridFunction, fallback: &GridFunction) -> GridFunction {
    let (a, b) = (bounds.lower().values(), bounds.upper().values());
    let values = p
        .values()
        .iter()
        .zip(fallback.values())
        .enumerate()
        .map(|(i, (&pi, &f))| {
            if pi > 0.0 {
                b[i]
            } else if pi < 0.0 {
                a[i]
            } else {
                f.clamp(a[i], b[i])
            }
        })
        .collect();
    GridFunction::from_parts(p.grid().clone(), values)
}

/// Splits the nodes into `A = {|p| > tol} \ excluded` and its complement.
fn split_active(p: &GridFunction, tol: f64, excluded: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut mask = vec![false; p.len()];
    for &i in excluded {
        mask[i] = true;
    }
    (0..p.len()).partition(|&i| !mask[i] && p.values()[i].abs() > tol)
}

/// `μ = w + c v` with `c` large enough that `P(S*μ)` saturates on the active set.
/// Since `S*v = p†` vanishes off it, `P(S*μ) = u†` whenever `u† = P(S*w)` there.
fn seed_multiplier(
    op: &Operator,
    bounds: &BoxConstraints,
    w: &GridFunction,
    v: &GridFunction,
    p: &GridFunction,
    active: &[usize],
) -> Result<Option<GridFunction>> {
    let sw = op.apply_adjoint(w)?;
    let (a, b) = (bounds.lower().values(), bounds.upper().values());
    let c = active
        .iter()
        .map(|&i| {
            let reach = a[i].abs().max(b[i].abs()) + sw.values()[i].abs();
            2.0 * reach / p.values()[i].abs()
        })
        .fold(0.0, f64::max);
    if !c.is_finite() {
        return Ok(None);
    }
    Ok(Some(w.axpy(c, v)))
}

/// Checks the certificates of a freshly built reference and assembles the instance.
fn finish(
    op: Arc<Operator>,
    bounds: BoxConstraints,
    z: GridFunction,
    mut reference: ReferenceSolution,
    non_attainable: bool,
) -> Result<ProblemInstance> {
    let u = &reference.u_dagger;
    let theta = crate::constraints::default_theta(op.norm_estimate());
    let stat = stationarity_residual(op.as_ref(), &z, &bounds, u, theta)?;
    if stat > REFERENCE_STATIONARITY_TOL {
        return Err(Error::Construction(format!(
            "reference is not stationary: residual {stat:.3e} > {REFERENCE_STATIONARITY_TOL:e} \
             (amplification too small or degenerate pattern)"
        )));
    }
    let p_check = op.apply_adjoint(&z.sub(&reference.y_dagger))?;
    let drift =
        p_check.values().iter().zip(reference.p_dagger.values()).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
    if drift > 1e-10 * reference.p_dagger.max_abs().max(1.0) {
        return Err(Error::Internal(format!("stored p† is off by {drift:.3e}")));
    }
    let gap = z.distance(&reference.y_dagger);
    if non_attainable && gap <= NON_ATTAINABILITY_MIN {
        return Err(Error::Construction(format!("‖z − S u†‖ = {gap:.3e} does not certify non-attainability")));
    }
    if let (Some(w), Some(inactive)) = (&reference.source_w, &reference.inactive_set) {
        if inactive.len() == u.len() {
            let sc = u.distance(&bounds.project(&op.apply_adjoint(w)?)?);
            if sc > 1e-8 {
                return Err(Error::Construction(format!("source condition fails: ‖u† − P(S*w)‖ = {sc:.3e}")));
            }
        }
    }
    if let Some(active) = &reference.active_set {
        let (a, b) = (bounds.lower().values(), bounds.upper().values());
        if let Some(&i) = active.iter().find(|&&i| u.values()[i] != a[i] && u.values()[i] != b[i]) {
            return Err(Error::Internal(format!("u† is not at a bound on active node {i}")));
        }
    }
    // drop a seed that does not reproduce u† exactly enough to be useful
    if let Some(mu) = &reference.seed_multiplier {
        let lam = op.apply_adjoint(mu)?;
        if u.distance(&bounds.project(&lam)?) > 1e-10 * (1.0 + u.norm()) {
            reference.seed_multiplier = None;
        }
    }
    ProblemInstance::new(op, z, bounds)?.with_reference(reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(p: &ProblemInstance) -> f64 {
        let r = p.reference.as_ref().unwrap();
        stationarity_residual(p.op.as_ref(), &p.z, &p.bounds, &r.u_dagger, p.default_theta()).unwrap()
    }

    #[test]
    fn attainable_trivial_and_shifted_box() {
        let mut spec = BenchmarkSpec::new(BenchmarkKind::Attainable).with_n(51);
        let p = spec.build().unwrap();
        assert_eq!(p.z.max_abs(), 0.0);
        assert!(p.reference.as_ref().unwrap().seed_multiplier.is_some());

        spec.lower = 2.0;
        spec.upper = 3.0;
        let p = spec.build().unwrap();
        let r = p.reference.as_ref().unwrap();
        assert!(r.u_dagger.values().iter().all(|&x| x == 2.0));
        assert_eq!(stat(&p), 0.0);
        assert_eq!(r.p_dagger.max_abs(), 0.0);
    }

    #[test]
    fn attainable_rejects_infeasible() {
        let mut spec = BenchmarkSpec::new(BenchmarkKind::Attainable).with_n(11);
        spec.interior_value = Some(4.0);
        assert!(matches!(spec.build(), Err(Error::Construction(_))));
    }

    #[test]
    fn source_condition_fredholm() {
        let spec = BenchmarkSpec::new(BenchmarkKind::SourceCondition)
            .with_n(101)
            .with_pattern(Pattern::Sine { amplitude: 1.0, frequency: 1.0, phase: 0.0 })
            .with_amplification(1e3);
        let p = spec.build().unwrap();
        let r = p.reference.as_ref().unwrap();
        assert!(stat(&p) <= 1e-8);
        assert!(p.z.distance(&r.y_dagger) > 1e-3);
        let w = r.source_w.as_ref().unwrap();
        let sc = r.u_dagger.distance(&p.bounds.project(&p.op.apply_adjoint(w).unwrap()).unwrap());
        assert!(sc <= 1e-8);
    }

    #[test]
    fn source_condition_rejects_zero_pattern() {
        let spec = BenchmarkSpec::new(BenchmarkKind::SourceCondition).with_n(21).with_pattern(Pattern::Sine {
            amplitude: 0.0,
            frequency: 1.0,
            phase: 0.0,
        });
        assert!(matches!(spec.build(), Err(Error::Construction(_))));
    }

    #[test]
    fn source_condition_rejects_small_amplification() {
        let spec = BenchmarkSpec::new(BenchmarkKind::SourceCondition)
            .with_n(101)
            .with_pattern(Pattern::Sine { amplitude: 1.0, frequency: 1.0, phase: 0.0 })
            .with_amplification(1.0);
        assert!(matches!(spec.build(), Err(Error::Construction(_))));
    }

    #[test]
    fn bang_bang_poisson() {
        let p = BenchmarkSpec::new(BenchmarkKind::BangBangAsc).build().unwrap();
        let r = p.reference.as_ref().unwrap();
        assert!(stat(&p) <= 1e-8);
        for &i in r.active_set.as_ref().unwrap() {
            assert!(r.u_dagger.values()[i].abs() == 1.0);
        }
        // the Dirichlet boundary nodes carry p† = 0
        assert_eq!(r.inactive_set.as_deref(), Some(&[0, 200][..]));
        let seed = r.seed_multiplier.as_ref().unwrap();
        let lam = p.op.apply_adjoint(seed).unwrap();
        assert_eq!(p.bounds.project(&lam).unwrap(), r.u_dagger);
    }

    #[test]
    fn bang_bang_rejects_plateau() {
        let grid = Arc::new(Grid::uniform(21, 0.0, 1.0).unwrap());
        let op = Arc::new(Operator::identity(grid.clone()));
        let bounds = BoxConstraints::uniform(grid.clone(), -1.0, 1.0).unwrap();
        let v = GridFunction::from_fn(grid, |x| (x - 0.5).max(0.0));
        assert!(matches!(make_bang_bang_asc(op, bounds, &v), Err(Error::Construction(_))));
    }

    #[test]
    fn mixed_fredholm_flat_on_plateau() {
        let p = BenchmarkSpec::new(BenchmarkKind::MixedAsc).with_operator(OperatorKind::Fredholm).build().unwrap();
        let r = p.reference.as_ref().unwrap();
        assert!(stat(&p) <= 1e-8);
        let nodes = p.op.domain().nodes();
        let inactive = r.inactive_set.as_ref().unwrap();
        for (i, &x) in nodes.iter().enumerate() {
            if x > 0.4 && x < 0.6 {
                assert!(inactive.contains(&i));
                assert!(r.p_dagger.values()[i].abs() <= 1e-10);
            }
        }
        // part of the plateau is strictly inside the box
        assert!(inactive.iter().any(|&i| r.u_dagger.values()[i].abs() < 0.99));
        for &i in r.active_set.as_ref().unwrap() {
            assert!(r.u_dagger.values()[i].abs() == 1.0);
        }
    }

    #[test]
    fn mixed_degenerate_plateaus() {
        let mut spec = BenchmarkSpec::new(BenchmarkKind::MixedAsc).with_n(51);
        spec.plateau = Some((0.401, 0.409));
        assert!(matches!(spec.build(), Err(Error::Construction(_))));
        spec.plateau = Some((-1.0, 2.0));
        spec.amplification = Some(1e3);
        spec.pattern = Pattern::Sine { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
        let p = spec.build().unwrap();
        assert!(p.reference.as_ref().unwrap().active_set.is_none());
    }

    #[test]
    fn non_injective_has_kernel_on_plateau() {
        let p = BenchmarkSpec::new(BenchmarkKind::NonInjective).with_n(41).build().unwrap();
        let r = p.reference.as_ref().unwrap();
        assert!(stat(&p) <= 1e-8);
        let m = p.op.matrix();
        let cols: Vec<usize> = plateau_nodes(p.op.domain(), (0.4, 0.6));
        let block = DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])]);
        let sv = block.singular_values();
        let rank = sv.iter().filter(|s| **s > 1e-12 * sv.max()).count();
        assert_eq!(rank, 3);
        assert!(rank < cols.len());
        assert!(r.active_set.as_ref().is_some_and(|a| !a.is_empty()));
    }

    #[test]
    fn building_is_deterministic() {
        for kind in BenchmarkKind::ALL {
            let spec = BenchmarkSpec::new(kind).with_n(41).with_seed(3);
            let (a, b) = (spec.build().unwrap(), spec.build().unwrap());
            assert_eq!(a.z, b.z, "{}", kind.as_str());
            assert_eq!(a.reference.unwrap().u_dagger, b.reference.unwrap().u_dagger);
        }
    }
}
