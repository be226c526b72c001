//! Verification suites: `adjoint`, `oracle`, `rates` and `invariants`.
//!
//! Each suite prints one line per check and fails if any check fails.

use std::str::FromStr;
use std::sync::Arc;

use bregbox::bregman::{
    init_state, init_state_seeded, run, step, BregmanState, ProblemInstance, Schedule, SolverConfig, StopRule,
    SubSolver, SubproblemForm,
};
use bregbox::constraints::BoxConstraints;
use bregbox::diagnostics::{default_eps_grid, fit_rate, verify_asc_measure, Metric, MetricRow};
use bregbox::grid::{Grid, GridFunction};
use bregbox::operator::{adjoint_consistency_check, LinearMap, Operator, OperatorKind};
use bregbox::problems::{BenchmarkKind, BenchmarkSpec, Pattern};
use bregbox::subproblem::{brute_force_oracle, solve_pdas, solve_projected_gradient, QuadSubproblem};
use bregbox::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Adjoint,
    Oracle,
    Rates,
    Invariants,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adjoint" => Ok(Suite::Adjoint),
            "oracle" => Ok(Suite::Oracle),
            "rates" => Ok(Suite::Rates),
            "invariants" => Ok(Suite::Invariants),
            other => Err(format!("unknown suite '{other}' (expected adjoint, oracle, rates or invariants)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }

    /// A check whose computation itself failed.
    fn errored(name: impl Into<String>, e: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Check> {
    match suite {
        Suite::Adjoint => adjoint_suite(seed),
        Suite::Oracle => oracle_suite(seed),
        Suite::Rates => rates_suite(),
        Suite::Invariants => invariants_suite(seed),
    }
}

/// Prints the table and turns failures into an error naming them.
pub fn cmd_verify(suite: Suite, seed: u64) -> Result<(), CliError> {
    let checks = run_suite(suite, seed);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!("{}  {:<width$}  {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

const ADJOINT_TOL: f64 = 1e-10;

fn adjoint_suite(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, op: CoreResult<Arc<Operator>>| {
        checks.push(match op {
            Ok(op) => {
                let defect = adjoint_consistency_check(op.as_ref(), 100, seed);
                Check::new(
                    format!("adjoint/{name}"),
                    defect <= ADJOINT_TOL,
                    format!("max relative defect {defect:.2e}"),
                )
            }
            Err(e) => Check::errored(format!("adjoint/{name}"), e),
        });
    };
    let uniform = |n| Grid::uniform(n, 0.0, 1.0).map(Arc::new);
    push("identity", uniform(17).map(|g| Arc::new(Operator::identity(g))));
    for kind in [OperatorKind::Dense, OperatorKind::Fredholm, OperatorKind::Poisson1d] {
        let spec = BenchmarkSpec::new(BenchmarkKind::Attainable).with_n(101).with_operator(kind).with_seed(seed);
        push(kind.as_str(), spec.operator());
    }
    // nonuniform midpoint weights on the domain and a coarser range grid
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let fredholm = Grid::midpoint(nodes, 0.0, 1.0).and_then(|dom| {
        let ran = Grid::uniform(25, 0.0, 1.0)?;
        Operator::fredholm(Arc::new(dom), Arc::new(ran), |x, t| (-(x - t).powi(2) / 0.02).exp()).map(Arc::new)
    });
    push("fredholm_nonuniform", fredholm);
    checks
}

/// A random box-constrained quadratic with `n ≤ 6` unknowns.
fn random_subproblem(rng: &mut ChaCha8Rng) -> CoreResult<(Operator, GridFunction, BoxConstraints, f64)> {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    let dom =
        Arc::new(Grid::new((0..n).map(|i| i as f64).collect(), (0..n).map(|_| rng.random_range(0.2..2.0)).collect())?);
    let ran =
        Arc::new(Grid::new((0..m).map(|i| i as f64).collect(), (0..m).map(|_| rng.random_range(0.2..2.0)).collect())?);
    let mat = nalgebra::DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let op = Operator::dense(dom.clone(), ran.clone(), mat)?;
    let b = GridFunction::new(ran, (0..m).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..0.5)).collect();
    let upper: Vec<f64> = lower.iter().map(|a| a + rng.random_range(0.1..2.0)).collect();
    let bounds = BoxConstraints::new(GridFunction::new(dom.clone(), lower)?, GridFunction::new(dom, upper)?)?;
    let alpha = 10f64.powf(rng.random_range(-2.0..=2.0));
    Ok((op, b, bounds, alpha))
}

const ORACLE_TOL: f64 = 1e-8;

fn oracle_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 2];
    let mut failures = [Vec::new(), Vec::new()];
    for trial in 0..100 {
        let outcome = random_subproblem(&mut rng).and_then(|(op, b, bounds, alpha)| {
            let sub = QuadSubproblem::new(&op, &b, alpha, &bounds)?;
            let exact = brute_force_oracle(&sub)?;
            let pg = solve_projected_gradient(&sub, 1e-14, 1_000_000, None)?;
            let pdas = solve_pdas(&sub, 1e-14, 100, None)?;
            Ok([pg.u.distance(&exact), pdas.u.distance(&exact)])
        });
        match outcome {
            Ok(d) => {
                for i in 0..2 {
                    worst[i] = worst[i].max(d[i]);
                    if d[i].is_nan() || d[i] > ORACLE_TOL {
                        failures[i].push(trial);
                    }
                }
            }
            Err(e) => {
                failures[0].push(trial);
                failures[1].push(trial);
                eprintln!("oracle trial {trial}: {e}");
            }
        }
    }
    ["pg", "pdas"]
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let detail = if failures[i].is_empty() {
                format!("100 instances, max deviation {:.2e}", worst[i])
            } else {
                format!("{} of 100 instances off, first trial {}", failures[i].len(), failures[i][0])
            };
            Check::new(format!("oracle/{name}"), failures[i].is_empty(), detail)
        })
        .collect()
}

fn sine(amplitude: f64, phase: f64) -> Pattern {
    Pattern::Sine { amplitude, frequency: 1.0, phase }
}

fn bang_bang() -> BenchmarkSpec {
    BenchmarkSpec::new(BenchmarkKind::BangBangAsc).with_n(201).with_pattern(sine(1.0, 0.1234))
}

fn source_condition() -> BenchmarkSpec {
    BenchmarkSpec::new(BenchmarkKind::SourceCondition)
        .with_n(201)
        .with_operator(OperatorKind::Poisson1d)
        .with_pattern(sine(1.0, 0.0))
}

fn history(p: &ProblemInstance, sched: &Schedule, k_max: usize, cfg: &SolverConfig) -> CoreResult<Vec<MetricRow>> {
    Ok(run(p, sched, &StopRule::max_iterations(k_max), cfg)?.state.history)
}

fn slope(rows: &[MetricRow], metric: Metric, range: (usize, usize)) -> CoreResult<f64> {
    Ok(fit_rate(rows, metric, range)?.slope)
}

fn kappa_of(p: &ProblemInstance) -> CoreResult<f64> {
    let r = p.reference.as_ref().ok_or_else(|| bregbox::Error::Precondition("missing reference".into()))?;
    let active = r.active_set.as_deref().unwrap_or(&[]);
    Ok(verify_asc_measure(&r.p_dagger, active, &default_eps_grid(&r.p_dagger, active, 16))?.kappa)
}

fn checked(name: &str, f: impl FnOnce() -> CoreResult<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check::new(name, pass, detail),
        Err(e) => Check::errored(name, e),
    }
}

/// The convergence-rate experiments: H-gap, source-condition and active-set rates
/// and the measure exponent of the active-set condition.
fn rates_suite() -> Vec<Check> {
    let alpha1 = || Schedule::constant(1.0);
    let mut checks = vec![
        checked("rates/H_gap", || {
            let p = bang_bang().build()?;
            let h = history(&p, &alpha1()?, 1000, &SolverConfig::default())?;
            let s = slope(&h, Metric::HGap, (10, 1000))?;
            Ok((s <= -0.9, format!("bang-bang, α ≡ 1: slope {s:.3} over [10, 1000] (need ≤ −0.9)")))
        }),
        checked("rates/source_condition", || {
            let p = source_condition().build()?;
            let h = history(&p, &alpha1()?, 1000, &SolverConfig::default())?;
            let su = slope(&h, Metric::UErrL2Sq, (10, 1000))?;
            let sl = slope(&h, Metric::LambdaAvgErrSq, (10, 1000))?;
            Ok((
                su <= -0.8 && sl <= -1.7,
                format!("u_err_L2_sq slope {su:.3} (need ≤ −0.8), lambda_avg_err_sq slope {sl:.3} (need ≤ −1.7)"),
            ))
        }),
    ];
    // s = 1 identifies the discrete active set of the n = 201 grid before k = 100,
    // so it runs on a finer grid with a weaker pattern
    let fine = BenchmarkSpec::new(BenchmarkKind::BangBangAsc).with_n(4001).with_pattern(sine(0.02, 0.1234));
    for (s, spec, solver) in [(0.0, bang_bang(), SubSolver::Pdas), (1.0, fine, SubSolver::ProjectedGradient)] {
        checks.push(checked(&format!("rates/active_set_s{s}"), || {
            let p = spec.build()?;
            let kappa = kappa_of(&p)?;
            let cfg = SolverConfig::default().with_solver(solver);
            let h = history(&p, &Schedule::polynomial(1.0, s)?, 2000, &cfg)?;
            let fit = slope(&h, Metric::UErrL2Sq, (100, 2000))?;
            let target = -(s + 1.0) + 0.25;
            Ok((fit <= target, format!("n={}, κ_est={kappa:.3}: slope {fit:.3} (need ≤ {target})", spec.n)))
        }));
    }
    checks.push(checked("rates/measure_exponent", || {
        let k1 = kappa_of(&bang_bang().build()?)?;
        let quad = GridFunction::from_fn(Arc::new(Grid::uniform(2001, 0.0, 1.0)?), |x| (x - 0.5).powi(2));
        let all: Vec<usize> = (0..quad.len()).collect();
        let k2 = verify_asc_measure(&quad, &all, &default_eps_grid(&quad, &all, 16))?.kappa;
        Ok((
            (0.9..=1.1).contains(&k1) && (0.45..=0.55).contains(&k2),
            format!("bang-bang κ_est {k1:.4} (need [0.9, 1.1]), (x−½)² κ_est {k2:.4} (need [0.45, 0.55])"),
        ))
    }));
    checks
}

fn invariant_specs(seed: u64) -> Vec<BenchmarkSpec> {
    vec![
        BenchmarkSpec::new(BenchmarkKind::Attainable).with_n(101),
        source_condition(),
        bang_bang(),
        BenchmarkSpec::new(BenchmarkKind::MixedAsc).with_n(201),
        BenchmarkSpec::new(BenchmarkKind::NonInjective).with_n(101).with_seed(seed),
    ]
}

/// Worst violations seen along one run.
#[derive(Default)]
struct Violations {
    objective_increase: f64,
    distance_increase: f64,
    lower_bound: f64,
    subgradient: f64,
    infeasibility: f64,
    summability: f64,
}

fn track(p: &ProblemInstance, sched: &Schedule, steps: usize, worst: &mut Violations) -> CoreResult<()> {
    let r = p.reference.as_ref().ok_or_else(|| bregbox::Error::Precondition("missing reference".into()))?;
    let cfg = SolverConfig::default();
    let mut state: BregmanState = init_state(p);
    let e0 = r.u_dagger.sub(&state.u);
    let d0 = 0.5 * e0.norm_sq() - e0.inner(&state.lambda.sub(&state.u));
    let mut increments = 0.0;
    for _ in 0..steps {
        let prev = state.u.clone();
        let prev_row = state.history.last().cloned();
        state = step(state, p, sched, &cfg)?;
        let row = state.history.last().expect("step records a row");
        if let Some(pr) = prev_row {
            worst.objective_increase = worst.objective_increase.max(row.h_uk - pr.h_uk);
            let dd = row.breg_dist_ref.unwrap_or(0.0) - pr.breg_dist_ref.unwrap_or(0.0);
            worst.distance_increase = worst.distance_increase.max(dd);
        }
        let d = row.breg_dist_ref.unwrap_or(f64::INFINITY);
        worst.lower_bound = worst.lower_bound.max(0.5 * row.u_err_l2_sq.unwrap_or(0.0) - d);
        let lambda = p.op.apply_adjoint(&state.mu)?;
        worst.subgradient = worst.subgradient.max(state.lambda.distance(&lambda));
        worst.infeasibility = worst.infeasibility.max(p.bounds.infeasibility(&state.u));
        increments += 0.5 * state.u.sub(&prev).norm_sq();
        worst.summability = worst.summability.max(increments - d0);
    }
    Ok(())
}

/// Per-iterate properties of the outer iteration on every benchmark and schedule,
/// agreement of the two subproblem forms, and the fixed point at `u†`.
fn invariants_suite(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let instances: Vec<(String, CoreResult<ProblemInstance>)> =
        invariant_specs(seed).into_iter().map(|s| (s.name.clone(), s.build())).collect();

    let mut worst = Violations::default();
    let mut errors = Vec::new();
    for (name, p) in &instances {
        let p = match p {
            Ok(p) => p,
            Err(e) => {
                errors.push(format!("{name}: {e}"));
                continue;
            }
        };
        for s in [0.0, 0.5, 1.0] {
            if let Err(e) = Schedule::polynomial(1.0, s).and_then(|sched| track(p, &sched, 200, &mut worst)) {
                errors.push(format!("{name} s={s}: {e}"));
            }
        }
    }
    let runs = format!("{} benchmarks x s ∈ {{0, 0.5, 1}} x 200 steps", instances.len());
    if !errors.is_empty() {
        checks.push(Check::new("invariants/runs", false, errors.join("; ")));
    }
    let bounds = [
        ("objective_monotone", worst.objective_increase, 1e-10, "max H(u_k) − H(u_{k−1})"),
        ("distance_monotone", worst.distance_increase, 1e-9, "max D_k − D_{k−1}"),
        ("distance_lower_bound", worst.lower_bound, 1e-10, "max ½‖u† − u_k‖² − D_k"),
        ("subgradient_identity", worst.subgradient, 1e-10, "max ‖λ_k − S*μ_k‖"),
        ("feasibility", worst.infeasibility, 0.0, "max bound violation"),
        ("square_summability", worst.summability, 1e-9, "max Σ ½‖u_i − u_{i−1}‖² − D_0"),
    ];
    for (name, value, tol, what) in bounds {
        checks.push(Check::new(format!("invariants/{name}"), value <= tol, format!("{what} = {value:.2e} ({runs})")));
    }

    checks.push(checked("invariants/form_equivalence", || {
        let sched = Schedule::constant(1.0)?;
        let mult_cfg = SolverConfig::default().with_tol(1e-12);
        let breg_cfg = mult_cfg.with_form(SubproblemForm::BregmanDistance);
        let mut max = 0.0f64;
        for (_, p) in instances.iter().take(4) {
            let Ok(p) = p else { continue };
            let (mut s_mult, mut s_breg) = (init_state(p), init_state(p));
            for _ in 0..50 {
                s_mult = step(s_mult, p, &sched, &mult_cfg)?;
                s_breg = step(s_breg, p, &sched, &breg_cfg)?;
                max = max.max(s_mult.u.distance(&s_breg.u));
            }
        }
        Ok((max <= 1e-8, format!("max ‖u_k^{{breg}} − u_k^{{mult}}‖ over 50 steps = {max:.2e} (need ≤ 1e-8)")))
    }));

    checks.push(checked("invariants/fixed_point", || {
        let sched = Schedule::constant(1.0)?;
        let cfg = SolverConfig::default();
        let mut max = 0.0f64;
        for (name, p) in &instances {
            let Ok(p) = p else { continue };
            let r = p.reference.as_ref().expect("benchmarks carry references");
            let mu = r
                .seed_multiplier
                .as_ref()
                .ok_or_else(|| bregbox::Error::Precondition(format!("{name}: no seed multiplier")))?;
            let mut state = init_state_seeded(p, &r.u_dagger, mu)?;
            for _ in 0..20 {
                state = step(state, p, &sched, &cfg)?;
                max = max.max(state.u.distance(&r.u_dagger));
            }
        }
        Ok((max <= 1e-7, format!("seeded at u†, max ‖u_k − u†‖ over 20 steps = {max:.2e} (need ≤ 1e-7)")))
    }));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        for (s, suite) in [("adjoint", Suite::Adjoint), ("oracle", Suite::Oracle), ("rates", Suite::Rates)] {
            assert_eq!(s.parse::<Suite>().unwrap(), suite);
        }
        assert!("all".parse::<Suite>().is_err());
    }

    #[test]
    fn adjoint_and_oracle_suites_pass() {
        for suite in [Suite::Adjoint, Suite::Oracle] {
            let checks = run_suite(suite, 7);
            assert!(!checks.is_empty());
            for c in checks {
                assert!(c.pass, "{}: {}", c.name, c.detail);
            }
        }
    }
}
