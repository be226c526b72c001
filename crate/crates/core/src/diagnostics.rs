//! Reference-based error metrics, γ-arithmetic, log-log rate fits and numerical
//! checks of the source / active-set hypotheses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bregman::{BregmanState, IterationMode, ProblemInstance, Schedule};
use crate::constraints::stationarity_residual;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::LinearMap;

/// A known minimizer together with the certificates the rate theory talks about.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub u_dagger: GridFunction,
    /// `S u†`
    pub y_dagger: GridFunction,
    /// `S*(z − S u†)`
    pub p_dagger: GridFunction,
    /// Source element `w` (in Y) of the source or active-set condition.
    pub source_w: Option<GridFunction>,
    pub inactive_set: Option<Vec<usize>>,
    pub active_set: Option<Vec<usize>>,
    pub kappa: Option<f64>,
    /// Some `μ` in Y with `u† = P_{U_ad}(S*μ)`, usable to start the iteration at u†
    /// with a consistent subgradient.
    pub seed_multiplier: Option<GridFunction>,
}

/// One row of the per-iteration history. Reference-dependent fields are `None`
/// when no reference is available.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub k: usize,
    pub alpha_k: f64,
    pub gamma_k: f64,
    pub h_uk: f64,
    pub h_gap: Option<f64>,
    pub stat_res: f64,
    pub u_err_l2_sq: Option<f64>,
    pub u_err_l1_a: Option<f64>,
    pub breg_dist_ref: Option<f64>,
    pub v_k_norm: Option<f64>,
    pub lambda_avg_err_sq: Option<f64>,
    pub subproblem_iters: usize,
    pub wall_ms: f64,
}

/// Columns of [`MetricRow`] that can be fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    AlphaK,
    GammaK,
    HUk,
    HGap,
    StatRes,
    UErrL2Sq,
    UErrL1A,
    BregDistRef,
    VkNorm,
    LambdaAvgErrSq,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::AlphaK,
        Metric::GammaK,
        Metric::HUk,
        Metric::HGap,
        Metric::StatRes,
        Metric::UErrL2Sq,
        Metric::UErrL1A,
        Metric::BregDistRef,
        Metric::VkNorm,
        Metric::LambdaAvgErrSq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AlphaK => "alpha_k",
            Metric::GammaK => "gamma_k",
            Metric::HUk => "H_uk",
            Metric::HGap => "H_gap",
            Metric::StatRes => "stat_res",
            Metric::UErrL2Sq => "u_err_L2_sq",
            Metric::UErrL1A => "u_err_L1_A",
            Metric::BregDistRef => "breg_dist_ref",
            Metric::VkNorm => "v_k_norm",
            Metric::LambdaAvgErrSq => "lambda_avg_err_sq",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Parse(format!("unknown metric '{s}'")))
    }
}

impl MetricRow {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::AlphaK => Some(self.alpha_k),
            Metric::GammaK => Some(self.gamma_k),
            Metric::HUk => Some(self.h_uk),
            Metric::HGap => self.h_gap,
            Metric::StatRes => Some(self.stat_res),
            Metric::UErrL2Sq => self.u_err_l2_sq,
            Metric::UErrL1A => self.u_err_l1_a,
            Metric::BregDistRef => self.breg_dist_ref,
            Metric::VkNorm => self.v_k_norm,
            Metric::LambdaAvgErrSq => self.lambda_avg_err_sq,
        }
    }
}

/// `γ_k = Σ_{j=1}^k 1/α_j`, with `γ_0 = 0`.
pub fn gamma_of(schedule: &Schedule, k: usize) -> f64 {
    (1..=k).map(|j| 1.0 / schedule.alpha(j)).sum()
}

/// `H(u) = ½‖Su − z‖²_Y`
pub fn objective(p: &ProblemInstance, u: &GridFunction) -> Result<f64> {
    Ok(0.5 * p.op.apply(u)?.sub(&p.z).norm_sq())
}

/// `H(u) − H(u†)` evaluated as `½‖S(u − u†)‖² − ⟨u − u†, p†⟩`, which avoids the
/// cancellation of subtracting two nearly equal objective values.
pub fn objective_gap(p: &ProblemInstance, reference: &ReferenceSolution, u: &GridFunction) -> Result<f64> {
    let e = u.sub(&reference.u_dagger);
    let se = p.op.apply(&e)?;
    Ok(0.5 * se.norm_sq() - e.inner(&reference.p_dagger))
}

/// `D^λ(u, v) = ½‖u − v‖² − ⟨u − v, w⟩` for `λ = v + w`, without the normal-cone
/// precondition check.
pub(crate) fn bregman_distance_raw(u: &GridFunction, v: &GridFunction, w: &GridFunction) -> f64 {
    let d = u.sub(v);
    0.5 * d.norm_sq() - d.inner(w)
}

/// Computes the metrics of the current state. `state.v` must already include the
/// current iterate.
pub fn record_metrics(
    state: &BregmanState,
    p: &ProblemInstance,
    theta: f64,
    subproblem_iters: usize,
    wall_ms: f64,
) -> Result<MetricRow> {
    let h_uk = objective(p, &state.u)?;
    let stat_res = stationarity_residual(p.op.as_ref(), &p.z, &p.bounds, &state.u, theta)?;
    let mut row = MetricRow {
        k: state.k,
        alpha_k: state.alpha,
        gamma_k: state.gamma,
        h_uk,
        h_gap: None,
        stat_res,
        u_err_l2_sq: None,
        u_err_l1_a: None,
        breg_dist_ref: None,
        v_k_norm: None,
        lambda_avg_err_sq: None,
        subproblem_iters,
        wall_ms,
    };
    let Some(reference) = &p.reference else {
        return Ok(row);
    };
    let e = state.u.sub(&reference.u_dagger);
    row.h_gap = Some(objective_gap(p, reference, &state.u)?);
    row.u_err_l2_sq = Some(e.norm_sq());
    row.u_err_l1_a = reference.active_set.as_deref().map(|a| e.l1_on(a));
    row.breg_dist_ref = Some(match state.mode {
        IterationMode::Bregman => {
            let w = state.lambda.sub(&state.u);
            bregman_distance_raw(&reference.u_dagger, &state.u, &w)
        }
        IterationMode::Ppm => 0.5 * e.norm_sq(),
    });
    row.v_k_norm = state.v.as_ref().map(GridFunction::norm);
    if state.mode == IterationMode::Bregman && state.k > 0 && state.gamma > 0.0 {
        let avg = state.lambda.scale(1.0 / state.gamma);
        row.lambda_avg_err_sq = Some(avg.sub(&reference.p_dagger).norm_sq());
    }
    Ok(row)
}

/// Least-squares line through `(log k, log metric)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Fits `log y = intercept + slope·log x`. Needs at least two points with
/// distinct `x` and all `x, y > 0`.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Data("need at least two points for a log-log fit".into()));
    }
    if let Some((x, y)) = xs.iter().zip(ys).find(|(x, y)| !(**x > 0.0 && **y > 0.0)) {
        return Err(Error::Data(format!("log-log fit needs positive data, got ({x}, {y})")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("log-log fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // a constant series is fitted exactly
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { slope, intercept, r2, points: xs.len() })
}

/// Fits the metric against `k` over the inclusive range `k_range`.
pub fn fit_rate(history: &[MetricRow], metric: Metric, k_range: (usize, usize)) -> Result<RateFit> {
    let (lo, hi) = k_range;
    let mut ks = Vec::new();
    let mut ys = Vec::new();
    for row in history.iter().filter(|r| r.k >= lo && r.k <= hi) {
        let y =
            row.get(metric).ok_or_else(|| Error::Data(format!("metric {} missing at k = {}", metric.name(), row.k)))?;
        if !(y > 0.0) {
            return Err(Error::Data(format!("metric {} is not positive at k = {} ({y:e})", metric.name(), row.k)));
        }
        ks.push(row.k as f64);
        ys.push(y);
    }
    if ks.len() < 10 {
        return Err(Error::Data(format!("need at least 10 rows in k ∈ [{lo}, {hi}], found {}", ks.len())));
    }
    fit_log_log(&ks, &ys)
}

/// Outcome of fitting the measure function `m(ε) = |{x ∈ A : 0 < |p†(x)| < ε}|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscMeasureFit {
    /// Fitted exponent; `+∞` when `m(ε) = 0` on the whole grid.
    pub kappa: f64,
    pub coefficient: f64,
    pub points: usize,
}

pub fn measure_near_zero(p_dagger: &GridFunction, active: &[usize], eps: f64) -> f64 {
    let h = p_dagger.grid().weights();
    let p = p_dagger.values();
    active.iter().filter(|&&i| p[i] != 0.0 && p[i].abs() < eps).map(|&i| h[i]).sum()
}

/// Fits `m(ε) ≈ c ε^κ` on the part of `eps_grid` where `m` is neither zero nor the
/// full measure of `A`.
pub fn verify_asc_measure(p_dagger: &GridFunction, active: &[usize], eps_grid: &[f64]) -> Result<AscMeasureFit> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Precondition("eps grid must be nonempty and positive".into()));
    }
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("eps grid must be increasing".into()));
    }
    let h = p_dagger.grid().weights();
    let full: f64 = active.iter().map(|&i| h[i]).sum();
    let measures: Vec<f64> = eps_grid.iter().map(|&e| measure_near_zero(p_dagger, active, e)).collect();
    if measures.iter().all(|&m| m == 0.0) {
        return Ok(AscMeasureFit { kappa: f64::INFINITY, coefficient: 0.0, points: 0 });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = eps_grid
        .iter()
        .zip(&measures)
        .filter(|(_, &m)| m > 0.0 && m < full * (1.0 - 1e-12))
        .map(|(&e, &m)| (e, m))
        .unzip();
    let fit = fit_log_log(&xs, &ys)?;
    Ok(AscMeasureFit { kappa: fit.slope, coefficient: fit.intercept.exp(), points: fit.points })
}

/// Nodes of `A` that must lie below the smallest `ε` of the default grid.
pub const MIN_RESOLVED_NODES: usize = 12;

/// Log-spaced `ε` values up to `max_A|p†|/4`, starting at `max_A|p†|/80` or, on
/// coarse grids, at the level below which fewer than [`MIN_RESOLVED_NODES`] nodes
/// of `A` fall. Below that level the node-sum measure is a staircase in steps of
/// `h` and biases the fitted exponent upwards.
pub fn default_eps_grid(p_dagger: &GridFunction, active: &[usize], points: usize) -> Vec<f64> {
    let mut mags: Vec<f64> = active.iter().map(|&i| p_dagger.values()[i].abs()).collect();
    mags.sort_by(f64::total_cmp);
    let pmax = mags.last().copied().unwrap_or(0.0);
    let hi = pmax / 4.0;
    let resolved = mags.get(MIN_RESOLVED_NODES).copied().unwrap_or(0.0);
    let lo = (pmax / 80.0).max(resolved).min(hi / 4.0);
    let points = points.max(2);
    (0..points).map(|j| lo * (hi / lo).powf(j as f64 / (points - 1) as f64)).collect()
}

/// Samples feasible `u ≠ u†` and returns the smallest ratio
/// `⟨−p†, u − u†⟩ / ‖u − u†‖_{L¹(A)}^{1+1/κ}`.
///
/// Half of the samples are uniform in the box; the other half perturb `u†` on a
/// random window of random width, which probes the neighbourhood of the switching
/// points where the ratio is smallest.
pub fn verify_strengthened_vi(
    p: &ProblemInstance,
    reference: &ReferenceSolution,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let active =
        reference.active_set.as_deref().ok_or_else(|| Error::Precondition("reference has no active set".into()))?;
    let kappa = reference.kappa.ok_or_else(|| Error::Precondition("reference has no kappa".into()))?;
    if active.is_empty() {
        return Ok(f64::INFINITY);
    }
    let exponent = 1.0 + 1.0 / kappa;
    let lower = p.bounds.lower().values();
    let upper = p.bounds.upper().values();
    let ud = reference.u_dagger.values();
    let n = ud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut drawn = 0;
    while drawn < samples {
        let mut u = ud.to_vec();
        if drawn % 2 == 0 {
            for i in 0..n {
                u[i] = rng.random_range(lower[i]..=upper[i]);
            }
        } else {
            let width = 1 + rng.random_range(0..n.max(2) / 2);
            let start = rng.random_range(0..n);
            let amount: f64 = rng.random_range(0.0..=1.0);
            for i in start..(start + width).min(n) {
                let target = rng.random_range(lower[i]..=upper[i]);
                u[i] = ud[i] + amount * (target - ud[i]);
            }
        }
        let u = GridFunction::from_parts(reference.u_dagger.grid().clone(), u);
        let e = u.sub(&reference.u_dagger);
        let denom = e.l1_on(active).powf(exponent);
        if denom == 0.0 {
            // u agrees with u† on A; the inequality is vacuous there
            continue;
        }
        drawn += 1;
        let ratio = -reference.p_dagger.inner(&e) / denom;
        if !(ratio > 0.0) {
            return Err(Error::Data(format!(
                "strengthened variational inequality violated: ratio {ratio:e} at sample {drawn}"
            )));
        }
        worst = worst.min(ratio);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::Grid;

    #[test]
    fn gamma_sums() {
        assert_eq!(gamma_of(&Schedule::constant(1.0).unwrap(), 7), 7.0);
        assert_eq!(gamma_of(&Schedule::constant(1.0).unwrap(), 0), 0.0);
        assert_eq!(gamma_of(&Schedule::polynomial(1.0, 1.0).unwrap(), 3), 6.0);
        let g = gamma_of(&Schedule::polynomial(2.0, 0.5).unwrap(), 2);
        assert!((g - 0.5 * (1.0 + 2f64.sqrt())).abs() < 1e-15);
        assert!((g - 1.20711).abs() < 1e-5);
    }

    fn rows(f: impl Fn(f64) -> f64, ks: std::ops::RangeInclusive<usize>) -> Vec<MetricRow> {
        ks.map(|k| MetricRow {
            k,
            alpha_k: 1.0,
            gamma_k: k as f64,
            h_uk: f(k as f64),
            h_gap: Some(f(k as f64)),
            stat_res: 0.0,
            u_err_l2_sq: None,
            u_err_l1_a: None,
            breg_dist_ref: None,
            v_k_norm: None,
            lambda_avg_err_sq: None,
            subproblem_iters: 0,
            wall_ms: 0.0,
        })
        .collect()
    }

    #[test]
    fn exact_power_law_fit() {
        let h = rows(|k| k.powi(-2), 1..=50);
        let fit = fit_rate(&h, Metric::HGap, (1, 50)).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-6);
        assert!(fit.r2 >= 0.999999);
    }

    #[test]
    fn log_corrected_rate_is_shallower() {
        let h = rows(|k| 5.0 * k.ln() / k, 10..=1000);
        let fit = fit_rate(&h, Metric::HGap, (10, 1000)).unwrap();
        assert!(fit.slope > -1.0 && fit.slope < -0.75, "{}", fit.slope);
    }

    #[test]
    fn constant_metric_has_zero_slope() {
        let h = rows(|_| 3.0, 1..=20);
        let fit = fit_rate(&h, Metric::HUk, (1, 20)).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_nonpositive_and_short_ranges() {
        let h = rows(|k| k - 5.0, 1..=20);
        assert!(matches!(fit_rate(&h, Metric::HGap, (1, 20)), Err(Error::Data(_))));
        let h = rows(|k| 1.0 / k, 1..=20);
        assert!(fit_rate(&h, Metric::HGap, (1, 5)).is_err());
        assert!(fit_rate(&h, Metric::UErrL2Sq, (1, 20)).is_err());
    }

    #[test]
    fn asc_measure_linear_zero() {
        let g = Arc::new(Grid::uniform(2001, 0.0, 1.0).unwrap());
        let p = GridFunction::from_fn(g, |x| x - 0.5);
        let all: Vec<usize> = (0..p.len()).collect();
        let eps = default_eps_grid(&p, &all, 12);
        let fit = verify_asc_measure(&p, &all, &eps).unwrap();
        assert!((fit.kappa - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.coefficient - 2.0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn asc_measure_one_signed_quadratic_zero() {
        let g = Arc::new(Grid::uniform(2001, 0.0, 1.0).unwrap());
        let p = GridFunction::from_fn(g, |x| (x - 0.5).powi(2));
        let all: Vec<usize> = (0..p.len()).collect();
        let eps = default_eps_grid(&p, &all, 12);
        let fit = verify_asc_measure(&p, &all, &eps).unwrap();
        assert!((fit.kappa - 0.5).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn asc_measure_vacuous_when_bounded_away() {
        let g = Arc::new(Grid::uniform(101, 0.0, 1.0).unwrap());
        let p = GridFunction::from_fn(g, |x| 1.0 + x);
        let all: Vec<usize> = (0..p.len()).collect();
        let fit = verify_asc_measure(&p, &all, &[0.01, 0.1, 0.5]).unwrap();
        assert!(fit.kappa.is_infinite());
    }

    proptest::proptest! {
        #[test]
        fn fit_is_scale_invariant(scale in 1e-6f64..1e6, rate in -3.0f64..0.5) {
            let base = rows(|k| k.powf(rate) * (1.0 + 0.1 * (k * 0.7).sin()), 10..=200);
            let scaled: Vec<MetricRow> = base
                .iter()
                .map(|r| MetricRow { h_gap: r.h_gap.map(|v| v * scale), ..r.clone() })
                .collect();
            let a = fit_rate(&base, Metric::HGap, (10, 200)).unwrap();
            let b = fit_rate(&scaled, Metric::HGap, (10, 200)).unwrap();
            proptest::prop_assert!((a.slope - b.slope).abs() < 1e-9);
        }

        #[test]
        fn gamma_is_additive(c in 0.1f64..5.0, s in 0.0f64..2.0, k in 0usize..40, m in 0usize..40) {
            let sched = Schedule::polynomial(c, s).unwrap();
            let tail: f64 = (k + 1..=k + m).map(|j| 1.0 / sched.alpha(j)).sum();
            let lhs = gamma_of(&sched, k + m);
            let rhs = gamma_of(&sched, k) + tail;
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }
    }
}
