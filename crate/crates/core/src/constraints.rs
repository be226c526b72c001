//! The admissible set `U_ad = {u : u_a ≤ u ≤ u_b}`, its projection, and the
//! normal-cone and stationarity checks built on it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::operator::LinearMap;

#[derive(Debug, Clone)]
pub struct BoxConstraints {
    lower: GridFunction,
    upper: GridFunction,
}

/// Partition of the node indices by activity of the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetReport {
    pub lower_active: Vec<usize>,
    pub upper_active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    /// `u_a = u_b` at the node
    Pinned,
    Lower,
    Upper,
    Free,
}

impl BoxConstraints {
    pub fn new(lower: GridFunction, upper: GridFunction) -> Result<Self> {
        lower.check_same_grid(&upper, "BoxConstraints::new")?;
        for (i, (a, b)) in lower.values().iter().zip(upper.values()).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidBox(format!("bound at node {i} is not finite")));
            }
            if a > b {
                return Err(Error::InvalidBox(format!("lower bound {a} exceeds upper bound {b} at node {i}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Constant bounds `[a, b]` on every node.
    pub fn uniform(grid: Arc<Grid>, a: f64, b: f64) -> Result<Self> {
        Self::new(GridFunction::constant(grid.clone(), a), GridFunction::constant(grid, b))
    }

    pub fn lower(&self) -> &GridFunction {
        &self.lower
    }

    pub fn upper(&self) -> &GridFunction {
        &self.upper
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.lower.grid()
    }

    /// `‖u_b − u_a‖_∞`
    pub fn max_width(&self) -> f64 {
        self.lower.values().iter().zip(self.upper.values()).fold(0.0, |m, (a, b)| m.max(b - a))
    }

    /// Activity band `10⁻⁹·(1 + ‖u_b − u_a‖_∞)`.
    pub fn default_tol(&self) -> f64 {
        1e-9 * (1.0 + self.max_width())
    }

    /// Componentwise `median(u_a, v, u_b)`.
    pub fn project(&self, v: &GridFunction) -> Result<GridFunction> {
        v.check_same_grid(&self.lower, "BoxConstraints::project")?;
        Ok(self.project_unchecked(v))
    }

    pub(crate) fn project_unchecked(&self, v: &GridFunction) -> GridFunction {
        let mut out = v.clone();
        self.project_in_place(out.values_mut());
        out
    }

    pub(crate) fn project_in_place(&self, v: &mut [f64]) {
        for ((x, a), b) in v.iter_mut().zip(self.lower.values()).zip(self.upper.values()) {
            *x = x.clamp(*a, *b);
        }
    }

    pub fn contains(&self, u: &GridFunction, tol: f64) -> bool {
        self.infeasibility(u) <= tol
    }

    /// Largest bound violation of `u` (zero when feasible).
    pub fn infeasibility(&self, u: &GridFunction) -> f64 {
        u.values()
            .iter()
            .zip(self.lower.values())
            .zip(self.upper.values())
            .fold(0.0, |m, ((x, a), b)| m.max(a - x).max(x - b))
    }

    fn activity(&self, i: usize, x: f64, tol: f64) -> Activity {
        let (a, b) = (self.lower.values()[i], self.upper.values()[i]);
        let at_lower = x <= a + tol;
        let at_upper = x >= b - tol;
        match (at_lower, at_upper) {
            (true, true) if b - a <= tol => Activity::Pinned,
            // a narrow box with u near both ends: pick the closer bound
            (true, true) => {
                if x - a <= b - x {
                    Activity::Lower
                } else {
                    Activity::Upper
                }
            }
            (true, false) => Activity::Lower,
            (false, true) => Activity::Upper,
            (false, false) => Activity::Free,
        }
    }

    pub fn classify_active(&self, u: &GridFunction, tol: f64) -> Result<ActiveSetReport> {
        u.check_same_grid(&self.lower, "BoxConstraints::classify_active")?;
        let mut report = ActiveSetReport { lower_active: vec![], upper_active: vec![], inactive: vec![], tol };
        for (i, &x) in u.values().iter().enumerate() {
            match self.activity(i, x, tol) {
                Activity::Lower | Activity::Pinned => report.lower_active.push(i),
                Activity::Upper => report.upper_active.push(i),
                Activity::Free => report.inactive.push(i),
            }
        }
        Ok(report)
    }

    /// Weighted L² norm of the violation of `w ∈ ∂I_{U_ad}(u)`: `w ≤ 0` where `u` sits
    /// on the lower bound, `w ≥ 0` on the upper bound, `w = 0` in between. Zero
    /// means `w` lies in the normal cone.
    pub fn normal_cone_residual(&self, u: &GridFunction, w: &GridFunction, tol: f64) -> Result<f64> {
        u.check_same_grid(&self.lower, "BoxConstraints::normal_cone_residual")?;
        w.check_same_grid(&self.lower, "BoxConstraints::normal_cone_residual")?;
        let infeasible = self.infeasibility(u);
        if infeasible > tol {
            return Err(Error::Precondition(format!("point violates the bounds by {infeasible:.3e} (band {tol:.3e})")));
        }
        Ok(self.normal_cone_residual_unchecked(u, w, tol))
    }

    pub(crate) fn normal_cone_residual_unchecked(&self, u: &GridFunction, w: &GridFunction, tol: f64) -> f64 {
        let h = u.grid().weights();
        let mut acc = 0.0;
        for (i, (&x, &wi)) in u.values().iter().zip(w.values()).enumerate() {
            let viol = match self.activity(i, x, tol) {
                Activity::Pinned => 0.0,
                Activity::Lower => wi.max(0.0),
                Activity::Upper => (-wi).max(0.0),
                Activity::Free => wi.abs(),
            };
            acc += h[i] * viol * viol;
        }
        acc.sqrt()
    }
}

/// `‖u − P_{U_ad}(u − Θ S*(Su − z))‖`, zero exactly at minimizers of `½‖Su − z‖²`
/// over the box.
pub fn stationarity_residual(
    op: &dyn LinearMap,
    z: &GridFunction,
    bounds: &BoxConstraints,
    u: &GridFunction,
    theta: f64,
) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::Precondition(format!("theta must be positive, got {theta}")));
    }
    u.check_same_grid(bounds.lower(), "stationarity_residual")?;
    let r = op.apply(u)?.sub(z);
    let grad = op.apply_adjoint(&r)?;
    let step = bounds.project_unchecked(&u.axpy(-theta, &grad));
    Ok(u.distance(&step))
}

/// `Θ = 1/‖S‖²` with the cached norm estimate.
pub fn default_theta(norm_estimate: f64) -> f64 {
    if norm_estimate > 0.0 {
        1.0 / (norm_estimate * norm_estimate)
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Operator;

    fn unit(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new((0..n).map(|i| i as f64).collect(), vec![1.0; n]).unwrap())
    }

    fn gf(g: &Arc<Grid>, v: &[f64]) -> GridFunction {
        GridFunction::new(g.clone(), v.to_vec()).unwrap()
    }

    #[test]
    fn projection_clips() {
        let g = unit(3);
        let b = BoxConstraints::uniform(g.clone(), -1.0, 1.0).unwrap();
        let p = b.project(&gf(&g, &[2.0, 0.5, -3.0])).unwrap();
        assert_eq!(p.values(), &[1.0, 0.5, -1.0]);
        assert_eq!(b.project(&p).unwrap(), p);
    }

    #[test]
    fn degenerate_box_pins_value() {
        let g = unit(2);
        let lo = gf(&g, &[0.3, -1.0]);
        let hi = gf(&g, &[0.3, 1.0]);
        let b = BoxConstraints::new(lo, hi).unwrap();
        for v in [-5.0, 0.3, 9.0] {
            assert_eq!(b.project(&gf(&g, &[v, 0.0])).unwrap().values()[0], 0.3);
        }
    }

    #[test]
    fn rejects_crossed_or_infinite_bounds() {
        let g = unit(2);
        assert!(BoxConstraints::new(gf(&g, &[0.0, 1.0]), gf(&g, &[1.0, 0.5])).is_err());
        assert!(BoxConstraints::new(gf(&g, &[0.0, f64::NEG_INFINITY]), gf(&g, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn normal_cone_cases() {
        let g = unit(3);
        let b = BoxConstraints::uniform(g.clone(), -1.0, 1.0).unwrap();
        let tol = b.default_tol();
        let interior = gf(&g, &[0.0, 0.2, -0.4]);
        assert_eq!(b.normal_cone_residual(&interior, &GridFunction::zeros(g.clone()), tol).unwrap(), 0.0);

        let at_lower = gf(&g, &[-1.0, 0.2, -0.4]);
        let w = gf(&g, &[-1.0, 0.0, 0.0]);
        assert_eq!(b.normal_cone_residual(&at_lower, &w, tol).unwrap(), 0.0);

        let w = gf(&g, &[0.0, 0.5, 0.0]);
        assert!((b.normal_cone_residual(&interior, &w, tol).unwrap() - 0.5).abs() < 1e-15);

        let infeasible = gf(&g, &[2.0, 0.0, 0.0]);
        assert!(matches!(b.normal_cone_residual(&infeasible, &w, tol), Err(Error::Precondition(_))));
    }

    #[test]
    fn stationarity_of_clipped_target_under_identity() {
        let g = unit(3);
        let b = BoxConstraints::uniform(g.clone(), -1.0, 1.0).unwrap();
        let op = Operator::identity(g.clone());
        let z = gf(&g, &[2.0, 0.5, -3.0]);
        let u = gf(&g, &[1.0, 0.5, -1.0]);
        assert_eq!(stationarity_residual(&op, &z, &b, &u, 1.0).unwrap(), 0.0);
        let off = gf(&g, &[1.0, 0.6, -1.0]);
        assert!(stationarity_residual(&op, &z, &b, &off, 1.0).unwrap() > 0.05);
        assert!(stationarity_residual(&op, &z, &b, &u, 0.0).is_err());
    }

    #[test]
    fn classification() {
        let g = unit(4);
        let b = BoxConstraints::uniform(g.clone(), -1.0, 1.0).unwrap();
        let tol = b.default_tol();
        let r = b.classify_active(&GridFunction::constant(g.clone(), -1.0), tol).unwrap();
        assert_eq!(r.lower_active.len(), 4);
        let r = b.classify_active(&GridFunction::constant(g.clone(), 0.1), tol).unwrap();
        assert_eq!(r.inactive.len(), 4);
        let r = b.classify_active(&gf(&g, &[1.0, 0.0, -1.0, 0.5]), tol).unwrap();
        assert_eq!((r.lower_active, r.upper_active, r.inactive), (vec![2], vec![0], vec![1, 3]));
    }
}
