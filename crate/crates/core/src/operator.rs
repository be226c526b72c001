//! Linear operators `S: U → Y` between weighted grid spaces, with adjoints taken in
//! the weighted inner products.
//!
//! For a coordinate matrix `M` the weighted adjoint is `S* = W_U⁻¹ Mᵀ W_Y`, where
//! `W_U`, `W_Y` are the diagonal quadrature-weight matrices of the two grids.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};

/// Anything that maps grid functions linearly and knows its weighted adjoint.
pub trait LinearMap: Send + Sync {
    fn domain(&self) -> &Arc<Grid>;
    fn range(&self) -> &Arc<Grid>;
    fn apply(&self, u: &GridFunction) -> Result<GridFunction>;
    fn apply_adjoint(&self, y: &GridFunction) -> Result<GridFunction>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Dense,
    Fredholm,
    Poisson1d,
}

impl OperatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Dense => "dense",
            OperatorKind::Fredholm => "fredholm",
            OperatorKind::Poisson1d => "poisson1d",
        }
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(OperatorKind::Dense),
            "fredholm" => Ok(OperatorKind::Fredholm),
            "poisson1d" => Ok(OperatorKind::Poisson1d),
            other => Err(Error::Parse(format!("unknown operator kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// LU factors of the constant-coefficient Dirichlet Laplacian `(−1, 2, −1)/h²`
/// on the interior nodes (Thomas algorithm).
#[derive(Debug, Clone)]
struct Tridiagonal {
    inv_h2: f64,
    /// modified super-diagonal
    c_prime: Vec<f64>,
    /// reciprocal pivots
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    fn laplacian(m: usize, h: f64) -> Self {
        let inv_h2 = 1.0 / (h * h);
        let (diag, off) = (2.0 * inv_h2, -inv_h2);
        let mut c_prime = vec![0.0; m];
        let mut inv_pivot = vec![0.0; m];
        for i in 0..m {
            let pivot = if i == 0 { diag } else { diag - off * c_prime[i - 1] };
            inv_pivot[i] = 1.0 / pivot;
            c_prime[i] = off * inv_pivot[i];
        }
        Self { inv_h2, c_prime, inv_pivot }
    }

    fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let m = rhs.len();
        if m == 0 {
            return;
        }
        let off = -self.inv_h2;
        out[0] = rhs[0] * self.inv_pivot[0];
        for i in 1..m {
            out[i] = (rhs[i] - off * out[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..m - 1).rev() {
            out[i] -= self.c_prime[i] * out[i + 1];
        }
    }
}

#[derive(Debug)]
enum Repr {
    Matrix(DMatrix<f64>),
    Poisson(Tridiagonal),
}

/// An immutable discretized operator. Dense matrix, Gram matrix and norm estimate
/// are computed on first use and cached.
#[derive(Debug)]
pub struct Operator {
    domain: Arc<Grid>,
    range: Arc<Grid>,
    kind: OperatorKind,
    repr: Repr,
    matrix: OnceLock<DMatrix<f64>>,
    gram: OnceLock<DMatrix<f64>>,
    norm: OnceLock<f64>,
}

/// Power-iteration count used for the cached norm estimate.
pub const NORM_ESTIMATE_ITERS: usize = 100;

impl Operator {
    fn from_repr(domain: Arc<Grid>, range: Arc<Grid>, kind: OperatorKind, repr: Repr) -> Self {
        Self { domain, range, kind, repr, matrix: OnceLock::new(), gram: OnceLock::new(), norm: OnceLock::new() }
    }

    /// Coordinate matrix `M` with `(Su)_i = Σ_j M_ij u_j`.
    pub fn dense(domain: Arc<Grid>, range: Arc<Grid>, m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != range.len() || m.ncols() != domain.len() {
            return Err(Error::InvalidOperator(format!(
                "matrix is {}x{} but grids need {}x{}",
                m.nrows(),
                m.ncols(),
                range.len(),
                domain.len()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("matrix has non-finite entries".into()));
        }
        Ok(Self::from_repr(domain, range, OperatorKind::Dense, Repr::Matrix(m)))
    }

    pub fn identity(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self::from_repr(grid.clone(), grid, OperatorKind::Dense, Repr::Matrix(DMatrix::identity(n, n)))
    }

    /// Integral operator `(Su)(x) = ∫ k(x, t) u(t) dt`, discretized with the
    /// domain grid's quadrature: `M_ij = k(x_i, t_j) h_j`.
    pub fn fredholm(domain: Arc<Grid>, range: Arc<Grid>, kernel: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (xs, ts, hs) = (range.nodes(), domain.nodes(), domain.weights());
        let m = DMatrix::from_fn(range.len(), domain.len(), |i, j| kernel(xs[i], ts[j]) * hs[j]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("kernel produced non-finite values".into()));
        }
        Ok(Self::from_repr(domain, range, OperatorKind::Fredholm, Repr::Matrix(m)))
    }

    /// Solution operator of `−y'' = u` with `y = 0` at both ends, on a uniform grid.
    /// Boundary entries of `u` are ignored and boundary entries of `y` are zero.
    pub fn poisson1d(grid: Arc<Grid>) -> Result<Self> {
        let h =
            grid.uniform_spacing().ok_or_else(|| Error::InvalidOperator("poisson1d needs a uniform grid".into()))?;
        if grid.len() < 3 {
            return Err(Error::InvalidOperator("poisson1d needs at least 3 nodes".into()));
        }
        let tri = Tridiagonal::laplacian(grid.len() - 2, h);
        Ok(Self::from_repr(grid.clone(), grid, OperatorKind::Poisson1d, Repr::Poisson(tri)))
    }

    /// Reads a dense matrix from text: first line `rows cols`, then the entries in
    /// row-major order separated by whitespace.
    pub fn dense_from_text(text: &str, domain: Arc<Grid>, range: Arc<Grid>) -> Result<Self> {
        let m = parse_matrix(text)?;
        Self::dense(domain, range, m)
    }

    pub fn dense_from_file(path: &Path, domain: Arc<Grid>, range: Arc<Grid>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::dense_from_text(&text, domain, range)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// Coordinate matrix `M` (materialized column by column for poisson1d).
    pub fn matrix(&self) -> &DMatrix<f64> {
        match &self.repr {
            Repr::Matrix(m) => m,
            Repr::Poisson(_) => self.matrix.get_or_init(|| {
                let n = self.domain.len();
                let mut m = DMatrix::zeros(n, n);
                let mut e = vec![0.0; n];
                let mut col = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    self.apply_raw(&e, &mut col);
                    m.column_mut(j).copy_from_slice(&col);
                    e[j] = 0.0;
                }
                m
            }),
        }
    }

    /// Weighted Gram matrix `Mᵀ W_Y M`, so that `W_U S*S = Mᵀ W_Y M` in coordinates.
    pub fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| {
            let m = self.matrix();
            let mut wm = m.clone();
            for (i, w) in self.range.weights().iter().enumerate() {
                wm.row_mut(i).scale_mut(*w);
            }
            m.transpose() * wm
        })
    }

    /// Cached power-iteration estimate of `‖S‖`.
    pub fn norm_estimate(&self) -> f64 {
        *self.norm.get_or_init(|| operator_norm_estimate(self, NORM_ESTIMATE_ITERS))
    }

    fn apply_raw(&self, u: &[f64], out: &mut [f64]) {
        match &self.repr {
            Repr::Matrix(m) => {
                let y = m * DVector::from_column_slice(u);
                out.copy_from_slice(y.as_slice());
            }
            Repr::Poisson(tri) => {
                let n = u.len();
                out[0] = 0.0;
                out[n - 1] = 0.0;
                tri.solve(&u[1..n - 1], &mut out[1..n - 1]);
            }
        }
    }

    fn apply_adjoint_raw(&self, y: &[f64], out: &mut [f64]) {
        let wy: Vec<f64> = y.iter().zip(self.range.weights()).map(|(v, w)| v * w).collect();
        match &self.repr {
            Repr::Matrix(m) => {
                let r = m.tr_mul(&DVector::from_column_slice(&wy));
                out.copy_from_slice(r.as_slice());
            }
            // the interior block is symmetric, so Mᵀ = M
            Repr::Poisson(_) => self.apply_raw(&wy, out),
        }
        for (o, w) in out.iter_mut().zip(self.domain.weights()) {
            *o /= w;
        }
    }
}

impl LinearMap for Operator {
    fn domain(&self) -> &Arc<Grid> {
        &self.domain
    }

    fn range(&self) -> &Arc<Grid> {
        &self.range
    }

    fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        u.check_on(&self.domain, "Operator::apply")?;
        let mut out = vec![0.0; self.range.len()];
        self.apply_raw(u.values(), &mut out);
        Ok(GridFunction::from_parts(self.range.clone(), out))
    }

    fn apply_adjoint(&self, y: &GridFunction) -> Result<GridFunction> {
        y.check_on(&self.range, "Operator::apply_adjoint")?;
        let mut out = vec![0.0; self.domain.len()];
        self.apply_adjoint_raw(y.values(), &mut out);
        Ok(GridFunction::from_parts(self.domain.clone(), out))
    }
}

fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad dimension '{t}'"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!("header must be 'rows cols', got '{header}'")));
    };
    let entries: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad matrix entry '{t}'"))))
        .collect::<Result<_>>()?;
    if entries.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} entries for a {rows}x{cols} matrix, found {}",
            rows * cols,
            entries.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}

/// Deterministic, generic start vector for power iteration.
fn power_start(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + 0.1 * ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect()
}

/// Power iteration on `S*S`; returns `‖S x_k‖` for the normalized iterate `x_k`,
/// which is nondecreasing in `iters` for the positive semidefinite `S*S`.
pub fn operator_norm_estimate(op: &dyn LinearMap, iters: usize) -> f64 {
    let iters = iters.max(1);
    let grid = op.domain().clone();
    let mut x = GridFunction::from_parts(grid.clone(), power_start(grid.len()));
    let nx = x.norm();
    x = x.scale(1.0 / nx);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let sx = op.apply(&x).expect("power iterate lives on the domain grid");
        estimate = f64::max(estimate, sx.norm());
        let next = op.apply_adjoint(&sx).expect("image lives on the range grid");
        let nn = next.norm();
        if nn == 0.0 || !nn.is_finite() {
            break;
        }
        x = next.scale(1.0 / nn);
    }
    estimate
}

/// Largest `|⟨Su, y⟩_Y − ⟨u, S*y⟩_U| / (‖u‖ ‖y‖)` over `trials` Gaussian pairs.
pub fn adjoint_consistency_check(op: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |grid: &Arc<Grid>| {
        let values = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        GridFunction::from_parts(grid.clone(), values)
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let u = draw(op.domain());
        let y = draw(op.range());
        let su = op.apply(&u).expect("sampled on the domain grid");
        let sty = op.apply_adjoint(&y).expect("sampled on the range grid");
        let gap = (su.inner(&y) - u.inner(&sty)).abs() / (u.norm() * y.norm());
        worst = worst.max(gap);
    }
    worst
}
