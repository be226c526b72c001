//! One-dimensional grids with quadrature weights and the functions living on them.
//!
//! A [`GridFunction`] is the discrete stand-in for an element of L²(Ω): the inner
//! product is the quadrature-weighted sum `Σ h_i u_i v_i`.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Strictly increasing nodes with strictly positive quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidGrid("grid has no nodes".into()));
        }
        if nodes.len() != weights.len() {
            return Err(Error::InvalidGrid(format!("{} nodes but {} weights", nodes.len(), weights.len())));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidGrid(format!("weight {i} is not strictly positive: {}", weights[i])));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!("nodes not strictly increasing at index {}", i + 1)));
        }
        Ok(Self { nodes, weights })
    }

    /// Uniform grid on `[a, b]` with `n ≥ 2` nodes and trapezoidal weights
    /// (`h` in the interior, `h/2` at the two ends).
    pub fn uniform(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("uniform grid needs n >= 2, got {n}")));
        }
        if !(b > a) {
            return Err(Error::InvalidGrid(format!("empty interval [{a}, {b}]")));
        }
        let h = (b - a) / (n - 1) as f64;
        let nodes = (0..n).map(|i| if i == n - 1 { b } else { a + h * i as f64 }).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Self::new(nodes, weights)
    }

    /// Composite midpoint weights for arbitrary increasing nodes on `[a, b]`:
    /// each node owns the cell between the midpoints to its neighbours.
    pub fn midpoint(nodes: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidGrid("grid has no nodes".into()));
        }
        if nodes[0] < a || nodes[n - 1] > b {
            return Err(Error::InvalidGrid("nodes outside the interval".into()));
        }
        let weights = (0..n)
            .map(|i| {
                let left = if i == 0 { a } else { 0.5 * (nodes[i - 1] + nodes[i]) };
                let right = if i == n - 1 { b } else { 0.5 * (nodes[i] + nodes[i + 1]) };
                right - left
            })
            .collect();
        Self::new(nodes, weights)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total measure `Σ h_i`.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Uniform spacing if the grid is uniform to round-off.
    pub fn uniform_spacing(&self) -> Option<f64> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let h = (self.nodes[n - 1] - self.nodes[0]) / (n - 1) as f64;
        let ok = self.nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
        ok.then_some(h)
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.len());
        debug_assert_eq!(v.len(), self.len());
        self.weights.iter().zip(u.iter().zip(v)).map(|(h, (a, b))| h * a * b).sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }
}

/// Values on a shared grid. Arithmetic helpers panic on mismatched grids only in
/// debug builds; public entry points check with [`GridFunction::check_same_grid`].
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.values == other.values
    }
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                context: "GridFunction::new",
                expected: grid.len(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self { grid, values }
    }

    pub(crate) fn from_parts(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn on_grid(&self, grid: &Grid) -> bool {
        std::ptr::eq(&*self.grid, grid) || *self.grid == *grid
    }

    pub fn check_same_grid(&self, other: &GridFunction, context: &'static str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch { context, expected: self.len(), actual: other.len() })
        }
    }

    pub fn check_on(&self, grid: &Grid, context: &'static str) -> Result<()> {
        if self.on_grid(grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch { context, expected: grid.len(), actual: self.len() })
        }
    }

    pub fn inner(&self, other: &GridFunction) -> f64 {
        self.grid.inner(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    /// `Σ_{i∈idx} h_i |u_i|`.
    pub fn l1_on(&self, idx: &[usize]) -> f64 {
        let h = self.grid.weights();
        idx.iter().map(|&i| h[i] * self.values[i].abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + a·x`
    pub fn axpy(&self, a: f64, x: &GridFunction) -> GridFunction {
        debug_assert!(self.same_grid(x));
        let values = self.values.iter().zip(&x.values).map(|(s, x)| s + a * x).collect();
        Self::from_parts(self.grid.clone(), values)
    }

    pub fn add_scaled_mut(&mut self, a: f64, x: &GridFunction) {
        debug_assert!(self.same_grid(x));
        for (s, x) in self.values.iter_mut().zip(&x.values) {
            *s += a * x;
        }
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.axpy(1.0, other)
    }

    pub fn scale(&self, a: f64) -> GridFunction {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn distance(&self, other: &GridFunction) -> f64 {
        let h = self.grid.weights();
        self.values.iter().zip(&other.values).zip(h).map(|((a, b), h)| h * (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}
