//! Uniform finite-difference grid on (0,1) with homogeneous Dirichlet
//! boundary values.
//!
//! Boundary values are never stored: a [`GridFunction`] holds the
//! `n_interior` interior samples and every operator treats `u_0` and
//! `u_{n+1}` as exact zeros.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default spacing used by the canonical configuration.
pub const DEFAULT_DX: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    n_interior: usize,
    dx: f64,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    n_interior: usize,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        Grid::new(r.n_interior)
    }
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr {
            n_interior: g.n_interior,
        }
    }
}

impl Grid {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior < 2 {
            return Err(Error::Parameter(format!(
                "grid needs at least 2 interior nodes, got {n_interior}"
            )));
        }
        Ok(Grid {
            n_interior,
            dx: 1.0 / (n_interior as f64 + 1.0),
        })
    }

    /// Grid whose spacing is the closest admissible value to `dx`.
    pub fn from_dx(dx: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Parameter(format!("dx must be positive, got {dx}")));
        }
        let cells = (1.0 / dx).round();
        if cells < 3.0 {
            return Err(Error::Parameter(format!("dx = {dx} leaves fewer than 2 interior nodes")));
        }
        Grid::new(cells as usize - 1)
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Coordinate of interior node `i` (zero-based), i.e. `(i + 1) dx`.
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_interior).map(move |i| self.x(i))
    }
}

/// A state sampled on the interior nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        GridFunction {
            grid,
            values: vec![0.0; grid.n_interior],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction {
            grid,
            values: vec![c; grid.n_interior],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid,
            values: grid.nodes().map(f).collect(),
        }
    }

    /// Checked constructor: length must match the grid and entries be finite.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_interior {
            return Err(Error::Parameter(format!(
                "grid function has {} values, grid has {} interior nodes",
                values.len(),
                grid.n_interior
            )));
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { node, value });
        }
        Ok(GridFunction { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_interior);
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
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

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        debug_assert_eq!(self.grid, other.grid);
        GridFunction::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &GridFunction) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// `(1 - s) * a + s * b`
    pub fn lerp(a: &GridFunction, b: &GridFunction, s: f64) -> GridFunction {
        a.zip_map(b, |x, y| x + s * (y - x))
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, &v)| (i, v))
    }

    pub fn norms(&self) -> Norms {
        norms(self)
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.dx).sqrt()
    }

    pub fn h10(&self) -> f64 {
        let dx = self.grid.dx;
        let n = self.values.len();
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 0..=n {
            let next = if i < n { self.values[i] } else { 0.0 };
            let d = (next - prev) / dx;
            acc += d * d;
            prev = next;
        }
        (acc * dx).sqrt()
    }

    /// Discrete integral `sum u_i dx`.
    pub fn mean_integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h10: f64,
    pub linf: f64,
}

pub fn norms(u: &GridFunction) -> Norms {
    Norms {
        l2: u.l2(),
        h10: u.h10(),
        linf: u.linf(),
    }
}

/// Second central difference with zero Dirichlet data.
pub fn laplacian_apply(u: &GridFunction) -> GridFunction {
    let v = &u.values;
    let n = v.len();
    let inv_dx2 = 1.0 / (u.grid.dx * u.grid.dx);
    let out = (0..n)
        .map(|i| {
            let left = if i > 0 { v[i - 1] } else { 0.0 };
            let right = if i + 1 < n { v[i + 1] } else { 0.0 };
            (left - 2.0 * v[i] + right) * inv_dx2
        })
        .collect();
    GridFunction::from_raw(u.grid, out)
}

/// Thomas elimination for a tridiagonal system with constant bands.
///
/// Solves `off * x_{i-1} + diag * x_i + off * x_{i+1} = rhs_i`. The caller
/// guarantees strict diagonal dominance (`|diag| > 2 |off|`), so no pivoting
/// is needed.
pub fn solve_symmetric_toeplitz(diag: f64, off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c_prime = vec![0.0; n];
    let mut x = vec![0.0; n];
    if n == 0 {
        return x;
    }
    c_prime[0] = off / diag;
    x[0] = rhs[0] / diag;
    for i in 1..n {
        let den = diag - off * c_prime[i - 1];
        c_prime[i] = off / den;
        x[i] = (rhs[i] - off * x[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c_prime[i] * x[i + 1];
    }
    x
}

/// One linearly implicit diffusion step: solves `(I - dt*coeff*Δ_h) v = u`.
pub fn implicit_diffusion_step(u: &GridFunction, coeff: f64, dt: f64) -> GridFunction {
    let r = dt * coeff / (u.grid.dx * u.grid.dx);
    GridFunction::from_raw(u.grid, solve_symmetric_toeplitz(1.0 + 2.0 * r, -r, &u.values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstEigenvalue {
    /// `(4/dx²) sin²(π dx / 2) + shift`
    pub discrete: f64,
    /// `π² + shift`
    pub continuum: f64,
}

/// First eigenvalue of `-Δ_h + shift` and of its continuum counterpart.
pub fn discrete_first_eigenvalue(grid: Grid, shift: f64) -> FirstEigenvalue {
    let dx = grid.dx;
    let s = (PI * dx / 2.0).sin();
    FirstEigenvalue {
        discrete: 4.0 / (dx * dx) * s * s + shift,
        continuum: PI * PI + shift,
    }
}
