//! Uniform grids on [0,1], piecewise-linear grid functions and quadrature.
//!
//! All integrals in the theory engine are composite trapezoid sums over the
//! grid nodes, accumulated with pairwise summation so results do not depend
//! on evaluation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equally spaced nodes on [0,1], endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
    h: f64,
    points: Vec<f64>,
}

impl Grid1D {
    /// A grid with `n` nodes, `n >= 3`.
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::GridTooSmall(n));
        }
        let denom = (n - 1) as f64;
        let points = (0..n).map(|i| i as f64 / denom).collect();
        Ok(Self {
            n,
            h: 1.0 / denom,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Node closest to `x` (ties round up).
    pub fn nearest_node(&self, x: f64) -> usize {
        let j = (x / self.h).round() as isize;
        j.clamp(0, (self.n - 1) as isize) as usize
    }

    /// Index of the cell [x_j, x_{j+1}) containing `x`, clamped to valid cells.
    pub fn cell_of(&self, x: f64) -> usize {
        let j = (x / self.h).floor() as isize;
        j.clamp(0, (self.n - 2) as isize) as usize
    }

    /// Evaluate a node table per-node derivative: central differences in the
    /// interior, one-sided at the endpoints.
    pub fn derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![0.0; n];
        d[0] = (values[1] - values[0]) / self.h;
        for i in 1..n - 1 {
            d[i] = (values[i + 1] - values[i - 1]) / (2.0 * self.h);
        }
        d[n - 1] = (values[n - 1] - values[n - 2]) / self.h;
        d
    }

    /// Composite trapezoid integral of a node table.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let mut weighted = values.to_vec();
        weighted[0] *= 0.5;
        weighted[self.n - 1] *= 0.5;
        self.h * pairwise_sum(&weighted)
    }

    /// Cumulative trapezoid integral, `out[i] = ∫_0^{x_i}`.
    pub fn cumulative_trapezoid(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 1..self.n {
            out[i] = out[i - 1] + 0.5 * self.h * (values[i] + values[i - 1]);
        }
        out
    }

    /// Trapezoid node masses (h/2 at the ends, h inside).
    pub fn node_masses(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.n];
        w[0] = 0.5 * self.h;
        w[self.n - 1] = 0.5 * self.h;
        w
    }

    /// Sample a closure at every node.
    pub fn table(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&x| f(x)).collect()
    }
}

/// Order-independent sum: splits recursively, adds sequentially below a
/// small base size.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        let mut acc = 0.0;
        for &x in v {
            acc += x;
        }
        acc
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// A real function represented by node values on a [`Grid1D`]; evaluation
/// between nodes is piecewise linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid1D, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.table(f);
        Self { grid, values }
    }

    /// Piecewise-linear evaluation at `x` in [0,1].
    pub fn eval(&self, x: f64) -> f64 {
        let j = self.grid.cell_of(x);
        let x0 = self.grid.point(j);
        let t = ((x - x0) / self.grid.spacing()).clamp(0.0, 1.0);
        self.values[j] * (1.0 - t) + self.values[j + 1] * t
    }

    /// Nodewise derivative table (central differences, one-sided ends).
    pub fn derivative(&self) -> Vec<f64> {
        self.grid.derivative(&self.values)
    }

    /// Sup-norm distance to another function on the same grid.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Trapezoid integral of (self - other)^2.
    pub fn l2_sq_distance(&self, other: &GridFunction) -> f64 {
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        self.grid.trapezoid(&diff)
    }
}
