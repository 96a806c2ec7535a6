//! The Green's function of the boundary value problem
//!
//! ```text
//! (ρ(t) G'(x,t))' - (r(t)/λ) G(x,t) = δ(x-t),   G'(x,0) = G'(x,1) = 0
//! ```
//!
//! built two ways: from the leading-order exponential homogeneous solutions
//! (`wkb`), and by solving the tridiagonal finite-volume system column by
//! column (`discrete`). Both carry the defining derivative jump 1/ρ(t)
//! across t = x, so the two tables approximate the same kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pairwise_sum, Grid1D};
use crate::linalg::TridiagFactor;

/// Largest allowed log-magnitude of the growing homogeneous solution.
pub const DEFAULT_LOG_BOUND: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreensMethod {
    Wkb,
    Discrete,
}

/// Tabulated kernel G(x_i, t_j) together with the inputs it was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreensFunction {
    pub grid: Grid1D,
    pub lambda: f64,
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
    pub method: GreensMethod,
    /// Row-major n×n table; row = x index, column = t index.
    table: Vec<f64>,
}

impl GreensFunction {
    #[inline]
    pub fn at(&self, xi: usize, tj: usize) -> f64 {
        self.table[xi * self.grid.len() + tj]
    }

    pub fn row(&self, xi: usize) -> &[f64] {
        let n = self.grid.len();
        &self.table[xi * n..(xi + 1) * n]
    }

    /// ∫ G(x_i, t) g(t) dt by trapezoid over the table row.
    pub fn integrate_against(&self, xi: usize, g: &[f64]) -> f64 {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let row = self.row(xi);
        let mut prods: Vec<f64> = (0..n).map(|j| row[j] * g[j]).collect();
        prods[0] *= 0.5;
        prods[n - 1] *= 0.5;
        h * pairwise_sum(&prods)
    }

    /// Apply the interior operator (ρ v')' - (r/λ) v to a column vector,
    /// using the same finite-volume stencil as the discrete build.
    pub fn operator_apply(&self, v: &[f64]) -> Vec<f64> {
        operator_apply(&self.grid, self.lambda, &self.r, &self.rho, v)
    }

    /// Relative defect of column j against the discrete delta (1/w_j at
    /// node j). Meaningful for the discrete method.
    pub fn column_defect(&self, j: usize) -> f64 {
        let n = self.grid.len();
        let col: Vec<f64> = (0..n).map(|i| self.at(i, j)).collect();
        let out = self.operator_apply(&col);
        let w = self.grid.node_masses();
        let delta_mag = 1.0 / w[j];
        let mut worst = 0.0_f64;
        for i in 0..n {
            let want = if i == j { delta_mag } else { 0.0 };
            worst = worst.max((out[i] - want).abs());
        }
        worst / delta_mag
    }
}

pub(crate) fn operator_apply(
    grid: &Grid1D,
    lambda: f64,
    r: &[f64],
    rho: &[f64],
    v: &[f64],
) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing();
    let rho_half = |i: usize| 0.5 * (rho[i] + rho[i + 1]);
    let mut out = vec![0.0; n];
    out[0] = 2.0 * rho_half(0) * (v[1] - v[0]) / (h * h) - r[0] / lambda * v[0];
    for i in 1..n - 1 {
        out[i] = (rho_half(i) * (v[i + 1] - v[i]) - rho_half(i - 1) * (v[i] - v[i - 1])) / (h * h)
            - r[i] / lambda * v[i];
    }
    out[n - 1] =
        2.0 * rho_half(n - 2) * (v[n - 2] - v[n - 1]) / (h * h) - r[n - 1] / lambda * v[n - 1];
    out
}

fn check_fields(grid: &Grid1D, r: &[f64], rho: &[f64]) -> Result<()> {
    for i in 0..grid.len() {
        if r[i] <= 0.0 || !r[i].is_finite() {
            return Err(Error::NonPositiveField {
                quantity: "density r",
                node: i,
            });
        }
        if rho[i] <= 0.0 || !rho[i].is_finite() {
            return Err(Error::NonPositiveField {
                quantity: "rho",
                node: i,
            });
        }
    }
    Ok(())
}

/// Leading-order homogeneous solutions of (ρ f')' - (r/λ) f = 0:
///
/// ```text
/// f_i(x) = exp( (-1)^i / √λ · ∫_0^x √(r/ρ) dt ),  i = 1, 2
/// ```
///
/// f₁ decreases, f₂ grows; both equal 1 at x = 0. The phase is accumulated
/// once and exponentiated, with an error if the growing solution would
/// overflow the configured log bound.
pub fn wkb_homogeneous(
    lambda: f64,
    r: &[f64],
    rho: &[f64],
    grid: &Grid1D,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_fields(grid, r, rho)?;
    let phase = phase_integral(grid, r, rho);
    let s = lambda.sqrt();
    let max_log = phase[grid.len() - 1] / s;
    if max_log > DEFAULT_LOG_BOUND {
        return Err(Error::WkbOverflow {
            log: max_log,
            bound: DEFAULT_LOG_BOUND,
        });
    }
    let f1 = phase.iter().map(|&p| (-p / s).exp()).collect();
    let f2 = phase.iter().map(|&p| (p / s).exp()).collect();
    Ok((f1, f2))
}

/// Cumulative phase ∫_0^x √(r/ρ).
fn phase_integral(grid: &Grid1D, r: &[f64], rho: &[f64]) -> Vec<f64> {
    let integrand: Vec<f64> = r
        .iter()
        .zip(rho)
        .map(|(&ri, &pi)| (ri / pi).sqrt())
        .collect();
    grid.cumulative_trapezoid(&integrand)
}

/// Build the Green's function table by the requested method.
pub fn greens_function(
    lambda: f64,
    r: &[f64],
    rho: &[f64],
    grid: &Grid1D,
    method: GreensMethod,
) -> Result<GreensFunction> {
    check_fields(grid, r, rho)?;
    let table = match method {
        GreensMethod::Wkb => build_wkb(lambda, r, rho, grid)?,
        GreensMethod::Discrete => build_discrete(lambda, r, rho, grid)?,
    };
    Ok(GreensFunction {
        grid: grid.clone(),
        lambda,
        r: r.to_vec(),
        rho: rho.to_vec(),
        method,
        table,
    })
}

/// Closed-form assembly from the homogeneous pair. With boundary conditions
/// at both ends, continuity at x = t and the jump 1/ρ(t), the four
/// coefficients C1..C4 collapse to
///
/// ```text
/// G(x,t) = - √λ / √(r(t)ρ(t)) · cosh(φ(x∧t)/√λ) cosh((Φ-φ(x∨t))/√λ) / sinh(Φ/√λ)
/// ```
///
/// where φ is the phase integral and Φ = φ(1). Evaluated in exponential
/// form so nothing overflows for any λ.
fn build_wkb(lambda: f64, r: &[f64], rho: &[f64], grid: &Grid1D) -> Result<Vec<f64>> {
    let n = grid.len();
    let s = lambda.sqrt();
    let phase = phase_integral(grid, r, rho);
    let total = phase[n - 1];
    let c = total / s;
    // cosh(a)cosh(b)/sinh(c) = e^{a+b-c} (1+e^{-2a})(1+e^{-2b}) / (2(1-e^{-2c}))
    let denom = 2.0 * (1.0 - (-2.0 * c).exp());
    if denom == 0.0 {
        return Err(Error::SingularSystem(0));
    }
    let mut table = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (pmin, pmax) = if phase[i] <= phase[j] {
                (phase[i], phase[j])
            } else {
                (phase[j], phase[i])
            };
            let a = pmin / s;
            let b = (total - pmax) / s;
            let core = (a + b - c).exp() * (1.0 + (-2.0 * a).exp()) * (1.0 + (-2.0 * b).exp());
            table[i * n + j] = -s / (r[j] * rho[j]).sqrt() * core / denom;
        }
    }
    Ok(table)
}

/// Column-by-column tridiagonal solve of the finite-volume system. The
/// trapezoid-mass-scaled operator is symmetric, so after mass normalization
/// the table is symmetric; the discrete delta at node j is 1/w_j.
fn build_discrete(lambda: f64, r: &[f64], rho: &[f64], grid: &Grid1D) -> Result<Vec<f64>> {
    let n = grid.len();
    let h = grid.spacing();
    let rho_half: Vec<f64> = (0..n - 1).map(|i| 0.5 * (rho[i] + rho[i + 1])).collect();
    // B = W (-M): SPD tridiagonal.
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    diag[0] = rho_half[0] / h + r[0] / lambda * (0.5 * h);
    for i in 1..n - 1 {
        diag[i] = (rho_half[i - 1] + rho_half[i]) / h + r[i] / lambda * h;
    }
    diag[n - 1] = rho_half[n - 2] / h + r[n - 1] / lambda * (0.5 * h);
    for i in 0..n - 1 {
        off[i] = -rho_half[i] / h;
    }
    let factor = TridiagFactor::new(&diag, &off)?;
    let mut table = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for j in 0..n {
        rhs[j] = -1.0;
        let col = factor.solve(&rhs);
        rhs[j] = 0.0;
        for i in 0..n {
            table[i * n + j] = col[i];
        }
    }
    Ok(table)
}
