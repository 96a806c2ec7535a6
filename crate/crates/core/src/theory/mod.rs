//! Closed-form risk theory for the one-dimensional regression setting:
//! analytic settings (densities, noise envelopes, truth function), the
//! expected-MSE decomposition, the boundary-value-problem machinery and its
//! Green's function, and the asymptotic form of the estimator.

mod asymptotic;
mod greens;
mod risk;

pub use asymptotic::{asymptotic_solution, bvp_residual, lemma1_residual};
pub use greens::{greens_function, wkb_homogeneous, GreensFunction, GreensMethod};
pub use risk::{compute_ae, exact_lambda_star, theorem1_risk, TheoryReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::penalty::PenaltyScheme;

/// One domain of an analytic setting: its true density, optional empirical
/// density table, pointwise noise level and sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub id: u32,
    pub n_samples: usize,
    /// True density r_e at the nodes; integrates to 1 over [0,1].
    pub density: Vec<f64>,
    /// Empirical density r̂_e at the nodes; defaults to `density`.
    pub empirical: Vec<f64>,
    /// Noise envelope σ_e(x) ≥ 0 at the nodes.
    pub sigma: Vec<f64>,
}

/// Truth function tables: values and the first two derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub f: Vec<f64>,
    pub df: Vec<f64>,
    pub d2f: Vec<f64>,
}

impl Truth {
    pub fn from_fns(
        grid: &Grid1D,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        d2f: impl Fn(f64) -> f64,
    ) -> Self {
        Self {
            f: grid.table(&f),
            df: grid.table(&df),
            d2f: grid.table(&d2f),
        }
    }

    /// Derivatives by five-point central differences when no analytic form
    /// is available.
    pub fn from_table(grid: &Grid1D, f: Vec<f64>) -> Self {
        let h = grid.spacing();
        let n = grid.len();
        let at = |i: isize| -> f64 {
            // Reflect at the ends; adequate for interior-dominated use.
            let i = i.clamp(0, (n - 1) as isize) as usize;
            f[i]
        };
        let mut df = vec![0.0; n];
        let mut d2f = vec![0.0; n];
        for i in 0..n as isize {
            df[i as usize] =
                (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * h);
            d2f[i as usize] = (-at(i + 2) + 16.0 * at(i + 1) - 30.0 * at(i)
                + 16.0 * at(i - 1)
                - at(i - 2))
                / (12.0 * h * h);
        }
        Self { f, df, d2f }
    }
}

/// Analytic description of a multi-domain 1-D regression setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySetting {
    pub grid: Grid1D,
    pub domains: Vec<DomainProfile>,
    pub truth: Truth,
}

impl TheorySetting {
    /// r(x) = Σ_e r_e(x); must be positive on every node.
    pub fn total_density(&self) -> Result<Vec<f64>> {
        let n = self.grid.len();
        let mut r = vec![0.0; n];
        for d in &self.domains {
            for i in 0..n {
                r[i] += d.density[i];
            }
        }
        for (i, &v) in r.iter().enumerate() {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::NonPositiveField {
                    quantity: "total density r",
                    node: i,
                });
            }
        }
        Ok(r)
    }

    /// Σ_e r̂_e(x) from the empirical tables.
    pub fn total_empirical(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut r = vec![0.0; n];
        for d in &self.domains {
            for i in 0..n {
                r[i] += d.empirical[i];
            }
        }
        r
    }

    pub fn domain_sizes(&self) -> BTreeMap<u32, usize> {
        self.domains.iter().map(|d| (d.id, d.n_samples)).collect()
    }

    /// Single uniform-density domain with constant noise; the workhorse for
    /// theory/simulation cross-checks.
    pub fn uniform_single(
        grid: Grid1D,
        n_samples: usize,
        sigma: f64,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        d2f: impl Fn(f64) -> f64,
    ) -> Self {
        let n = grid.len();
        let truth = Truth::from_fns(&grid, f, df, d2f);
        Self {
            grid,
            domains: vec![DomainProfile {
                id: 0,
                n_samples,
                density: vec![1.0; n],
                empirical: vec![1.0; n],
                sigma: vec![sigma; n],
            }],
            truth,
        }
    }
}

/// Contiguous group intervals on [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLayout {
    /// `boundaries[k] .. boundaries[k+1]` is group k; first is 0, last is 1.
    pub boundaries: Vec<f64>,
}

impl GroupLayout {
    pub fn equal(k_count: usize) -> Self {
        let boundaries = (0..=k_count).map(|k| k as f64 / k_count as f64).collect();
        Self { boundaries }
    }

    pub fn k_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn group_at(&self, x: f64) -> usize {
        let k = self
            .boundaries
            .partition_point(|&b| b <= x)
            .saturating_sub(1);
        k.min(self.k_count() - 1)
    }

    pub fn width(&self, k: usize) -> f64 {
        self.boundaries[k + 1] - self.boundaries[k]
    }
}

/// The Lipschitz weight as a node function: values and derivative tables.
/// Group-wise constant schemes carry a zero derivative (the jump at group
/// boundaries is ignored, matching the per-group-constant convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoField {
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl RhoField {
    pub fn uniform(grid: &Grid1D, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
            derivs: vec![0.0; grid.len()],
        }
    }

    pub fn from_fns(grid: &Grid1D, rho: impl Fn(f64) -> f64, drho: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.table(&rho),
            derivs: grid.table(&drho),
        }
    }

    /// Piecewise-constant field from a penalty scheme over a group layout.
    pub fn from_scheme(grid: &Grid1D, scheme: &PenaltyScheme, layout: &GroupLayout) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for &x in grid.points() {
            let k = layout.group_at(x);
            let v = scheme.rho.get(&k).copied().ok_or_else(|| Error::Config {
                key: format!("rho.{k}"),
                message: "scheme has no weight for this group".into(),
            })?;
            values.push(v);
        }
        Ok(Self {
            derivs: vec![0.0; grid.len()],
            values,
        })
    }

    pub fn validate_positive(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::NonPositiveField {
                    quantity: "rho",
                    node: i,
                });
            }
        }
        Ok(())
    }

    /// [ρ f*']'(x) = ρ'(x) f*'(x) + ρ(x) f*''(x), nodewise.
    pub fn flux_derivative(&self, df: &[f64], d2f: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.derivs)
            .zip(df.iter().zip(d2f))
            .map(|((&rho, &drho), (&df, &d2f))| drho * df + rho * d2f)
            .collect()
    }
}

/// A per-group-constant setting: every theory quantity is constant on each
/// group interval. Groups partition [0,1] with equal widths and each group
/// belongs to exactly one domain.
#[derive(Debug, Clone)]
pub struct PiecewiseGroups {
    /// `(domain id, n_samples, groups owned by the domain)`.
    pub domains: Vec<(u32, usize, Vec<usize>)>,
    /// Group masses r̂_{e,k} within the owning domain; must sum to 1 per domain.
    pub mass: Vec<f64>,
    /// Group noise σ_{e,k}.
    pub sigma: Vec<f64>,
    /// Truth value per group.
    pub f_value: Vec<f64>,
    /// Formal second derivative per group.
    pub f_second: Vec<f64>,
}

impl PiecewiseGroups {
    pub fn k_count(&self) -> usize {
        self.mass.len()
    }

    /// Expand into node tables over `grid` with the equal-width layout.
    /// Densities are `K · mass_k` on the owning group and zero elsewhere.
    pub fn to_setting(&self, grid: Grid1D) -> (TheorySetting, GroupLayout) {
        let k_count = self.k_count();
        let layout = GroupLayout::equal(k_count);
        let n = grid.len();
        let mut owner = vec![u32::MAX; k_count];
        for (id, _, groups) in &self.domains {
            for &k in groups {
                owner[k] = *id;
            }
        }
        let group_of: Vec<usize> = grid.points().iter().map(|&x| layout.group_at(x)).collect();
        let domains = self
            .domains
            .iter()
            .map(|(id, n_samples, _)| {
                let density: Vec<f64> = (0..n)
                    .map(|i| {
                        let k = group_of[i];
                        if owner[k] == *id {
                            k_count as f64 * self.mass[k]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let sigma = (0..n)
                    .map(|i| {
                        let k = group_of[i];
                        if owner[k] == *id {
                            self.sigma[k]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                DomainProfile {
                    id: *id,
                    n_samples: *n_samples,
                    empirical: density.clone(),
                    density,
                    sigma,
                }
            })
            .collect();
        let truth = Truth {
            f: group_of.iter().map(|&k| self.f_value[k]).collect(),
            df: vec![0.0; n],
            d2f: group_of.iter().map(|&k| self.f_second[k]).collect(),
        };
        (
            TheorySetting {
                grid,
                domains,
                truth,
            },
            layout,
        )
    }
}
