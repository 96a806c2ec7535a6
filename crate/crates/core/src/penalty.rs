//! Optimal regularization schemes: the global Lipschitz scale λ, per-domain
//! IRM coefficients η_e and per-group Lipschitz weights ρ_k.
//!
//! The tractable forms depend only on group statistics:
//!
//! ```text
//! ρ_k* = 4^(-2/5) Σ_e (σ_{e,k} / r̂_{e,k})^(4/5) 1_{e,k}
//! η_e* = (N_e / 4^(7/5)) [ Σ_k (σ_{e,k} / r̂_{e,k})^(4/5) 1_{e,k} ]^(-1)
//! λ*   = (Σ_e 1/N_e)^(2/5)
//! ```
//!
//! The exact forms additionally weight each group by per-group constants of
//! the truth function (its value f_k and second derivative f''_k) and reduce
//! to the tractable forms when f_k = f''_k = 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::GroupStatistics;
use crate::error::{Error, Result};

/// A full regularization configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyScheme {
    pub lambda: f64,
    /// Per-domain IRM coefficient η_e.
    pub eta: BTreeMap<u32, f64>,
    /// Per-group Lipschitz weight ρ_k.
    pub rho: BTreeMap<usize, f64>,
}

impl PenaltyScheme {
    /// Uniform penalties (ρ ≡ rho, η ≡ eta) for the given domains/groups.
    pub fn uniform(lambda: f64, domains: &[u32], k_count: usize, eta: f64, rho: f64) -> Self {
        Self {
            lambda,
            eta: domains.iter().map(|&e| (e, eta)).collect(),
            rho: (0..k_count).map(|k| (k, rho)).collect(),
        }
    }

    /// All values positive and finite.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.lambda.is_finite()
            && self.eta.values().all(|v| *v >= 0.0 && v.is_finite())
            && self.rho.values().all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config {
                key: "penalty_scheme".into(),
                message: "penalties must be positive and finite".into(),
            })
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Clamps for degenerate statistics: ρ is floored (the theory assumes ρ > 0)
/// and η is capped for noiseless domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBounds {
    pub rho_floor: f64,
    pub eta_cap: f64,
}

impl Default for PenaltyBounds {
    fn default() -> Self {
        Self {
            rho_floor: 1e-6,
            eta_cap: 1e6,
        }
    }
}

/// Per-group constants of the truth function used by the exact forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPenaltyInputs {
    /// f*_k, the truth value on group k.
    pub f_value: Vec<f64>,
    /// f*''_k, its second derivative on group k.
    pub f_second: Vec<f64>,
}

impl ExactPenaltyInputs {
    /// The reduction inputs f = f'' = 1 for every group.
    pub fn ones(k_count: usize) -> Self {
        Self {
            f_value: vec![1.0; k_count],
            f_second: vec![1.0; k_count],
        }
    }
}

/// λ* = (Σ_e 1/N_e)^(2/5).
pub fn optimal_lambda(domain_sizes: &[usize]) -> Result<f64> {
    if domain_sizes.is_empty() {
        return Err(Error::EmptyInput("domain_sizes"));
    }
    let s: f64 = domain_sizes.iter().map(|&n| 1.0 / n as f64).sum();
    Ok(s.powf(0.4))
}

fn quality_term(sigma2: f64, r_hat: f64, domain: u32, group: usize) -> Result<f64> {
    if r_hat <= 0.0 {
        return Err(Error::DegenerateDensity { domain, group });
    }
    Ok((sigma2.sqrt() / r_hat).powf(0.8))
}

/// Tractable ρ_k*: `4^(-2/5) Σ_e (σ/r̂)^(4/5)` over the domains containing
/// group k, floored at `bounds.rho_floor`.
pub fn optimal_rho(stats: &GroupStatistics, bounds: PenaltyBounds) -> Result<BTreeMap<usize, f64>> {
    exact_optimal_rho(stats, &ExactPenaltyInputs::ones(stats.k_count), bounds)
}

/// Tractable η_e*: `(N_e/4^(7/5)) [Σ_k (σ/r̂)^(4/5)]^(-1)`, capped at
/// `bounds.eta_cap` when the bracket degenerates.
pub fn optimal_eta(
    stats: &GroupStatistics,
    domain_sizes: &BTreeMap<u32, usize>,
    bounds: PenaltyBounds,
) -> Result<BTreeMap<u32, f64>> {
    exact_optimal_eta(
        stats,
        domain_sizes,
        &ExactPenaltyInputs::ones(stats.k_count),
        bounds,
    )
}

/// Exact ρ_k = σ^(4/5) / (4^(2/5) (f''_k)^(2/5) r̂^(4/5)); reduces to
/// [`optimal_rho`] when f''_k = 1.
pub fn exact_optimal_rho(
    stats: &GroupStatistics,
    extra: &ExactPenaltyInputs,
    bounds: PenaltyBounds,
) -> Result<BTreeMap<usize, f64>> {
    let scale = 4f64.powf(-0.4);
    let mut rho = BTreeMap::new();
    for k in 0..stats.k_count {
        let mut sum = 0.0;
        for e in stats.domains().collect::<Vec<_>>() {
            if !stats.indicator[&e][k] {
                continue;
            }
            let fpp = extra.f_second[k];
            if fpp <= 0.0 {
                return Err(Error::NonPositiveBracket {
                    domain: e,
                    bracket: fpp,
                });
            }
            sum += quality_term(stats.sigma2[&e][k], stats.r_hat[&e][k], e, k)?
                / fpp.powf(0.4);
        }
        rho.insert(k, (scale * sum).max(bounds.rho_floor));
    }
    Ok(rho)
}

/// Exact η_e = (N_e/4^(7/5)) [Σ_k σ^(4/5) (f''_k)^(3/5) f_k / r̂^(4/5)]^(-1);
/// reduces to [`optimal_eta`] when f_k = f''_k = 1.
pub fn exact_optimal_eta(
    stats: &GroupStatistics,
    domain_sizes: &BTreeMap<u32, usize>,
    extra: &ExactPenaltyInputs,
    bounds: PenaltyBounds,
) -> Result<BTreeMap<u32, f64>> {
    let scale = 4f64.powf(-1.4);
    let mut eta = BTreeMap::new();
    for e in stats.domains().collect::<Vec<_>>() {
        let mut bracket = 0.0;
        let mut any = false;
        for k in 0..stats.k_count {
            if !stats.indicator[&e][k] {
                continue;
            }
            any = true;
            let fpp = extra.f_second[k];
            if fpp <= 0.0 {
                return Err(Error::NonPositiveBracket {
                    domain: e,
                    bracket: fpp,
                });
            }
            bracket += quality_term(stats.sigma2[&e][k], stats.r_hat[&e][k], e, k)?
                * fpp.powf(0.6)
                * extra.f_value[k];
        }
        if !any {
            return Err(Error::DomainWithoutGroups(e));
        }
        if bracket < 0.0 {
            return Err(Error::NonPositiveBracket { domain: e, bracket });
        }
        let n_e = *domain_sizes.get(&e).ok_or(Error::DomainWithoutGroups(e))? as f64;
        let raw = if bracket < f64::EPSILON {
            bounds.eta_cap
        } else {
            scale * n_e / bracket
        };
        eta.insert(e, raw.min(bounds.eta_cap));
    }
    Ok(eta)
}

/// Assemble a full scheme from statistics: tractable ρ*, η* and λ*.
pub fn optimal_scheme(
    stats: &GroupStatistics,
    domain_sizes: &BTreeMap<u32, usize>,
    bounds: PenaltyBounds,
) -> Result<PenaltyScheme> {
    let sizes: Vec<usize> = domain_sizes.values().copied().collect();
    Ok(PenaltyScheme {
        lambda: optimal_lambda(&sizes)?,
        eta: optimal_eta(stats, domain_sizes, bounds)?,
        rho: optimal_rho(stats, bounds)?,
    })
}
