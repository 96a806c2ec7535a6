//! The closed-form expected-MSE decomposition.
//!
//! For a penalty scheme (λ, η_e, ρ) on a setting with truth f*, densities
//! r_e (empirical r̂_e) and noise σ_e:
//!
//! ```text
//! bias²(x) = λ² [ (ρ f*')'(x)/r(x) - Σ_e r̂_e(x) f*(x) / (4 η_e r(x) I_e) ]²
//! var(x)   = λ^(-1/2) Σ_e r̂_e(x) σ_e²(x) / (N_e r(x) √(r(x) ρ(x)))
//! I_e      = ∫ (r̂_e³/r²) f*² dt
//! risk     = ∫ bias² + var
//! ```
//!
//! and the per-domain IRM penalty value is A_e = (4 η_e² I_e)^(-1).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::{RhoField, TheorySetting};

/// Risk decomposition of a scheme on a setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub a_e: BTreeMap<u32, f64>,
    pub bias2: Vec<f64>,
    pub variance: Vec<f64>,
    pub risk: f64,
}

/// A_e = [4 η_e² ∫ (r̂_e³/r²) f*² dt]^(-1).
pub fn compute_ae(
    eta_e: f64,
    r_hat_e: &[f64],
    r: &[f64],
    f_star: &[f64],
    grid: &crate::grid::Grid1D,
) -> Result<f64> {
    assert!(eta_e > 0.0, "eta must be positive");
    let integrand: Vec<f64> = (0..grid.len())
        .map(|i| r_hat_e[i].powi(3) / (r[i] * r[i]) * f_star[i] * f_star[i])
        .collect();
    let integral = grid.trapezoid(&integrand);
    if integral <= 0.0 || !integral.is_finite() {
        return Err(Error::DegenerateAe(0));
    }
    Ok(1.0 / (4.0 * eta_e * eta_e * integral))
}

/// Evaluate the closed-form risk of `(lambda, eta, rho)` on `setting`.
pub fn theorem1_risk(
    setting: &TheorySetting,
    lambda: f64,
    eta: &BTreeMap<u32, f64>,
    rho: &RhoField,
) -> Result<TheoryReport> {
    let grid = &setting.grid;
    let n = grid.len();
    let r = setting.total_density()?;
    rho.validate_positive()?;

    let mut a_e = BTreeMap::new();
    // η_e A_e = 1 / (4 η_e I_e); keep both for the report.
    let mut eta_ae = Vec::with_capacity(setting.domains.len());
    for d in &setting.domains {
        let eta_e = *eta.get(&d.id).ok_or_else(|| Error::Config {
            key: format!("eta.{}", d.id),
            message: "scheme has no IRM coefficient for this domain".into(),
        })?;
        let ae = compute_ae(eta_e, &d.empirical, &r, &setting.truth.f, grid)
            .map_err(|_| Error::DegenerateAe(d.id))?;
        a_e.insert(d.id, ae);
        eta_ae.push(eta_e * ae);
    }

    let flux = rho.flux_derivative(&setting.truth.df, &setting.truth.d2f);
    let mut bias2 = vec![0.0; n];
    let mut variance = vec![0.0; n];
    for i in 0..n {
        let mut b = flux[i] / r[i];
        for (d, &ea) in setting.domains.iter().zip(&eta_ae) {
            b -= ea * d.empirical[i] * setting.truth.f[i] / r[i];
        }
        bias2[i] = lambda * lambda * b * b;

        let mut v = 0.0;
        for d in &setting.domains {
            v += d.empirical[i] * d.sigma[i] * d.sigma[i]
                / (d.n_samples as f64 * r[i] * (r[i] * rho.values[i]).sqrt());
        }
        variance[i] = v / lambda.sqrt();
    }

    let total: Vec<f64> = bias2.iter().zip(&variance).map(|(b, v)| b + v).collect();
    let risk = grid.trapezoid(&total);
    Ok(TheoryReport {
        a_e,
        bias2,
        variance,
        risk,
    })
}

/// The exact risk-minimizing λ for fixed (η, ρ): with the λ-stripped
/// integrals a = ∫E² and b = Σ_e ∫var_e/N_e, the risk is λ²a + λ^(-1/2) b
/// and its minimizer is λ* = (b / 4a)^(2/5).
pub fn exact_lambda_star(
    setting: &TheorySetting,
    eta: &BTreeMap<u32, f64>,
    rho: &RhoField,
) -> Result<f64> {
    // Evaluate at λ = 1 to read off a and b.
    let report = theorem1_risk(setting, 1.0, eta, rho)?;
    let a = setting.grid.trapezoid(&report.bias2);
    let b = setting.grid.trapezoid(&report.variance);
    if a <= 0.0 {
        return Err(Error::DegenerateAe(u32::MAX));
    }
    Ok((b / (4.0 * a)).powf(0.4))
}
