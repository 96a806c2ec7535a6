//! Minimization of the empirical loss over piecewise-linear grid functions,
//! the setting in which the closed-form theory is exact.
//!
//! The loss is
//!
//! ```text
//! Σ_e norm_e Σ_i (f(x_i) - y_i)²                       (per-domain risk)
//! + Σ_e η_e [ norm_e Σ_i 2 f(x_i)(f(x_i) - y_i) ]²     (IRM bracket)
//! + λ Σ_e norm_e Σ_i ρ(x_i) f'(x_i)²                   (sample-weighted Lipschitz)
//! ```
//!
//! with norm_e = 1/N_e by default (a raw-sum flag restores the plain sums).
//! The quartic IRM term is handled by an outer Gauss-Newton loop: freeze the
//! bracket's linearization, solve the remaining convex quadratic exactly
//! (banded Cholesky plus a rank-per-domain Woodbury correction), then
//! backtrack on the true loss so the recorded trace never increases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::linalg::{solve_dense, BandedSpd};

/// One domain's samples with per-sample Lipschitz weights and its IRM
/// coefficient.
#[derive(Debug, Clone)]
pub struct SolverDomain {
    pub id: u32,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta: f64,
}

/// A full 1-D minimization problem.
#[derive(Debug, Clone)]
pub struct SolverProblem {
    pub domains: Vec<SolverDomain>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Zeros,
    DataMean,
}

/// Which inner product the IRM bracket uses: the defining 2f(f-y) form or
/// the energy-assumption transform 2y(f-y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IrmBracket {
    Original,
    Transformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNormalization {
    PerDomainMean,
    RawSums,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n_grid: usize,
    pub max_outer_iters: usize,
    /// Backtracking halvings per outer step.
    pub max_inner_iters: usize,
    /// Initial scale of the Gauss-Newton update.
    pub step_size: f64,
    /// Relative loss-change convergence threshold.
    pub tolerance: f64,
    pub init: InitMode,
    pub bracket: IrmBracket,
    pub normalization: LossNormalization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_grid: 513,
            max_outer_iters: 60,
            max_inner_iters: 30,
            step_size: 1.0,
            tolerance: 1e-12,
            init: InitMode::DataMean,
            bracket: IrmBracket::Original,
            normalization: LossNormalization::PerDomainMean,
        }
    }
}

/// Converged minimizer with its loss trace.
#[derive(Debug, Clone)]
pub struct Solution {
    pub f: GridFunction,
    pub loss_trace: Vec<f64>,
    pub outer_iters: usize,
}

/// Evaluate the empirical loss of `f` on `problem`.
pub fn empirical_loss(
    f: &GridFunction,
    problem: &SolverProblem,
    normalization: LossNormalization,
    bracket: IrmBracket,
) -> Result<f64> {
    let df = f.derivative();
    let mut total = 0.0;
    for d in &problem.domains {
        let norm = match normalization {
            LossNormalization::PerDomainMean => 1.0 / d.xs.len() as f64,
            LossNormalization::RawSums => 1.0,
        };
        let mut erm = 0.0;
        let mut irm = 0.0;
        let mut lip = 0.0;
        for ((&x, &y), &rho) in d.xs.iter().zip(&d.ys).zip(&d.rho) {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::FeatureOutOfRange { value: x });
            }
            let fx = f.eval(x);
            erm += (fx - y) * (fx - y);
            irm += match bracket {
                IrmBracket::Original => 2.0 * fx * (fx - y),
                IrmBracket::Transformed => 2.0 * y * (fx - y),
            };
            let j = f.grid.nearest_node(x);
            lip += rho * df[j] * df[j];
        }
        total += norm * erm + d.eta * (norm * irm) * (norm * irm) + problem.lambda * norm * lip;
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { term: "empirical" });
    }
    Ok(total)
}

/// Precomputed per-domain quadratic pieces on a fixed grid.
struct DomainQuad {
    eta: f64,
    norm: f64,
    /// E_e = norm Σ p pᵀ (banded, bandwidth 1): fᵀE_e f = norm Σ f(x_i)².
    erm: BandedSpd,
    /// w_e = norm Σ y_i p_i.
    w: Vec<f64>,
    /// norm Σ y_i².
    sum_y2: f64,
}

impl DomainQuad {
    fn bracket_value(&self, f: &[f64], kind: IrmBracket) -> f64 {
        match kind {
            IrmBracket::Original => {
                let ef = self.erm.mul(f);
                let quad: f64 = f.iter().zip(&ef).map(|(a, b)| a * b).sum();
                let lin: f64 = f.iter().zip(&self.w).map(|(a, b)| a * b).sum();
                2.0 * (quad - lin)
            }
            IrmBracket::Transformed => {
                let lin: f64 = f.iter().zip(&self.w).map(|(a, b)| a * b).sum();
                2.0 * (lin - self.sum_y2)
            }
        }
    }

    fn bracket_gradient(&self, f: &[f64], kind: IrmBracket) -> Vec<f64> {
        match kind {
            IrmBracket::Original => {
                let ef = self.erm.mul(f);
                ef.iter()
                    .zip(&self.w)
                    .map(|(e, w)| 2.0 * (2.0 * e - w))
                    .collect()
            }
            IrmBracket::Transformed => self.w.iter().map(|w| 2.0 * w).collect(),
        }
    }

    fn erm_value(&self, f: &[f64]) -> f64 {
        let ef = self.erm.mul(f);
        let quad: f64 = f.iter().zip(&ef).map(|(a, b)| a * b).sum();
        let lin: f64 = f.iter().zip(&self.w).map(|(a, b)| a * b).sum();
        quad - 2.0 * lin + self.sum_y2
    }
}

struct Assembled {
    grid: Grid1D,
    domains: Vec<DomainQuad>,
    /// B0 = Σ_e E_e + Lipschitz form (bandwidth 2).
    base: BandedSpd,
    /// Linear term of the data part: Σ_e w_e.
    w_total: Vec<f64>,
    const_term: f64,
    /// fᵀ L f = λ Σ_e norm Σ_i ρ f'(x_i)², folded into `base`.
    lip_only: BandedSpd,
}

fn assemble(problem: &SolverProblem, config: &SolverConfig) -> Result<Assembled> {
    let grid = Grid1D::new(config.n_grid)?;
    let n = grid.len();
    let h = grid.spacing();
    let mut base = BandedSpd::zeros(n, 2);
    let mut lip_only = BandedSpd::zeros(n, 2);
    let mut w_total = vec![0.0; n];
    let mut const_term = 0.0;
    let mut domains = Vec::with_capacity(problem.domains.len());

    for d in &problem.domains {
        if d.xs.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let norm = match config.normalization {
            LossNormalization::PerDomainMean => 1.0 / d.xs.len() as f64,
            LossNormalization::RawSums => 1.0,
        };
        let mut erm = BandedSpd::zeros(n, 1);
        let mut w = vec![0.0; n];
        let mut sum_y2 = 0.0;
        for ((&x, &y), &rho) in d.xs.iter().zip(&d.ys).zip(&d.rho) {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::FeatureOutOfRange { value: x });
            }
            // Interpolation pair.
            let j = grid.cell_of(x);
            let t = ((x - grid.point(j)) / h).clamp(0.0, 1.0);
            let pj = 1.0 - t;
            let pj1 = t;
            erm.add(j, j, norm * pj * pj);
            erm.add(j + 1, j + 1, norm * pj1 * pj1);
            erm.add(j, j + 1, norm * pj * pj1);
            w[j] += norm * y * pj;
            w[j + 1] += norm * y * pj1;
            sum_y2 += norm * y * y;

            // Derivative stencil at the nearest node.
            let k = grid.nearest_node(x);
            let scale = problem.lambda * norm * rho;
            let stencil: [(usize, f64); 2] = if k == 0 {
                [(0, -1.0 / h), (1, 1.0 / h)]
            } else if k == n - 1 {
                [(n - 2, -1.0 / h), (n - 1, 1.0 / h)]
            } else {
                [(k - 1, -0.5 / h), (k + 1, 0.5 / h)]
            };
            for &(a, ca) in &stencil {
                for &(b, cb) in &stencil {
                    if a <= b {
                        lip_only.add(a, b, scale * ca * cb);
                    }
                }
            }
        }
        for i in 0..n {
            w_total[i] += w[i];
            base.add(i, i, erm.get(i, i));
            if i + 1 < n {
                base.add(i, i + 1, erm.get(i, i + 1));
            }
        }
        const_term += sum_y2;
        domains.push(DomainQuad {
            eta: d.eta,
            norm,
            erm,
            w,
            sum_y2,
        });
    }
    for i in 0..n {
        base.add(i, i, lip_only.get(i, i));
        if i + 1 < n {
            base.add(i, i + 1, lip_only.get(i, i + 1));
        }
        if i + 2 < n {
            base.add(i, i + 2, lip_only.get(i, i + 2));
        }
    }
    Ok(Assembled {
        grid,
        domains,
        base,
        w_total,
        const_term,
        lip_only,
    })
}

impl Assembled {
    /// The full loss at node values `f`, via the assembled quadratic pieces.
    fn loss(&self, f: &[f64], bracket: IrmBracket) -> f64 {
        let bf = self.base.mul(f);
        let quad: f64 = f.iter().zip(&bf).map(|(a, b)| a * b).sum();
        let lin: f64 = f.iter().zip(&self.w_total).map(|(a, b)| a * b).sum();
        let mut loss = quad - 2.0 * lin + self.const_term;
        for d in &self.domains {
            let b = d.bracket_value(f, bracket);
            loss += d.eta * b * b;
        }
        loss
    }

    fn data_mean(&self) -> f64 {
        // Minimizer of the flat-limit ERM: mean of per-domain means under
        // mean normalization.
        let mut acc = 0.0;
        for d in &self.domains {
            let total_y: f64 = d.w.iter().sum::<f64>() / d.norm;
            let n = (1.0 / d.norm).round().max(1.0);
            acc += match d.norm {
                _ if d.norm == 1.0 => total_y / n,
                _ => total_y * d.norm,
            };
        }
        acc / self.domains.len() as f64
    }
}

/// Solve the Gauss-Newton quadratic: (B0 + Σ η g gᵀ) f = b̃.
fn gauss_newton_step(
    asm: &Assembled,
    f_bar: &[f64],
    bracket: IrmBracket,
    ridge: f64,
) -> Result<Vec<f64>> {
    let n = asm.grid.len();
    let mut b_tilde = asm.w_total.clone();
    let mut gs: Vec<(f64, Vec<f64>)> = Vec::new();
    for d in &asm.domains {
        if d.eta == 0.0 {
            continue;
        }
        let bval = d.bracket_value(f_bar, bracket);
        let g = d.bracket_gradient(f_bar, bracket);
        let g_dot_f: f64 = g.iter().zip(f_bar).map(|(a, b)| a * b).sum();
        let beta = bval - g_dot_f;
        for i in 0..n {
            b_tilde[i] -= d.eta * beta * g[i];
        }
        gs.push((d.eta, g));
    }

    let mut mat = asm.base.clone();
    if ridge > 0.0 {
        for i in 0..n {
            mat.add(i, i, ridge);
        }
    }
    let chol = mat.cholesky()?;
    let z0 = chol.solve(&b_tilde);
    if gs.is_empty() {
        return Ok(z0);
    }
    // Woodbury: x = z0 - Z S⁻¹ (Gᵀ z0), S = diag(1/η) + Gᵀ B⁻¹ G.
    let m = gs.len();
    let zs: Vec<Vec<f64>> = gs.iter().map(|(_, g)| chol.solve(g)).collect();
    let mut s = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for a in 0..m {
        for b in 0..m {
            s[a][b] = gs[a].1.iter().zip(&zs[b]).map(|(x, y)| x * y).sum();
        }
        s[a][a] += 1.0 / gs[a].0;
        rhs[a] = gs[a].1.iter().zip(&z0).map(|(x, y)| x * y).sum();
    }
    let coef = solve_dense(&mut s, &mut rhs)?;
    let mut x = z0;
    for a in 0..m {
        for i in 0..n {
            x[i] -= coef[a] * zs[a][i];
        }
    }
    Ok(x)
}

/// Minimize the empirical loss. Returns the converged grid function and a
/// nonincreasing loss trace; a non-convergent run yields an error carrying
/// the last iterate and the trace.
pub fn minimize(problem: &SolverProblem, config: &SolverConfig) -> Result<Solution> {
    let asm = assemble(problem, config)?;
    let n = asm.grid.len();
    let mut f = match config.init {
        InitMode::Zeros => vec![0.0; n],
        InitMode::DataMean => vec![asm.data_mean(); n],
    };
    let mut trace = vec![asm.loss(&f, config.bracket)];

    for outer in 0..config.max_outer_iters {
        let loss_old = *trace.last().unwrap();
        // Escalating deterministic ridge if the quadratic is singular
        // (possible with λ = 0 and unsampled nodes).
        let mut target = None;
        let mut ridge = 0.0;
        for _ in 0..6 {
            match gauss_newton_step(&asm, &f, config.bracket, ridge) {
                Ok(x) => {
                    target = Some(x);
                    break;
                }
                Err(_) => {
                    let scale = (0..n).map(|i| asm.base.get(i, i)).fold(0.0, f64::max);
                    ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
                }
            }
        }
        let target = target.ok_or(Error::SingularSystem(0))?;

        // Backtrack on the true loss.
        let mut step = config.step_size;
        let mut accepted = false;
        let mut f_new = f.clone();
        let mut loss_new = loss_old;
        for _ in 0..config.max_inner_iters.max(1) {
            for i in 0..n {
                f_new[i] = f[i] + step * (target[i] - f[i]);
            }
            loss_new = asm.loss(&f_new, config.bracket);
            if loss_new.is_finite() && loss_new <= loss_old * (1.0 + 1e-14) + 1e-300 {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent direction left: already at a minimum.
            trace.push(loss_old);
            return Ok(Solution {
                f: GridFunction::new(asm.grid.clone(), f)?,
                loss_trace: trace,
                outer_iters: outer,
            });
        }
        f = f_new.clone();
        trace.push(loss_new.min(loss_old));
        let denom = loss_old.abs().max(1e-300);
        if (loss_old - loss_new).abs() / denom < config.tolerance {
            return Ok(Solution {
                f: GridFunction::new(asm.grid.clone(), f)?,
                loss_trace: trace,
                outer_iters: outer + 1,
            });
        }
    }
    Err(Error::SolverNonConvergence {
        iters: config.max_outer_iters,
        last_loss: *trace.last().unwrap(),
        trace: trace.clone(),
        last_iterate: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform_rho(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn loss_zero_for_exact_interpolant() {
        let grid = Grid1D::new(9).unwrap();
        let xs: Vec<f64> = grid.points().to_vec();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let f = GridFunction::new(grid, ys.clone()).unwrap();
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: uniform_rho(xs.len()),
                xs,
                ys,
                eta: 0.0,
            }],
            lambda: 0.0,
        };
        let loss = empirical_loss(
            &f,
            &problem,
            LossNormalization::PerDomainMean,
            IrmBracket::Original,
        )
        .unwrap();
        assert!(loss < 1e-28);
    }

    #[test]
    fn loss_zero_for_flat_match() {
        // Constant f = c on samples (x, c): every term vanishes for any λ.
        let grid = Grid1D::new(17).unwrap();
        let f = GridFunction::constant(grid, 3.0);
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                xs: vec![0.1, 0.5, 0.9],
                ys: vec![3.0; 3],
                rho: uniform_rho(3),
                eta: 1.0,
            }],
            lambda: 50.0,
        };
        let loss = empirical_loss(
            &f,
            &problem,
            LossNormalization::PerDomainMean,
            IrmBracket::Original,
        )
        .unwrap();
        assert!(loss < 1e-28);
    }

    #[test]
    fn loss_hand_case() {
        // Two samples y = {0, 2}, f ≡ 1, λ = 0, η = 1: ERM = 1, bracket = 0.
        let grid = Grid1D::new(5).unwrap();
        let f = GridFunction::constant(grid, 1.0);
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                xs: vec![0.25, 0.75],
                ys: vec![0.0, 2.0],
                rho: uniform_rho(2),
                eta: 1.0,
            }],
            lambda: 0.0,
        };
        let loss = empirical_loss(
            &f,
            &problem,
            LossNormalization::PerDomainMean,
            IrmBracket::Original,
        )
        .unwrap();
        assert_relative_eq!(loss, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn loss_rejects_out_of_range() {
        let grid = Grid1D::new(5).unwrap();
        let f = GridFunction::constant(grid, 0.0);
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                xs: vec![1.5],
                ys: vec![0.0],
                rho: uniform_rho(1),
                eta: 0.0,
            }],
            lambda: 0.0,
        };
        assert!(matches!(
            empirical_loss(
                &f,
                &problem,
                LossNormalization::PerDomainMean,
                IrmBracket::Original
            ),
            Err(Error::FeatureOutOfRange { .. })
        ));
    }

    #[test]
    fn interpolates_with_one_sample_per_node() {
        let config = SolverConfig {
            n_grid: 33,
            ..Default::default()
        };
        let grid = Grid1D::new(33).unwrap();
        let xs: Vec<f64> = grid.points().to_vec();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: uniform_rho(33),
                xs: xs.clone(),
                ys: ys.clone(),
                eta: 0.0,
            }],
            lambda: 0.0,
        };
        let sol = minimize(&problem, &config).unwrap();
        for i in 0..33 {
            assert_relative_eq!(sol.f.values[i], ys[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_lambda_flattens_to_pooled_mean() {
        let config = SolverConfig {
            n_grid: 65,
            ..Default::default()
        };
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + x).collect();
        let mean: f64 = ys.iter().sum::<f64>() / ys.len() as f64;
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: uniform_rho(200),
                xs,
                ys,
                eta: 0.0,
            }],
            lambda: 1e4,
        };
        let sol = minimize(&problem, &config).unwrap();
        for &v in &sol.f.values {
            assert!((v - mean).abs() < 1e-2, "value {v} vs mean {mean}");
        }
    }

    #[test]
    fn trace_is_nonincreasing() {
        let config = SolverConfig {
            n_grid: 65,
            init: InitMode::Zeros,
            ..Default::default()
        };
        let xs: Vec<f64> = (0..150).map(|i| (i as f64 + 0.5) / 150.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + (6.0 * x).cos()).collect();
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: uniform_rho(150),
                xs,
                ys,
                eta: 2.0,
            }],
            lambda: 0.01,
        };
        let sol = minimize(&problem, &config).unwrap();
        for w in sol.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn minimizer_beats_reference_functions() {
        let config = SolverConfig {
            n_grid: 65,
            ..Default::default()
        };
        let xs: Vec<f64> = (0..300).map(|i| (i as f64 + 0.5) / 300.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + (2.0 * x - 1.0).powi(2)).collect();
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: uniform_rho(300),
                xs: xs.clone(),
                ys: ys.clone(),
                eta: 1.0,
            }],
            lambda: 0.02,
        };
        let sol = minimize(&problem, &config).unwrap();
        let best = empirical_loss(
            &sol.f,
            &problem,
            LossNormalization::PerDomainMean,
            IrmBracket::Original,
        )
        .unwrap();
        let grid = sol.f.grid.clone();
        let zero = GridFunction::constant(grid.clone(), 0.0);
        let mean = GridFunction::constant(
            grid,
            ys.iter().sum::<f64>() / ys.len() as f64,
        );
        for g in [&zero, &mean] {
            let lg = empirical_loss(
                g,
                &problem,
                LossNormalization::PerDomainMean,
                IrmBracket::Original,
            )
            .unwrap();
            assert!(best <= lg + 1e-12, "{best} vs {lg}");
        }
    }

    #[test]
    fn deterministic_given_inputs() {
        let config = SolverConfig {
            n_grid: 33,
            ..Default::default()
        };
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 + 0.5) / 60.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: uniform_rho(60),
                xs,
                ys,
                eta: 0.7,
            }],
            lambda: 0.05,
        };
        let a = minimize(&problem, &config).unwrap();
        let b = minimize(&problem, &config).unwrap();
        assert_eq!(a.f.values, b.f.values);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn assembled_loss_matches_direct_evaluation() {
        let config = SolverConfig {
            n_grid: 33,
            ..Default::default()
        };
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - x).collect();
        let problem = SolverProblem {
            domains: vec![SolverDomain {
                id: 0,
                rho: (0..40).map(|i| 0.5 + (i % 3) as f64).collect(),
                xs,
                ys,
                eta: 1.3,
            }],
            lambda: 0.04,
        };
        let asm = assemble(&problem, &config).unwrap();
        let f = GridFunction::from_fn(asm.grid.clone(), |x| 0.3 + x * x);
        let direct = empirical_loss(
            &f,
            &problem,
            LossNormalization::PerDomainMean,
            IrmBracket::Original,
        )
        .unwrap();
        let via_asm = asm.loss(&f.values, IrmBracket::Original);
        assert_relative_eq!(direct, via_asm, epsilon = 1e-12 * direct.abs());
    }
}
