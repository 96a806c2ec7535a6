//! Metrics, Welch's t-test, Monte-Carlo risk estimation and the brute-force
//! grid-search oracle for penalty optima.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::pairwise_sum;
use crate::penalty::PenaltyScheme;
use crate::seed;
use crate::solver::{
    empirical_loss, minimize, IrmBracket, LossNormalization, SolverConfig, SolverDomain,
    SolverProblem,
};
use crate::theory::{theorem1_risk, GroupLayout, RhoField, TheorySetting};

// ---------------------------------------------------------------------------
// Special functions (Lanczos log-gamma, regularized incomplete beta).

/// ln Γ(z) for z > 0, Lanczos approximation.
pub fn ln_gamma(z: f64) -> f64 {
    const C: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, &c) in C.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    (z + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * sum / z).ln()
}

/// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
/// Absolute accuracy well below 1e-10 over the statistical range.
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x out of range");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // Pick the representation whose continued fraction converges fast.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Two-sided tail probability P(|T_ν| > |t|) of the Student t-distribution.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    betainc(0.5 * dof, 0.5, x)
}

// ---------------------------------------------------------------------------
// Metrics.

/// Mean squared error.
pub fn mse(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    let sq: Vec<f64> = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .collect();
    pairwise_sum(&sq) / sq.len() as f64
}

/// Fraction of correct 0.5-thresholded predictions against {0,1} labels.
pub fn accuracy(probabilities: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(probabilities.len(), labels.len());
    let correct = probabilities
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p > 0.5) == (**y > 0.5))
        .count();
    correct as f64 / labels.len() as f64
}

/// Area under the ROC curve by the rank statistic; tied scores earn 0.5
/// credit through midranks.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Midranks over tied blocks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &idx in &order[i..=j] {
            if labels[idx] > 0.5 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Welch's t-test.

/// Alternative hypothesis for the mean comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    TwoSided,
    /// mean(a) < mean(b)
    Less,
    /// mean(a) > mean(b)
    Greater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub stars: String,
}

/// Significance stars at the 0.1 / 0.05 / 0.01 thresholds.
pub fn stars_for(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    let sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, pairwise_sum(&sq) / (n - 1.0))
}

/// Welch's unequal-variance t-test of equal means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    welch_t_test_tail(a, b, Tail::TwoSided)
}

pub fn welch_t_test_tail(a: &[f64], b: &[f64], tail: Tail) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        // Zero pooled variance: equal means give the null outcome exactly.
        let (t, p) = if ma == mb {
            (0.0, 1.0)
        } else if ma > mb {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        let p = directional_p(t, p, tail);
        return Ok(TTestResult {
            t,
            dof: na + nb - 2.0,
            stars: stars_for(p).to_string(),
            p,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p_two = student_t_two_sided(t, dof);
    let p = directional_p(t, p_two, tail);
    Ok(TTestResult {
        t,
        dof,
        stars: stars_for(p).to_string(),
        p,
    })
}

fn directional_p(t: f64, p_two: f64, tail: Tail) -> f64 {
    match tail {
        Tail::TwoSided => p_two,
        Tail::Less => {
            if t <= 0.0 {
                0.5 * p_two
            } else {
                1.0 - 0.5 * p_two
            }
        }
        Tail::Greater => {
            if t >= 0.0 {
                0.5 * p_two
            } else {
                1.0 - 0.5 * p_two
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo risk.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
}

/// Linear interpolation of a node table at x.
fn interp(grid: &crate::grid::Grid1D, values: &[f64], x: f64) -> f64 {
    let j = grid.cell_of(x);
    let t = ((x - grid.point(j)) / grid.spacing()).clamp(0.0, 1.0);
    values[j] * (1.0 - t) + values[j + 1] * t
}

/// Draw sample positions from a density node table by inverting its
/// cumulative trapezoid.
fn sample_positions(
    setting: &TheorySetting,
    density: &[f64],
    n: usize,
    rng: &mut impl rand::RngCore,
) -> Vec<f64> {
    let grid = &setting.grid;
    let mut cdf = grid.cumulative_trapezoid(density);
    let total = cdf[grid.len() - 1];
    for v in &mut cdf {
        *v /= total;
    }
    (0..n)
        .map(|_| {
            let u = seed::uniform01(rng);
            let k = cdf.partition_point(|&c| c < u).clamp(1, grid.len() - 1);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
            grid.point(k - 1) + t * grid.spacing()
        })
        .collect()
}

/// Build one stochastic realization of `setting` as a solver problem.
pub fn realize_problem(
    setting: &TheorySetting,
    scheme_lambda: f64,
    eta: &BTreeMap<u32, f64>,
    rho: &RhoField,
    rng_label: &str,
    master_seed: u64,
) -> Result<SolverProblem> {
    let grid = &setting.grid;
    let mut domains = Vec::with_capacity(setting.domains.len());
    for d in &setting.domains {
        let mut rng = seed::stream(master_seed, &format!("{rng_label}/domain/{}", d.id));
        let xs = sample_positions(setting, &d.density, d.n_samples, &mut rng);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                interp(grid, &setting.truth.f, x)
                    + interp(grid, &d.sigma, x) * seed::standard_normal(&mut rng)
            })
            .collect();
        let rho_per_sample: Vec<f64> = xs.iter().map(|&x| interp(grid, &rho.values, x)).collect();
        let eta_e = *eta.get(&d.id).ok_or_else(|| Error::Config {
            key: format!("eta.{}", d.id),
            message: "missing IRM coefficient".into(),
        })?;
        domains.push(SolverDomain {
            id: d.id,
            xs,
            ys,
            rho: rho_per_sample,
            eta: eta_e,
        });
    }
    Ok(SolverProblem {
        domains,
        lambda: scheme_lambda,
    })
}

/// Estimate the expected integrated squared error of the grid solver under
/// fresh noise: for each replication, regenerate the samples, minimize, and
/// integrate (f̂ - f*)² by trapezoid.
pub fn monte_carlo_risk(
    setting: &TheorySetting,
    lambda: f64,
    eta: &BTreeMap<u32, f64>,
    rho: &RhoField,
    config: &SolverConfig,
    replications: usize,
    master_seed: u64,
) -> Result<RiskEstimate> {
    assert!(replications >= 2, "need at least two replications");
    let risks: Vec<Result<f64>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let problem = realize_problem(
                setting,
                lambda,
                eta,
                rho,
                &format!("rep/{rep}"),
                master_seed,
            )?;
            let solution = minimize(&problem, config).map_err(|e| Error::Replication {
                replication: rep,
                source: Box::new(e),
            })?;
            let truth_on_solver_grid: Vec<f64> = solution
                .f
                .grid
                .points()
                .iter()
                .map(|&x| interp(&setting.grid, &setting.truth.f, x))
                .collect();
            let sq: Vec<f64> = solution
                .f
                .values
                .iter()
                .zip(&truth_on_solver_grid)
                .map(|(a, b)| (a - b) * (a - b))
                .collect();
            Ok(solution.f.grid.trapezoid(&sq))
        })
        .collect();
    let risks: Vec<f64> = risks.into_iter().collect::<Result<_>>()?;
    let (mean, var) = mean_var(&risks);
    Ok(RiskEstimate {
        mean,
        std_error: (var / replications as f64).sqrt(),
        replications,
    })
}

// ---------------------------------------------------------------------------
// Grid-search oracle.

/// Grids over λ, per-domain η and per-group ρ; empty axes keep the base
/// value fixed.
#[derive(Debug, Clone, Default)]
pub struct PenaltyGrids {
    pub lambda: Vec<f64>,
    pub eta: BTreeMap<u32, Vec<f64>>,
    pub rho: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum Objective<'a> {
    Theorem1,
    MonteCarlo {
        config: &'a SolverConfig,
        replications: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: PenaltyScheme,
    pub best_value: f64,
    /// One row per evaluated cell, in ascending lexicographic axis order.
    pub table: Vec<(PenaltyScheme, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Axis {
    Lambda,
    Eta(u32),
    Rho(usize),
}

/// Exhaustive evaluation over the cartesian product of the grids; ties
/// break toward the smaller parameter values (ascending iteration order and
/// strict improvement).
pub fn grid_search_penalties(
    setting: &TheorySetting,
    base: &PenaltyScheme,
    layout: &GroupLayout,
    grids: &PenaltyGrids,
    objective: Objective<'_>,
) -> Result<GridSearchResult> {
    let mut axes: Vec<(Axis, Vec<f64>)> = Vec::new();
    if !grids.lambda.is_empty() {
        let mut v = grids.lambda.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        axes.push((Axis::Lambda, v));
    }
    for (&e, vals) in &grids.eta {
        let mut v = vals.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        axes.push((Axis::Eta(e), v));
    }
    for (&k, vals) in &grids.rho {
        let mut v = vals.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        axes.push((Axis::Rho(k), v));
    }
    if axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyInput("grid axis"));
    }

    let mut index = vec![0usize; axes.len()];
    let mut table = Vec::new();
    let mut best: Option<(PenaltyScheme, f64)> = None;
    let mut cell = 0usize;
    loop {
        let mut scheme = base.clone();
        for (ai, (axis, vals)) in axes.iter().enumerate() {
            let v = vals[index[ai]];
            match axis {
                Axis::Lambda => scheme.lambda = v,
                Axis::Eta(e) => {
                    scheme.eta.insert(*e, v);
                }
                Axis::Rho(k) => {
                    scheme.rho.insert(*k, v);
                }
            }
        }
        let rho_field = RhoField::from_scheme(&setting.grid, &scheme, layout)?;
        let value = match &objective {
            Objective::Theorem1 => {
                theorem1_risk(setting, scheme.lambda, &scheme.eta, &rho_field)?.risk
            }
            Objective::MonteCarlo {
                config,
                replications,
                seed,
            } => {
                monte_carlo_risk(
                    setting,
                    scheme.lambda,
                    &scheme.eta,
                    &rho_field,
                    config,
                    *replications,
                    seed.wrapping_add(cell as u64),
                )?
                .mean
            }
        };
        let improves = match &best {
            None => true,
            Some((_, b)) => value < *b,
        };
        if improves {
            best = Some((scheme.clone(), value));
        }
        table.push((scheme, value));
        cell += 1;

        // Odometer increment.
        let mut carry = axes.len();
        for ai in (0..axes.len()).rev() {
            index[ai] += 1;
            if index[ai] < axes[ai].1.len() {
                carry = ai;
                break;
            }
            index[ai] = 0;
        }
        if axes.is_empty() || carry == axes.len() {
            break;
        }
    }
    let (best, best_value) = best.ok_or(Error::EmptyInput("grids"))?;
    Ok(GridSearchResult {
        best,
        best_value,
        table,
    })
}

/// Mean loss of the solver on a fixed realized problem; used by tests.
pub fn realized_loss(problem: &SolverProblem, config: &SolverConfig) -> Result<f64> {
    let sol = minimize(problem, config)?;
    empirical_loss(
        &sol.f,
        problem,
        LossNormalization::PerDomainMean,
        IrmBracket::Original,
    )
}
