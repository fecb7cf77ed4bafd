//! Decoy-state estimation of the even-sector detection counts.
//!
//! The expected number of detections for test labels `(a, b)` is
//! `N p_a p_b sum_{j,m} P_a(j) P_b(m) Y_jm` with intensity-independent yields
//! `Y_jm`. Each observed count is turned into a confidence interval for its
//! expectation; yields with `j + m` above the truncation only enter through a
//! per-row slack bounded by the Poisson tail mass. Two linear programs over
//! the retained yields then bound the `(0,0)+(1,1)` even-sector expectation
//! from above and the `(2,2)` even-sector expectation from below, and a final
//! concentration step converts expectations into bounds on realized counts.

use serde::{Deserialize, Serialize};

use crate::channel::ObservedCounts;
use crate::error::{Error, Result};
use crate::fock;
use crate::keyrate::ProtocolParams;
use crate::lp::{self, LinearProgram, LpStatus, Sense};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoyOptions {
    /// Largest `j + m` kept as an explicit yield variable.
    pub max_photon_total: u32,
    /// Use all sixteen label pairs instead of the four diagonal ones.
    pub use_off_diagonal: bool,
    /// Force `Y_jm = Y_mj`.
    pub symmetric_yields: bool,
    /// Tight Poisson-rate intervals instead of the closed-form ones.
    pub exact_chernoff: bool,
}

impl Default for DecoyOptions {
    fn default() -> Self {
        Self { max_photon_total: 4, use_off_diagonal: true, symmetric_yields: false, exact_chernoff: false }
    }
}

impl DecoyOptions {
    /// Number of failure events sharing `epsilon_err`: one interval per
    /// constraint row plus the two objective conversions.
    pub fn failure_events(&self) -> usize {
        self.label_pairs().len() + 2
    }

    pub fn label_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                if self.use_off_diagonal || a == b {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Yield variables in LP column order: by total photon number, then by `j`.
pub fn yield_pairs(max_total: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for n in 0..=max_total {
        for j in 0..=n {
            out.push((j, n - j));
        }
    }
    out
}

/// `P(X > n)` for `X ~ Poisson(mu)`, summed upward to avoid cancellation.
fn poisson_tail_above(mu: f64, n: u32) -> f64 {
    let mut sum = 0.0;
    let mut k = n + 1;
    loop {
        let t = fock::poisson(mu, k);
        sum += t;
        if t <= 1e-18 * sum || t == 0.0 || k > n + 10_000 {
            break;
        }
        k += 1;
    }
    sum.min(1.0)
}

/// Even part of [`poisson_tail_above`].
fn poisson_even_tail_above(mu: f64, n: u32) -> f64 {
    let mut sum = 0.0;
    let mut k = if (n + 1).is_multiple_of(2) { n + 1 } else { n + 2 };
    loop {
        let t = fock::poisson(mu, k);
        sum += t;
        if t <= 1e-18 * sum || t == 0.0 || k > n + 10_000 {
            break;
        }
        k += 2;
    }
    sum.min(1.0)
}

/// Per-round gain intervals for each label pair, unweighted by `p_a p_b`.
/// `None` marks a pair carrying no information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub bounds: [[Option<(f64, f64)>; 4]; 4],
}

impl GainBounds {
    /// Degenerate intervals at known gains.
    pub fn exact(gains: &[[f64; 4]; 4]) -> Self {
        let mut bounds = [[None; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                bounds[a][b] = Some((gains[a][b], gains[a][b]));
            }
        }
        Self { bounds }
    }

    pub fn from_counts(observed: &ObservedCounts, params: &ProtocolParams, eps_per_row: f64) -> Result<Self> {
        let mut bounds = [[None; 4]; 4];
        let n = observed.n_tot as f64;
        for a in 0..4 {
            for b in 0..4 {
                let w = n * params.p_test[a] * params.p_test[b];
                if w <= 0.0 {
                    continue;
                }
                let x = observed.gamma[a][b] as f64;
                let (lo, hi) = if params.decoy.exact_chernoff {
                    (stats::chernoff_lower_exact(x, eps_per_row)?, stats::chernoff_upper_exact(x, eps_per_row)?)
                } else {
                    stats::expectation_interval(x, eps_per_row)?
                };
                bounds[a][b] = Some((lo / w, (hi / w).min(1.0)));
            }
        }
        Ok(Self { bounds })
    }
}

/// Constraint rows over the retained yields; the objective is left at zero.
pub fn build_constraints_from_gains(bounds: &GainBounds, params: &ProtocolParams) -> Result<LinearProgram> {
    let opts = params.decoy;
    let pairs = yield_pairs(opts.max_photon_total);
    let mut lp = LinearProgram::new(pairs.len(), Sense::Maximize);
    for (a, b) in opts.label_pairs() {
        let Some((lo, hi)) = bounds.bounds[a][b] else {
            continue;
        };
        let (ma, mb) = (params.mu_test[a], params.mu_test[b]);
        let coeffs: Vec<f64> = pairs.iter().map(|&(j, m)| fock::poisson(ma, j) * fock::poisson(mb, m)).collect();
        let tail = poisson_tail_above(ma + mb, opts.max_photon_total);
        lp.add_row(coeffs, lo - tail, hi)?;
    }
    if opts.symmetric_yields {
        for (i, &(j, m)) in pairs.iter().enumerate() {
            if j < m {
                let k = pairs.iter().position(|&p| p == (m, j)).expect("mirror pair present");
                let mut row = vec![0.0; pairs.len()];
                row[i] = 1.0;
                row[k] = -1.0;
                lp.add_row(row, 0.0, 0.0)?;
            }
        }
    }
    Ok(lp)
}

/// Constraint skeleton from observed counts with `eps_per_constraint` spent
/// on each row interval.
pub fn build_constraints(
    observed: &ObservedCounts,
    params: &ProtocolParams,
    eps_per_constraint: f64,
) -> Result<LinearProgram> {
    let bounds = GainBounds::from_counts(observed, params, eps_per_constraint)?;
    build_constraints_from_gains(&bounds, params)
}

fn sum_even_objective(params: &ProtocolParams, pairs: &[(u32, u32)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(j, m)| {
            if (j + m) % 2 == 1 {
                return 0.0;
            }
            (0..2)
                .map(|a| {
                    let mu = params.mu_test[a];
                    params.p_test[a] * params.p_test[a] * fock::poisson(mu, j) * fock::poisson(mu, m)
                })
                .sum()
        })
        .collect()
}

fn two_even_objective(params: &ProtocolParams, pairs: &[(u32, u32)]) -> Vec<f64> {
    let mu = params.mu_test[2];
    let w = params.p_test[2] * params.p_test[2];
    pairs
        .iter()
        .map(|&(j, m)| if (j + m) % 2 == 1 { 0.0 } else { w * fock::poisson(mu, j) * fock::poisson(mu, m) })
        .collect()
}

/// Per-round even-sector probability of labels `(0,0)` and `(1,1)` above the
/// truncation, with every yield set to one.
fn sum_even_tail(params: &ProtocolParams) -> f64 {
    (0..2)
        .map(|a| {
            let p = params.p_test[a];
            p * p * poisson_even_tail_above(2.0 * params.mu_test[a], params.decoy.max_photon_total)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpDiagnostics {
    pub rows: usize,
    pub variables: usize,
    /// Per-round LP optimum of the `(0,0)+(1,1)` even expectation, truncated part.
    pub sum_even_lp: f64,
    /// Per-round untruncated remainder added to `sum_even_lp`.
    pub sum_even_tail: f64,
    /// Per-round LP optimum of the `(2,2)` even expectation.
    pub two_even_lp: f64,
    pub iterations_upper: usize,
    pub iterations_lower: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyEstimate {
    pub gamma_sum_even_upper: f64,
    pub gamma_2_even_lower: f64,
    pub epsilon_err_spent: f64,
    pub diagnostics: LpDiagnostics,
}

/// Per-round bounds without any finite-size correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub sum_even_rate_upper: f64,
    pub two_even_rate_lower: f64,
    pub diagnostics: LpDiagnostics,
}

fn solve_objective(mut lp: LinearProgram, c: Vec<f64>, sense: Sense) -> Result<(f64, usize)> {
    lp.set_objective(c)?;
    lp.set_sense(sense);
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok((sol.objective_value.max(0.0), sol.iterations)),
        LpStatus::Infeasible => Err(Error::Infeasible("decoy constraints admit no yields".into())),
        LpStatus::Unbounded => Err(Error::Infeasible("decoy program unbounded".into())),
    }
}

fn solve_both(bounds: &GainBounds, params: &ProtocolParams) -> Result<LpDiagnostics> {
    let lp = build_constraints_from_gains(bounds, params)?;
    let pairs = yield_pairs(params.decoy.max_photon_total);
    let (rows, variables) = (lp.num_rows(), lp.num_vars());
    let (sum_even_lp, iterations_upper) = solve_objective(lp.clone(), sum_even_objective(params, &pairs), Sense::Maximize)?;
    let (two_even_lp, iterations_lower) = solve_objective(lp, two_even_objective(params, &pairs), Sense::Minimize)?;
    Ok(LpDiagnostics {
        rows,
        variables,
        sum_even_lp,
        sum_even_tail: sum_even_tail(params),
        two_even_lp,
        iterations_upper,
        iterations_lower,
    })
}

/// Finite-size bounds on the realized counts `gamma_sum_even` (upper) and
/// `gamma_2_even` (lower). The decoy failure budget is split evenly over the
/// row intervals and the two conversions.
pub fn estimate(observed: &ObservedCounts, params: &ProtocolParams) -> Result<DecoyEstimate> {
    observed.validate()?;
    let events = params.decoy.failure_events();
    let eps = params.budget.epsilon_err / events as f64;
    let bounds = GainBounds::from_counts(observed, params, eps)?;
    let d = solve_both(&bounds, params)?;
    let n = observed.n_tot as f64;
    let upper_mean = n * (d.sum_even_lp + d.sum_even_tail);
    let lower_mean = n * d.two_even_lp;
    let (up, low) = if params.decoy.exact_chernoff {
        (stats::realization_upper_exact(upper_mean, eps)?, stats::realization_lower_exact(lower_mean, eps)?)
    } else {
        (stats::chernoff_upper(upper_mean, eps)?, stats::chernoff_lower(lower_mean, eps)?)
    };
    Ok(DecoyEstimate {
        gamma_sum_even_upper: up,
        gamma_2_even_lower: low.max(0.0),
        epsilon_err_spent: eps * events as f64,
        diagnostics: d,
    })
}

pub fn gamma_sum_even_upper(observed: &ObservedCounts, params: &ProtocolParams) -> Result<f64> {
    Ok(estimate(observed, params)?.gamma_sum_even_upper)
}

pub fn gamma_2_even_lower(observed: &ObservedCounts, params: &ProtocolParams) -> Result<f64> {
    Ok(estimate(observed, params)?.gamma_2_even_lower)
}

/// Bounds from exactly known per-round gains.
pub fn estimate_rates(gains: &[[f64; 4]; 4], params: &ProtocolParams) -> Result<RateEstimate> {
    let d = solve_both(&GainBounds::exact(gains), params)?;
    Ok(RateEstimate {
        sum_even_rate_upper: d.sum_even_lp + d.sum_even_tail,
        two_even_rate_lower: d.two_even_lp,
        diagnostics: d,
    })
}
