//! Operator-dominance coefficients and their numerical verification.
//!
//! The test-mode mixture restricted to even total photon number,
//!
//! ```text
//! p0^2 tau_even(mu0) + p1^2 tau_even(mu1) - Gamma tau_even(mu2)  >=  Lambda rho_even(mu)
//! ```
//!
//! holds for the `Gamma` and `Lambda` computed here whenever
//! `0 < (mu1 - mu2)/mu2 < p0^2 e^{-2 mu0} / (p1^2 e^{-2 mu1})`.
//!
//! The left-hand side is diagonal in the Fock basis with entries
//! `q_{j+m} / (j! m!)`, and `rho_even` is a sum of two rank-one projectors on
//! the both-even and both-odd subspaces. The inequality therefore reduces to
//! one scalar condition per subspace, `<phi|phi> <= p_even / Lambda`, which
//! gives `Lambda` in closed form up to a convergent series. [`verify_dominance`]
//! re-checks the operator inequality independently by eigen-decomposition on a
//! truncated basis.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fock::{self, pair_weight_unchecked};

/// Hard cap on the number of series terms before declaring divergence.
pub const MAX_SERIES_TERMS: usize = 100_000;

/// Default relative tolerance for the `Lambda` series.
pub const DEFAULT_SERIES_TOL: f64 = 1e-14;

/// Inputs of the dominance construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceParams {
    /// Per-party probability of test label 0.
    pub p0: f64,
    /// Per-party probability of test label 1.
    pub p1: f64,
    /// Code-mode signal intensity.
    pub mu: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl DominanceParams {
    fn check_domain(&self) -> Result<()> {
        ensure(self.p0 > 0.0 && self.p0 <= 1.0, || format!("p0 = {} must be in (0, 1]", self.p0))?;
        ensure(self.p1 > 0.0 && self.p1 <= 1.0, || format!("p1 = {} must be in (0, 1]", self.p1))?;
        ensure(self.mu0 >= 0.0 && self.mu0.is_finite(), || format!("mu0 = {} must be >= 0", self.mu0))?;
        for (name, v) in [("mu", self.mu), ("mu1", self.mu1), ("mu2", self.mu2)] {
            ensure(v > 0.0 && v.is_finite(), || format!("{name} = {v} must be > 0"))?;
        }
        Ok(())
    }

    /// Validity constraint `0 < (mu1 - mu2)/mu2 < p0^2 e^{-2mu0} / (p1^2 e^{-2mu1})`.
    pub fn satisfies_validity(&self) -> bool {
        validity_margin(self) > 0.0 && self.mu1 > self.mu2
    }
}

/// `p0^2 e^{-2mu0}/(p1^2 e^{-2mu1}) - (mu1 - mu2)/mu2`; positive iff the upper
/// half of the validity constraint holds.
pub fn validity_margin(p: &DominanceParams) -> f64 {
    let bound = (p.p0 * p.p0 * (-2.0 * p.mu0).exp()) / (p.p1 * p.p1 * (-2.0 * p.mu1).exp());
    bound - (p.mu1 - p.mu2) / p.mu2
}

/// `(Gamma, Lambda)` with validity and series diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceCoefficients {
    pub gamma: f64,
    pub lambda: f64,
    pub valid: bool,
    /// Vacuum coefficient `q'_0`.
    pub q0: f64,
    pub series_terms_used: usize,
    /// Certified upper bound on the truncated series remainder (already
    /// added into `lambda`, which is therefore conservative).
    pub series_remainder: f64,
    /// Relative gap between `lambda` and the closed form that writes the
    /// `k >= 1` denominators as `mu1^{2k} - mu2^{2k}`.
    pub closed_form_rel_diff: f64,
}

impl DominanceCoefficients {
    /// `Gamma = Lambda = 0`: the inequality degenerates to positivity of the
    /// test mixture.
    pub fn trivial() -> Self {
        Self {
            gamma: 0.0,
            lambda: 0.0,
            valid: false,
            q0: 0.0,
            series_terms_used: 0,
            series_remainder: 0.0,
            closed_form_rel_diff: 0.0,
        }
    }

    fn invalid(gamma: f64, q0: f64) -> Self {
        Self { gamma, q0, ..Self::trivial() }
    }

    /// Whether the closed form agrees with the series to `1e-8` relative.
    pub fn closed_form_agrees(&self) -> bool {
        self.closed_form_rel_diff <= 1e-8
    }
}

/// `Gamma = p1^2 mu1 e^{-2mu1} / (mu2 e^{-2mu2})`.
pub fn gamma_coefficient(p1: f64, mu1: f64, mu2: f64) -> Result<f64> {
    ensure(p1 > 0.0 && p1 <= 1.0, || format!("p1 = {p1} must be in (0, 1]"))?;
    ensure(mu2 > 0.0 && mu2.is_finite(), || format!("mu2 = {mu2} must be > 0"))?;
    if mu1 <= mu2 {
        return Err(Error::Ordering { mu1, mu2 });
    }
    Ok(p1 * p1 * (mu1 / mu2) * (-2.0 * (mu1 - mu2)).exp())
}

/// Reduced diagonal coefficient `q'_n` (the `mu0` contribution dropped for
/// `n >= 2`), with `Gamma` fixed by [`gamma_coefficient`].
pub fn q_prime(n: u32, p0: f64, p1: f64, mu0: f64, mu1: f64, mu2: f64) -> Result<f64> {
    ensure(n.is_multiple_of(2), || format!("q' is defined on even indices only, got n = {n}"))?;
    ensure(mu2 > 0.0, || format!("mu2 = {mu2} must be > 0"))?;
    if n == 0 {
        Ok(p0 * p0 * (-2.0 * mu0).exp() - p1 * p1 * (-2.0 * mu1).exp() * (mu1 - mu2) / mu2)
    } else {
        let a = p1 * p1 * mu1 * (-2.0 * mu1).exp();
        Ok(a * (mu1.powi(n as i32 - 1) - mu2.powi(n as i32 - 1)))
    }
}

/// Full diagonal coefficient `q_n = p0^2 e^{-2mu0} mu0^n + p1^2 e^{-2mu1} mu1^n - Gamma e^{-2mu2} mu2^n`
/// for an arbitrary `Gamma`. Zero for odd `n`.
pub fn q_full(n: u32, p0: f64, p1: f64, mu0: f64, mu1: f64, mu2: f64, gamma: f64) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    let pw = |mu: f64| if n == 0 { 1.0 } else { mu.powi(n as i32) };
    p0 * p0 * (-2.0 * mu0).exp() * pw(mu0) + p1 * p1 * (-2.0 * mu1).exp() * pw(mu1)
        - gamma * (-2.0 * mu2).exp() * pw(mu2)
}

/// Computes `Gamma` and `Lambda`.
///
/// `Lambda = cosh(2 mu) / S` with `S = sum_{k>=0} (k+1) mu^{2k} / q'_{2k}`. The
/// series is summed until both the last term and a certified geometric bound
/// on the remainder are below `tol` relative to the partial sum; the bound is
/// added to `S` so the returned `Lambda` never exceeds the exact value.
pub fn lambda_coefficient(params: &DominanceParams, tol: f64) -> Result<DominanceCoefficients> {
    params.check_domain()?;
    ensure(tol > 0.0 && tol < 1.0, || format!("tolerance {tol} must be in (0, 1)"))?;
    let DominanceParams { p0, p1, mu, mu0, mu1, mu2 } = *params;

    if mu1 <= mu2 {
        return Ok(DominanceCoefficients::invalid(0.0, f64::NAN));
    }
    let gamma = gamma_coefficient(p1, mu1, mu2)?;
    let q0 = q_prime(0, p0, p1, mu0, mu1, mu2)?;
    if !params.satisfies_validity() || q0 <= 0.0 {
        return Ok(DominanceCoefficients::invalid(gamma, q0));
    }
    if mu >= mu1 {
        return Err(Error::Divergence { terms: MAX_SERIES_TERMS });
    }

    let a = p1 * p1 * mu1 * (-2.0 * mu1).exp();
    let r = (mu / mu1).powi(2);
    let rho = mu2 / mu1;

    // k = 0 term, then k >= 1 with q'_{2k} = a mu1^{2k-1} (1 - rho^{2k-1})
    let mut sum = 1.0 / q0;
    let mut r_pow = 1.0;
    let mut rho_pow = 1.0 / rho; // rho^{2k-1} at k = 0
    let mut terms = 1usize;
    let mut remainder;
    let mut k = 0usize;
    loop {
        // certified remainder for indices > k
        let kf = k as f64;
        let next_rho = rho_pow * rho * rho; // rho^{2k+1}
        let tail_series = r_pow * r * ((kf + 2.0) - (kf + 1.0) * r) / ((1.0 - r) * (1.0 - r));
        remainder = mu1 / (a * (1.0 - next_rho)) * tail_series;
        let last = if k == 0 { sum } else { (kf + 1.0) * mu1 * r_pow / (a * (1.0 - rho_pow)) };
        if k > 0 && last <= tol * sum && remainder <= tol * sum {
            break;
        }
        if terms >= MAX_SERIES_TERMS {
            return Err(Error::Divergence { terms });
        }
        k += 1;
        r_pow *= r;
        rho_pow = next_rho;
        let term = (k as f64 + 1.0) * mu1 * r_pow / (a * (1.0 - rho_pow));
        sum += term;
        terms += 1;
    }
    let series = sum + remainder;
    let lambda = (2.0 * mu).cosh() / series;

    let closed = closed_form_lambda(params, q0, terms);
    let closed_form_rel_diff = ((closed - lambda) / lambda).abs();
    if closed_form_rel_diff > 1e-8 {
        log::debug!("closed-form Lambda {closed:e} differs from series Lambda {lambda:e} by {closed_form_rel_diff:e}");
    }

    Ok(DominanceCoefficients {
        gamma,
        lambda,
        valid: true,
        q0,
        series_terms_used: terms,
        series_remainder: remainder,
        closed_form_rel_diff,
    })
}

/// The closed form that writes the `k >= 1` denominators as `mu1^{2k} - mu2^{2k}`.
fn closed_form_lambda(params: &DominanceParams, q0: f64, terms: usize) -> f64 {
    let DominanceParams { p1, mu, mu1, mu2, .. } = *params;
    let e2mu = (-2.0 * mu).exp();
    let mut sum = e2mu / (q0 / (p1 * p1));
    let pref = e2mu / (mu1 * (-2.0 * mu1).exp());
    for k in 1..terms.max(2) {
        let two_k = 2 * k as i32;
        sum += pref * (k as f64 + 1.0) * mu.powi(two_k) / (mu1.powi(two_k) - mu2.powi(two_k));
    }
    fock::p_even(mu) * p1 * p1 / sum
}

/// `sum_{k >= k_start} weight(k) mu^{2k} / q_{2k}` for the full coefficients.
/// Returns `+inf` if any `q_{2k}` with a nonzero numerator is not positive.
fn q_series(params: &DominanceParams, gamma: f64, k_start: u32, weight: impl Fn(u32) -> f64) -> f64 {
    let DominanceParams { p0, p1, mu, mu0, mu1, mu2 } = *params;
    let mut sum = 0.0;
    let mut small_run = 0;
    for k in k_start..(MAX_SERIES_TERMS as u32) {
        let q = q_full(2 * k, p0, p1, mu0, mu1, mu2, gamma);
        let num = weight(k) * if k == 0 { 1.0 } else { mu.powi(2 * k as i32) };
        if num == 0.0 {
            break;
        }
        if q <= 0.0 {
            return f64::INFINITY;
        }
        let term = num / q;
        sum += term;
        if term <= 1e-17 * sum {
            small_run += 1;
            if small_run >= 8 {
                break;
            }
        } else {
            small_run = 0;
        }
    }
    sum
}

/// Scalar norms `<phi_ee|phi_ee>` and `<phi_oo|phi_oo>` for the full
/// coefficients `q_n` with the given `Gamma`.
pub fn phi_norms(params: &DominanceParams, gamma: f64) -> (f64, f64) {
    let e2mu = (-2.0 * params.mu).exp();
    let ee = e2mu * q_series(params, gamma, 0, |k| k as f64 + 1.0);
    let oo = e2mu * q_series(params, gamma, 1, |k| k as f64);
    (ee, oo)
}

/// Per-sector eigenvalue check and scalar conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cutoff: u32,
    pub gamma: f64,
    pub lambda: f64,
    pub min_eig_even_even: f64,
    pub min_eig_odd_odd: f64,
    /// Upper bound on the `Lambda rho_even` mass beyond the cutoff.
    pub tail_bound: f64,
    pub phi_ee_norm: f64,
    pub phi_oo_norm: f64,
    /// `p_even / Lambda` (infinite when `Lambda = 0`).
    pub scalar_bound: f64,
    /// Every diagonal entry of the test mixture on the truncated basis is >= 0.
    pub diagonal_nonnegative: bool,
    pub eigen_pass: bool,
    pub scalar_pass: bool,
    pub pass: bool,
}

/// Absolute eigenvalue slack on top of the truncation tail.
pub const EIGEN_TOL: f64 = 1e-12;

/// Numerically verifies the dominance inequality on the even-total-photon
/// basis truncated at `cutoff`.
pub fn verify_dominance(
    params: &DominanceParams,
    coeffs: &DominanceCoefficients,
    cutoff: u32,
) -> Result<VerificationReport> {
    params.check_domain()?;
    let DominanceCoefficients { gamma, lambda, valid, .. } = *coeffs;
    let well_formed = gamma.is_finite() && lambda.is_finite() && gamma >= 0.0 && lambda >= 0.0;
    if !well_formed || (!valid && (gamma != 0.0 || lambda != 0.0)) {
        return Err(Error::InvalidCoefficients);
    }

    let st = fock::rho_even(params.mu, cutoff)?;
    let pe = fock::p_even(params.mu);
    let scale = if lambda == 0.0 { 0.0 } else { lambda / pe };

    let diag: Vec<f64> = st
        .basis
        .iter()
        .map(|&(j, m)| {
            params.p0 * params.p0 * pair_weight_unchecked(params.mu0, params.mu0, j, m)
                + params.p1 * params.p1 * pair_weight_unchecked(params.mu1, params.mu1, j, m)
                - gamma * pair_weight_unchecked(params.mu2, params.mu2, j, m)
        })
        .collect();
    let diagonal_nonnegative = diag.iter().all(|&d| d >= -EIGEN_TOL);

    let sector_min = |parity: u32| -> f64 {
        let idx: Vec<usize> = (0..st.basis.len()).filter(|&i| st.basis[i].0 % 2 == parity).collect();
        if idx.is_empty() {
            return 0.0;
        }
        let n = idx.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                m[(a, b)] = -scale * st.matrix[(ia, ib)];
            }
            m[(a, a)] += diag[ia];
        }
        let sym = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min()
    };
    let min_ee = sector_min(0);
    let min_oo = sector_min(1);

    let tail_bound = scale * fock::parity_tail_bound(2.0 * params.mu, cutoff, 0);
    let threshold = -(tail_bound + EIGEN_TOL);
    let eigen_pass = min_ee >= threshold && min_oo >= threshold && diagonal_nonnegative;

    let (phi_ee, phi_oo) = phi_norms(params, gamma);
    let scalar_bound = if lambda == 0.0 { f64::INFINITY } else { pe / lambda };
    let scalar_pass = lambda == 0.0 || (phi_ee < scalar_bound && phi_oo < scalar_bound);

    Ok(VerificationReport {
        cutoff,
        gamma,
        lambda,
        min_eig_even_even: min_ee,
        min_eig_odd_odd: min_oo,
        tail_bound,
        phi_ee_norm: phi_ee,
        phi_oo_norm: phi_oo,
        scalar_bound,
        diagonal_nonnegative,
        eigen_pass,
        scalar_pass,
        pass: eigen_pass && scalar_pass,
    })
}

/// Computes coefficients and verifies each parameter set concurrently.
pub fn verify_grid(
    grid: &[DominanceParams],
    cutoff: u32,
) -> Vec<Result<(DominanceCoefficients, VerificationReport)>> {
    grid.par_iter()
        .map(|p| {
            let c = lambda_coefficient(p, DEFAULT_SERIES_TOL)?;
            if !c.valid {
                return Err(Error::InvalidCoefficients);
            }
            let r = verify_dominance(p, &c, cutoff)?;
            Ok((c, r))
        })
        .collect()
}
