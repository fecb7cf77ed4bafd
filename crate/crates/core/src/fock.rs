//! Photon-number (Fock) basis representations of the two-mode states that
//! enter the dominance condition.
//!
//! Two kinds of objects live here:
//!
//! * [`FockDiagonal`]: a truncated diagonal operator over photon-number pairs
//!   `(j, m)`, such as the phase-randomized coherent state pair
//!   `tau(mu) = sum P_mu(j) P_mu(m) |j,m><j,m|` and its restrictions to even or
//!   odd total photon number.
//! * [`EvenSectorState`]: the dense rank-2 operator `p_even * rho_even`
//!   obtained by projecting `|sqrt(mu), sqrt(mu)>` onto the both-even and
//!   both-odd subspaces.
//!
//! Every weight is evaluated in log space so that photon numbers far beyond
//! the `f64` factorial range stay finite.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Result};

/// Default total-photon cutoff. At `mu <= 1` the discarded Poisson tail is far
/// below any failure probability used in the security budget.
pub const DEFAULT_CUTOFF: u32 = 40;

const LN_FACT_TABLE: usize = 1024;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACT_TABLE);
        let mut acc = 0.0_f64;
        t.push(0.0);
        for k in 1..LN_FACT_TABLE {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `ln(n!)`. Tabulated below 1024, Stirling series above.
pub fn ln_factorial(n: u32) -> f64 {
    let n = n as usize;
    if n < LN_FACT_TABLE {
        return ln_factorial_table()[n];
    }
    let x = n as f64 + 1.0;
    // ln Gamma(x) via Stirling with three correction terms
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}

/// `ln(mu^n)` with the convention `0^0 = 1`; `None` encodes `ln 0`.
fn ln_pow(mu: f64, n: u32) -> Option<f64> {
    if n == 0 {
        Some(0.0)
    } else if mu == 0.0 {
        None
    } else {
        Some(n as f64 * mu.ln())
    }
}

/// Poisson probability `e^{-mu} mu^n / n!`.
pub fn poisson(mu: f64, n: u32) -> f64 {
    match ln_pow(mu, n) {
        Some(lp) => (lp - mu - ln_factorial(n)).exp(),
        None => 0.0,
    }
}

/// Joint photon-number probability of two independent phase-randomized
/// coherent states: `e^{-(mu_a+mu_b)} mu_a^j mu_b^m / (j! m!)`.
pub fn coherent_pair_weight(mu_a: f64, mu_b: f64, j: u32, m: u32) -> Result<f64> {
    ensure(mu_a >= 0.0 && mu_a.is_finite(), || format!("intensity mu_a = {mu_a} must be >= 0"))?;
    ensure(mu_b >= 0.0 && mu_b.is_finite(), || format!("intensity mu_b = {mu_b} must be >= 0"))?;
    Ok(pair_weight_unchecked(mu_a, mu_b, j, m))
}

pub(crate) fn pair_weight_unchecked(mu_a: f64, mu_b: f64, j: u32, m: u32) -> f64 {
    match (ln_pow(mu_a, j), ln_pow(mu_b, m)) {
        (Some(a), Some(b)) => (a + b - mu_a - mu_b - ln_factorial(j) - ln_factorial(m)).exp(),
        _ => 0.0,
    }
}

/// `p_even(mu) = e^{-2mu} cosh(2mu)`, the probability that a coherent pair of
/// intensity `mu` per arm carries an even total photon number.
pub fn p_even(mu: f64) -> f64 {
    // (1 + e^{-4mu}) / 2 avoids overflow in cosh for large mu
    0.5 * (1.0 + (-4.0 * mu).exp())
}

/// `p_odd(mu) = e^{-2mu} sinh(2mu)`.
pub fn p_odd(mu: f64) -> f64 {
    0.5 * (1.0 - (-4.0 * mu).exp())
}

/// `c_+ = e^{-mu} cosh(mu)`.
pub fn c_plus(mu: f64) -> f64 {
    0.5 * (1.0 + (-2.0 * mu).exp())
}

/// `c_- = e^{-mu} sinh(mu)`.
pub fn c_minus(mu: f64) -> f64 {
    0.5 * (1.0 - (-2.0 * mu).exp())
}

/// Upper bound on `sum_{n > cutoff, n = parity mod 2} Poisson(lambda, n)`.
///
/// Consecutive same-parity terms shrink by `lambda^2 / ((n+1)(n+2))`, so the
/// first omitted term over `1 - ratio` bounds the remainder once the ratio is
/// below one. Otherwise the trivial bound 1 is returned.
pub fn parity_tail_bound(lambda: f64, cutoff: u32, parity: u32) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut first = cutoff + 1;
    if first % 2 != parity % 2 {
        first += 1;
    }
    let ratio = lambda * lambda / ((first as f64 + 1.0) * (first as f64 + 2.0));
    if ratio >= 1.0 {
        return 1.0;
    }
    (poisson(lambda, first) / (1.0 - ratio)).min(1.0)
}

/// Diagonal operator over photon-number pairs, truncated at a total photon
/// number, with an upper bound on the discarded mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDiagonal {
    entries: BTreeMap<(u32, u32), f64>,
    cutoff: u32,
    tail_mass: f64,
}

impl FockDiagonal {
    pub fn new(cutoff: u32) -> Self {
        Self { entries: BTreeMap::new(), cutoff, tail_mass: 0.0 }
    }

    /// Inserts a weight. Pairs beyond the cutoff are dropped and their mass is
    /// added to the tail.
    pub fn insert(&mut self, j: u32, m: u32, weight: f64) -> Result<()> {
        ensure(weight >= 0.0 && weight.is_finite(), || format!("weight {weight} must be >= 0"))?;
        if j + m > self.cutoff {
            self.tail_mass += weight;
        } else {
            self.entries.insert((j, m), weight);
        }
        Ok(())
    }

    pub fn get(&self, j: u32, m: u32) -> f64 {
        self.entries.get(&(j, m)).copied().unwrap_or(0.0)
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of retained weights.
    pub fn retained_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Entries in lexicographic `(j, m)` order.
    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// `sum_{j,m} w(j,m) * f(j,m)`, e.g. the yield of the operator under a
    /// photon-number-diagonal detection model.
    pub fn expectation(&self, mut f: impl FnMut(u32, u32) -> f64) -> f64 {
        self.entries.iter().map(|(&(j, m), &w)| w * f(j, m)).sum()
    }
}

/// Phase-randomized coherent pair `tau(mu)` split into its even- and
/// odd-total-photon parts, plus `p_even(mu)`.
pub fn split_even_odd(mu: f64, cutoff: u32) -> Result<(FockDiagonal, FockDiagonal, f64)> {
    ensure(mu >= 0.0 && mu.is_finite(), || format!("intensity mu = {mu} must be >= 0"))?;
    let mut even = FockDiagonal::new(cutoff);
    let mut odd = FockDiagonal::new(cutoff);
    for n in 0..=cutoff {
        for j in 0..=n {
            let w = pair_weight_unchecked(mu, mu, j, n - j);
            if w == 0.0 {
                continue;
            }
            if n % 2 == 0 {
                even.entries.insert((j, n - j), w);
            } else {
                odd.entries.insert((j, n - j), w);
            }
        }
    }
    // total photon number of tau(mu) is Poisson(2 mu)
    even.tail_mass = parity_tail_bound(2.0 * mu, cutoff, 0);
    odd.tail_mass = parity_tail_bound(2.0 * mu, cutoff, 1);
    Ok((even, odd, p_even(mu)))
}

/// `p_even * rho_even` on the truncated even-total-photon basis.
#[derive(Debug, Clone)]
pub struct EvenSectorState {
    pub mu: f64,
    /// Basis pairs `(j, m)` with `j + m` even, lexicographic.
    pub basis: Vec<(u32, u32)>,
    pub matrix: DMatrix<f64>,
    pub p_even: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    /// Upper bound on the trace discarded by truncation.
    pub tail_mass: f64,
    /// Set when the retained trace is below `(1 - 1e-12) p_even`.
    pub truncation_warning: bool,
}

impl EvenSectorState {
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

/// Lexicographic list of pairs with `j + m <= cutoff` and `j + m` even.
pub fn even_total_basis(cutoff: u32) -> Vec<(u32, u32)> {
    let mut basis = Vec::new();
    for j in 0..=cutoff {
        for m in 0..=(cutoff - j) {
            if (j + m) % 2 == 0 {
                basis.push((j, m));
            }
        }
    }
    basis
}

/// Amplitude of `|sqrt(mu), sqrt(mu)>` on `|j, m>`.
pub fn coherent_pair_amplitude(mu: f64, j: u32, m: u32) -> f64 {
    match ln_pow(mu, j + m) {
        Some(lp) => (0.5 * lp - mu - 0.5 * (ln_factorial(j) + ln_factorial(m))).exp(),
        None => 0.0,
    }
}

/// Builds `p_even rho_even = Pi_ee |psi><psi| Pi_ee + Pi_oo |psi><psi| Pi_oo`
/// with `|psi> = |sqrt(mu), sqrt(mu)>`.
pub fn rho_even(mu: f64, cutoff: u32) -> Result<EvenSectorState> {
    ensure(mu >= 0.0 && mu.is_finite(), || format!("intensity mu = {mu} must be >= 0"))?;
    ensure(cutoff >= 2 && cutoff.is_multiple_of(2), || format!("cutoff {cutoff} must be even and >= 2"))?;

    let basis = even_total_basis(cutoff);
    let dim = basis.len();
    let mut ee = DVector::zeros(dim);
    let mut oo = DVector::zeros(dim);
    for (idx, &(j, m)) in basis.iter().enumerate() {
        let amp = coherent_pair_amplitude(mu, j, m);
        if j % 2 == 0 {
            ee[idx] = amp;
        } else {
            oo[idx] = amp;
        }
    }
    let matrix = &ee * ee.transpose() + &oo * oo.transpose();
    let pe = p_even(mu);
    let tail_mass = parity_tail_bound(2.0 * mu, cutoff, 0);
    let truncation_warning = matrix.trace() < (1.0 - 1e-12) * pe;
    Ok(EvenSectorState {
        mu,
        basis,
        matrix,
        p_even: pe,
        c_plus: c_plus(mu),
        c_minus: c_minus(mu),
        tail_mass,
        truncation_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vacuum_weight_is_one() {
        assert_eq!(coherent_pair_weight(0.0, 0.0, 0, 0).unwrap(), 1.0);
        assert_eq!(coherent_pair_weight(0.0, 0.3, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn pair_weight_small_counts_match_naive_formula() {
        assert_relative_eq!(coherent_pair_weight(0.1, 0.1, 0, 0).unwrap(), 0.818_730_753_077_981_8, epsilon = 1e-15);
        for (a, b, j, m) in [(0.3, 0.7, 2u32, 3u32), (1.2, 0.05, 5, 1), (2.0, 2.0, 6, 6)] {
            let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
            let naive = f64::exp(-(a + b)) * f64::powi(a, j as i32) * f64::powi(b, m as i32)
                / (fact(j) * fact(m));
            assert_relative_eq!(coherent_pair_weight(a, b, j, m).unwrap(), naive, max_relative = 1e-12);
        }
    }

    #[test]
    fn pair_weight_large_counts_stay_finite() {
        let w = coherent_pair_weight(0.5, 0.5, 50, 50).unwrap();
        assert!(w.is_finite() && w > 0.0);
        let w = coherent_pair_weight(0.5, 0.5, 200, 180).unwrap();
        assert!(w.is_finite() && w >= 0.0);
    }

    #[test]
    fn negative_intensity_is_rejected() {
        assert!(coherent_pair_weight(-0.1, 0.1, 0, 0).is_err());
        assert!(split_even_odd(-1.0, 10).is_err());
    }

    #[test]
    fn vacuum_split() {
        let (even, odd, pe) = split_even_odd(0.0, 10).unwrap();
        assert_eq!(even.len(), 1);
        assert_eq!(even.get(0, 0), 1.0);
        assert!(odd.is_empty());
        assert_eq!(pe, 1.0);
    }

    #[test]
    fn p_even_reference_value() {
        // e^{-0.2} cosh(0.2)
        assert_relative_eq!(p_even(0.1), (-0.2f64).exp() * 0.2f64.cosh(), epsilon = 1e-15);
        assert_relative_eq!(p_even(0.1), 0.835_160, epsilon = 1e-6);
    }

    #[test]
    fn rho_even_vacuum_is_rank_one() {
        let st = rho_even(0.0, 4).unwrap();
        assert_eq!(st.matrix[(0, 0)], 1.0);
        assert_relative_eq!(st.trace(), 1.0);
        assert!(!st.truncation_warning);
    }

    #[test]
    fn rho_even_trace_matches_p_even() {
        let st = rho_even(0.2, 40).unwrap();
        assert!((st.trace() - (-0.4f64).exp() * 0.4f64.cosh()).abs() < 1e-10);
        assert_relative_eq!(st.c_plus * st.c_plus + st.c_minus * st.c_minus, st.p_even, epsilon = 1e-15);
    }

    #[test]
    fn rho_even_rejects_bad_cutoff() {
        assert!(rho_even(0.1, 3).is_err());
        assert!(rho_even(0.1, 0).is_err());
    }

    #[test]
    fn small_cutoff_sets_warning() {
        let st = rho_even(1.0, 2).unwrap();
        assert!(st.truncation_warning);
    }

    #[test]
    fn rho_even_rank_at_most_two() {
        let st = rho_even(0.4, 12).unwrap();
        let sv = st.matrix.clone().singular_values();
        let big = sv.iter().filter(|&&s| s > 1e-12 * sv.max()).count();
        assert!(big <= 2, "rank {big}");
    }

    #[test]
    fn tail_bound_covers_true_tail() {
        for &lambda in &[0.02, 0.2, 1.0, 2.0] {
            for cutoff in [2u32, 5, 10, 20] {
                for parity in [0u32, 1] {
                    let exact: f64 = ((cutoff + 1)..400)
                        .filter(|n| n % 2 == parity)
                        .map(|n| poisson(lambda, n))
                        .sum();
                    assert!(parity_tail_bound(lambda, cutoff, parity) >= exact * (1.0 - 1e-12));
                }
            }
        }
    }
}
