//! Finite-size statistics: binary entropy, Chernoff-type concentration
//! bounds, the phase-error upper bound `f` with its fluctuation term, and
//! security-parameter composition.

use serde::{Deserialize, Serialize};

use crate::dominance::DominanceCoefficients;
use crate::error::{ensure, Error, Result};
use crate::fock;

/// Failure probabilities and hash lengths of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    /// Failure probability of the phase-error bound `f`.
    pub epsilon: f64,
    /// Privacy-amplification slack: `2^{-zeta}` enters the secrecy parameter.
    pub zeta_bits: u32,
    /// Length of the error-verification hash.
    pub zeta_prime_bits: u32,
    /// Total failure probability of the decoy-state estimation.
    pub epsilon_err: f64,
}

impl Default for EpsilonBudget {
    fn default() -> Self {
        Self { epsilon: 2f64.powi(-69), zeta_bits: 69, zeta_prime_bits: 32, epsilon_err: 2.60e-20 }
    }
}

impl EpsilonBudget {
    pub fn validate(&self) -> Result<()> {
        ensure(self.epsilon > 0.0 && self.epsilon < 1.0, || format!("epsilon = {} must be in (0, 1)", self.epsilon))?;
        ensure(self.epsilon_err > 0.0 && self.epsilon_err < 1.0, || {
            format!("epsilon_err = {} must be in (0, 1)", self.epsilon_err)
        })?;
        ensure(self.zeta_bits >= 1 && self.zeta_prime_bits >= 1, || "hash lengths must be >= 1 bit".into())?;
        let sec = compose_security(self);
        ensure(sec.is_finite() && sec < 1.0, || format!("composed epsilon_sec = {sec} must be < 1"))
    }
}

/// `eps_sec = sqrt(2) sqrt(eps + eps_err + 2^{-zeta}) + 2^{-zeta'}`.
pub fn compose_security(budget: &EpsilonBudget) -> f64 {
    let inner = budget.epsilon + budget.epsilon_err + 2f64.powi(-(budget.zeta_bits as i32));
    std::f64::consts::SQRT_2 * inner.sqrt() + 2f64.powi(-(budget.zeta_prime_bits as i32))
}

/// Binary entropy in bits, saturated at 1 above one half.
pub fn binary_entropy(x: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&x), || format!("entropy argument {x} outside [0, 1]"))?;
    Ok(binary_entropy_unchecked(x))
}

pub(crate) fn binary_entropy_unchecked(x: f64) -> f64 {
    if x > 0.5 {
        1.0
    } else if x <= 0.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

fn check_failure_prob(eps: f64) -> Result<f64> {
    ensure(eps > 0.0 && eps < 1.0, || format!("failure probability {eps} must be in (0, 1)"))?;
    Ok((1.0 / eps).ln())
}

/// Upper deviation bound for a count with expectation `x`:
/// `x + sqrt(2 x ln(1/eps)) + ln(1/eps)`.
pub fn chernoff_upper(x: f64, eps: f64) -> Result<f64> {
    ensure(x >= 0.0 && x.is_finite(), || format!("count {x} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    Ok(x + (2.0 * x * l).sqrt() + l)
}

/// Lower deviation bound `max(0, x - sqrt(2 x ln(1/eps)))`.
pub fn chernoff_lower(x: f64, eps: f64) -> Result<f64> {
    ensure(x >= 0.0 && x.is_finite(), || format!("count {x} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    Ok((x - (2.0 * x * l).sqrt()).max(0.0))
}

/// Interval for an unknown expectation given an observed count, obtained by
/// inverting [`chernoff_upper`] and [`chernoff_lower`]; each side fails with
/// probability at most `eps`.
pub fn expectation_interval(observed: f64, eps: f64) -> Result<(f64, f64)> {
    ensure(observed >= 0.0 && observed.is_finite(), || format!("count {observed} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    // E + sqrt(2 E l) + l = observed
    let lo = if observed > l {
        let r = ((4.0 * observed - 2.0 * l).sqrt() - (2.0 * l).sqrt()) / 2.0;
        r * r
    } else {
        0.0
    };
    // E - sqrt(2 E l) = observed
    let r = ((2.0 * l).sqrt() + (2.0 * l + 4.0 * observed).sqrt()) / 2.0;
    Ok((lo.min(observed), r * r))
}

/// Poisson rate function `lambda - x + x ln(x / lambda)`.
fn poisson_rate(x: f64, lambda: f64) -> f64 {
    if x == 0.0 {
        lambda
    } else {
        lambda - x + x * (x / lambda).ln()
    }
}

/// Tight Chernoff upper bound: the `lambda >= x` solving
/// `lambda - x + x ln(x/lambda) = ln(1/eps)`.
pub fn chernoff_upper_exact(x: f64, eps: f64) -> Result<f64> {
    ensure(x >= 0.0 && x.is_finite(), || format!("count {x} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    let (mut lo, mut hi) = (x, chernoff_upper(x, eps)? + l + 1.0);
    while poisson_rate(x, hi) < l {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poisson_rate(x, mid) < l {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Tight Chernoff lower bound: the `lambda <= x` solving the same equation
/// (the rate diverges as `lambda -> 0`, so a root exists for every `x > 0`).
pub fn chernoff_lower_exact(x: f64, eps: f64) -> Result<f64> {
    ensure(x >= 0.0 && x.is_finite(), || format!("count {x} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, x);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poisson_rate(x, mid) >= l {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Tight upper bound on a count whose expectation is `mean`: the `x >= mean`
/// with `x ln(x/mean) - x + mean = ln(1/eps)`.
pub fn realization_upper_exact(mean: f64, eps: f64) -> Result<f64> {
    ensure(mean >= 0.0 && mean.is_finite(), || format!("mean {mean} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (mean, chernoff_upper(mean, eps)?);
    while poisson_rate(hi, mean) < l {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poisson_rate(mid, mean) < l {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Tight lower bound on a count whose expectation is `mean`; zero once the
/// probability of observing nothing exceeds `eps`.
pub fn realization_lower_exact(mean: f64, eps: f64) -> Result<f64> {
    ensure(mean >= 0.0 && mean.is_finite(), || format!("mean {mean} must be >= 0"))?;
    let l = check_failure_prob(eps)?;
    if poisson_rate(0.0, mean) <= l {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, mean);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poisson_rate(mid, mean) >= l {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Which form of the phase-error bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FormulaMode {
    /// Ratios follow the per-round label weights: code rounds carry
    /// `p_c^2 p_even` of `rho_even` against `Lambda` inside the test mixture,
    /// and `2_even` rounds carry `p2^2` of `tau_even(mu2)` against `Gamma`.
    #[default]
    SamplingConsistent,
    /// Literal transcription: `p0^2` prefactor and `p2^2 p_even(mu2)` ratios.
    AsPrinted,
}

/// Everything `f` and `nu` need besides the two counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationParams {
    pub gamma: f64,
    pub lambda: f64,
    /// Code-mode intensity.
    pub mu: f64,
    pub mu2: f64,
    pub p_c: f64,
    pub p0: f64,
    pub p2: f64,
    pub mode: FormulaMode,
}

impl FluctuationParams {
    pub fn new(
        coeffs: &DominanceCoefficients,
        mu: f64,
        mu2: f64,
        p_c: f64,
        p0: f64,
        p2: f64,
        mode: FormulaMode,
    ) -> Result<Self> {
        if !coeffs.valid || coeffs.lambda <= 0.0 {
            return Err(Error::InvalidCoefficients);
        }
        for (name, v) in [("p_c", p_c), ("p0", p0), ("p2", p2)] {
            ensure(v > 0.0 && v <= 1.0, || format!("{name} = {v} must be in (0, 1]"))?;
        }
        Ok(Self { gamma: coeffs.gamma, lambda: coeffs.lambda, mu, mu2, p_c, p0, p2, mode })
    }

    /// Multiplier `s` in `gamma_sum - s * gamma_2`.
    pub fn gamma_ratio(&self) -> f64 {
        match self.mode {
            FormulaMode::SamplingConsistent => self.gamma / (self.p2 * self.p2),
            FormulaMode::AsPrinted => self.gamma / (self.p2 * self.p2 * fock::p_even(self.mu2)),
        }
    }

    /// Prefactor `r` converting test-mixture counts of `rho_even` into code rounds.
    pub fn prefactor(&self) -> f64 {
        let p = match self.mode {
            FormulaMode::SamplingConsistent => self.p_c,
            FormulaMode::AsPrinted => self.p0,
        };
        p * p * fock::p_even(self.mu) / self.lambda
    }

    /// `Lambda / weight` inside the second fluctuation term.
    fn lambda_ratio(&self) -> f64 {
        match self.mode {
            FormulaMode::SamplingConsistent => self.lambda / (self.p_c * self.p_c * fock::p_even(self.mu)),
            FormulaMode::AsPrinted => self.lambda / (self.p0 * self.p0 * fock::p_even(self.mu2)),
        }
    }
}

/// Result of [`nu_checked`]: the value and whether the subtracted count had
/// to be clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nu {
    pub value: f64,
    pub clamped: bool,
}

/// Fluctuation term `nu(gamma_sum_even, gamma_2_even)`.
pub fn nu(gamma_sum_even: f64, gamma_2_even: f64, params: &FluctuationParams) -> Result<f64> {
    Ok(nu_checked(gamma_sum_even, gamma_2_even, params)?.value)
}

pub fn nu_checked(gamma_sum_even: f64, gamma_2_even: f64, params: &FluctuationParams) -> Result<Nu> {
    ensure(gamma_sum_even >= 0.0 && gamma_2_even >= 0.0, || "counts must be >= 0".into())?;
    let s = params.gamma_ratio();
    let first = (2.0 * s * (1.0 + s)).sqrt() * gamma_2_even.sqrt();
    let residual = gamma_sum_even - s * gamma_2_even;
    let clamped = residual < 0.0;
    let second = (2.0 * (1.0 + params.lambda_ratio())).sqrt() * residual.max(0.0).sqrt();
    Ok(Nu { value: first + second, clamped })
}

/// Upper bound `f` on the number of detected code rounds attributable to
/// `rho_even`, failing with probability at most `eps`. Clamped at zero.
pub fn f_upper(gamma_sum_even: f64, gamma_2_even: f64, params: &FluctuationParams, eps: f64) -> Result<f64> {
    ensure(eps > 0.0 && eps < 1.0, || format!("epsilon {eps} must be in (0, 1)"))?;
    let v = nu(gamma_sum_even, gamma_2_even, params)?;
    let dev = v * (-(eps / 2.0).ln()).sqrt();
    let inner = gamma_sum_even - params.gamma_ratio() * gamma_2_even + dev;
    Ok((params.prefactor() * inner).max(0.0))
}

/// `f` with every fluctuation term dropped.
pub fn f_asymptotic(gamma_sum_even: f64, gamma_2_even: f64, params: &FluctuationParams) -> f64 {
    (params.prefactor() * (gamma_sum_even - params.gamma_ratio() * gamma_2_even)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dominance::{lambda_coefficient, DominanceParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution};

    fn fparams(mode: FormulaMode) -> FluctuationParams {
        let dp = DominanceParams { p0: 0.2, p1: 0.2, mu: 0.03, mu0: 5e-4, mu1: 0.1, mu2: 0.06 };
        let c = lambda_coefficient(&dp, 1e-14).unwrap();
        FluctuationParams::new(&c, dp.mu, dp.mu2, 0.8, dp.p0, 0.2, mode).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_relative_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.75).unwrap(), 1.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 1.0);
        assert_relative_eq!(binary_entropy(0.03).unwrap(), 0.194_391_857_8, epsilon = 1e-10);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn entropy_symmetric_below_half() {
        for i in 1..50 {
            let x = i as f64 / 100.0;
            let a = binary_entropy(x).unwrap();
            let b = -(1.0 - x) * (1.0 - x).log2() - x * x.log2();
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn chernoff_zero_count() {
        let eps = 1e-3;
        assert_relative_eq!(chernoff_upper(0.0, eps).unwrap(), (1.0f64 / eps).ln());
        assert_eq!(chernoff_lower(0.0, eps).unwrap(), 0.0);
    }

    #[test]
    fn chernoff_reference_value() {
        let u = chernoff_upper(1e6, 1e-20).unwrap();
        let l: f64 = 46.051_701_859_880_914;
        assert_relative_eq!(u, 1e6 + (2e6 * l).sqrt() + l, max_relative = 1e-14);
        assert_relative_eq!(u, 1.0096e6, max_relative = 1e-4);
    }

    #[test]
    fn chernoff_rejects_bad_input() {
        assert!(chernoff_upper(-1.0, 0.1).is_err());
        assert!(chernoff_upper(1.0, 0.0).is_err());
        assert!(chernoff_lower(1.0, 1.0).is_err());
    }

    #[test]
    fn chernoff_binomial_coverage() {
        let eps = 1e-2;
        let n = 1_000_000u64;
        let p = 1e-2; // mean 1e4
        let mean = n as f64 * p;
        let up = chernoff_upper(mean, eps).unwrap();
        let lo = chernoff_lower(mean, eps).unwrap();
        let dist = Binomial::new(n, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000;
        let (mut over, mut under) = (0, 0);
        for _ in 0..trials {
            let x = dist.sample(&mut rng) as f64;
            over += (x > up) as u32;
            under += (x < lo) as u32;
        }
        assert!((over as f64) / (trials as f64) <= eps);
        assert!((under as f64) / (trials as f64) <= eps);
    }

    #[test]
    fn expectation_interval_inverts_bounds() {
        for &obs in &[0.0, 3.0, 50.0, 1e4, 1e9] {
            let eps = 1e-10;
            let (lo, hi) = expectation_interval(obs, eps).unwrap();
            assert!(lo <= obs && obs <= hi);
            if lo > 0.0 {
                assert_relative_eq!(chernoff_upper(lo, eps).unwrap(), obs, max_relative = 1e-9);
            }
            assert_relative_eq!(chernoff_lower(hi, eps).unwrap(), obs, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_bounds_are_tighter() {
        for &x in &[0.0, 1.0, 30.0, 1e3, 1e6] {
            for &eps in &[1e-2, 1e-10, 1e-20] {
                let ue = chernoff_upper_exact(x, eps).unwrap();
                let le = chernoff_lower_exact(x, eps).unwrap();
                assert!(ue <= chernoff_upper(x, eps).unwrap() * (1.0 + 1e-12), "x={x} eps={eps}");
                assert!(le >= chernoff_lower(x, eps).unwrap() * (1.0 - 1e-12) - 1e-12, "x={x} eps={eps}");
                assert!(le <= x && x <= ue);
            }
        }
    }

    #[test]
    fn security_composition() {
        let b = EpsilonBudget::default();
        let sec = compose_security(&b);
        assert!((sec / 4.6084e-10 - 1.0).abs() < 0.1, "{sec}");
        let limit = EpsilonBudget { epsilon: 1e-300, epsilon_err: 1e-300, zeta_bits: 1000, zeta_prime_bits: 32 };
        assert_relative_eq!(compose_security(&limit), 2f64.powi(-32), max_relative = 1e-9);
        let doubled = EpsilonBudget { epsilon_err: 2.0 * b.epsilon_err, ..b };
        assert!(compose_security(&doubled) > sec);
        assert!(b.validate().is_ok());
    }

    #[test]
    fn nu_values() {
        let p = fparams(FormulaMode::AsPrinted);
        assert_eq!(nu(0.0, 0.0, &p).unwrap(), 0.0);
        let expected = (2.0 * (1.0 + p.lambda / (p.p0 * p.p0 * fock::p_even(p.mu2)))).sqrt() * 100.0;
        assert_relative_eq!(nu(1e4, 0.0, &p).unwrap(), expected, max_relative = 1e-14);
        for mode in [FormulaMode::AsPrinted, FormulaMode::SamplingConsistent] {
            let p = fparams(mode);
            let base = nu(5e5, 1e5, &p).unwrap();
            assert_relative_eq!(nu(4.0 * 5e5, 4.0 * 1e5, &p).unwrap(), 2.0 * base, max_relative = 1e-12);
        }
    }

    #[test]
    fn nu_flags_clamp() {
        let p = fparams(FormulaMode::SamplingConsistent);
        assert!(nu_checked(10.0, 1e6, &p).unwrap().clamped);
        assert!(!nu_checked(1e7, 1e3, &p).unwrap().clamped);
    }

    #[test]
    fn f_zero_counts() {
        let p = fparams(FormulaMode::SamplingConsistent);
        assert_eq!(f_upper(0.0, 0.0, &p, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn invalid_coefficients_rejected() {
        let c = DominanceCoefficients::trivial();
        assert!(FluctuationParams::new(&c, 0.03, 0.05, 0.8, 0.2, 0.2, FormulaMode::default()).is_err());
    }
}
