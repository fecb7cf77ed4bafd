//! Finite-key length and asymptotic key rate.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, ObservedCounts};
use crate::decoy::{self, DecoyOptions};
use crate::dominance::{self, DominanceCoefficients, DominanceParams, DEFAULT_SERIES_TOL};
use crate::error::{ensure, Error, Result};
use crate::stats::{self, EpsilonBudget, FluctuationParams, FormulaMode};

/// Default weakest decoy intensity.
pub const DEFAULT_MU0: f64 = 5e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Code-mode intensity per party.
    pub mu: f64,
    /// Test intensities `mu0..mu3`.
    pub mu_test: [f64; 4],
    pub p_c: f64,
    /// Test label probabilities `p0..p3`.
    pub p_test: [f64; 4],
    pub n_tot: u64,
    #[serde(default)]
    pub budget: EpsilonBudget,
    #[serde(default)]
    pub formula_mode: FormulaMode,
    #[serde(default)]
    pub decoy: DecoyOptions,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            mu: 0.02,
            mu_test: [DEFAULT_MU0, 0.16, 0.012, 0.6],
            p_c: 0.865,
            p_test: [0.1, 0.007, 0.022, 0.001],
            n_tot: 1_000_000_000_000,
            budget: EpsilonBudget::default(),
            formula_mode: FormulaMode::default(),
            decoy: DecoyOptions::default(),
        }
    }
}

impl ProtocolParams {
    pub(crate) fn check_probabilities(&self) -> Result<()> {
        for (i, &p) in std::iter::once(&self.p_c).chain(self.p_test.iter()).enumerate() {
            ensure((0.0..=1.0).contains(&p), || format!("probability #{i} = {p} outside [0, 1]"))?;
        }
        let total = self.p_c + self.p_test.iter().sum::<f64>();
        if total > 1.0 + 1e-12 {
            return Err(Error::Input(format!("label probabilities sum to {total} > 1")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.mu.is_finite() && self.mu > 0.0, || format!("mu = {} must be > 0", self.mu))?;
        for (i, &m) in self.mu_test.iter().enumerate() {
            ensure(m.is_finite() && m > 0.0, || format!("mu{i} = {m} must be > 0"))?;
        }
        if self.mu_test[1] <= self.mu_test[2] {
            return Err(Error::Ordering { mu1: self.mu_test[1], mu2: self.mu_test[2] });
        }
        self.check_probabilities()?;
        ensure(self.p_c > 0.0, || "p_c must be > 0".into())?;
        ensure((1..=20).contains(&self.decoy.max_photon_total), || {
            format!("max_photon_total = {} must be in 1..=20", self.decoy.max_photon_total)
        })?;
        self.budget.validate()
    }

    pub fn dominance_params(&self) -> DominanceParams {
        DominanceParams {
            p0: self.p_test[0],
            p1: self.p_test[1],
            mu: self.mu,
            mu0: self.mu_test[0],
            mu1: self.mu_test[1],
            mu2: self.mu_test[2],
        }
    }

    /// Dominance coefficients; invalid ones are an error here.
    pub fn dominance_coefficients(&self) -> Result<DominanceCoefficients> {
        let c = dominance::lambda_coefficient(&self.dominance_params(), DEFAULT_SERIES_TOL)?;
        if !c.valid {
            return Err(Error::InvalidCoefficients);
        }
        Ok(c)
    }

    pub fn fluctuation_params(&self, coeffs: &DominanceCoefficients) -> Result<FluctuationParams> {
        FluctuationParams::new(
            coeffs,
            self.mu,
            self.mu_test[2],
            self.p_c,
            self.p_test[0],
            self.p_test[2],
            self.formula_mode,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyRateDiagnostics {
    pub gamma_c: f64,
    pub bit_error_rate: f64,
    pub gamma_sum_even_upper: f64,
    pub gamma_2_even_lower: f64,
    pub f_value: f64,
    /// Key length before clamping at zero; per round in the asymptotic case.
    pub raw_key_length: f64,
    pub eps_sec: f64,
    pub epsilon_err_spent: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub nu_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateResult {
    /// Secret key bits; per round when `asymptotic` is set.
    pub key_length_g: f64,
    pub rate_per_pulse: f64,
    pub phase_error_bound: f64,
    pub h_ec_bits: f64,
    pub asymptotic: bool,
    pub diagnostics: KeyRateDiagnostics,
}

impl KeyRateResult {
    fn zero(eps_sec: f64, asymptotic: bool) -> Self {
        Self {
            key_length_g: 0.0,
            rate_per_pulse: 0.0,
            phase_error_bound: 0.0,
            h_ec_bits: 0.0,
            asymptotic,
            diagnostics: KeyRateDiagnostics { eps_sec, ..Default::default() },
        }
    }
}

/// Error-correction leakage `f_ec * gamma_c * h(e)`.
pub fn h_ec(gamma_c: f64, bit_error_rate: f64, f_ec: f64) -> Result<f64> {
    ensure(gamma_c >= 0.0 && gamma_c.is_finite(), || format!("gamma_c = {gamma_c} must be >= 0"))?;
    ensure(f_ec > 0.0 && f_ec.is_finite(), || format!("f_ec = {f_ec} must be > 0"))?;
    Ok(f_ec * gamma_c * stats::binary_entropy(bit_error_rate)?)
}

/// Finite-key length from announced counts.
pub fn key_length(observed: &ObservedCounts, params: &ProtocolParams, channel: &ChannelParams) -> Result<KeyRateResult> {
    params.validate()?;
    channel.validate()?;
    observed.validate()?;
    let coeffs = params.dominance_coefficients()?;
    let eps_sec = stats::compose_security(&params.budget);
    if observed.gamma_c == 0 || observed.n_tot == 0 {
        return Ok(KeyRateResult::zero(eps_sec, false));
    }
    let fp = params.fluctuation_params(&coeffs)?;
    let est = decoy::estimate(observed, params)?;
    let nu = stats::nu_checked(est.gamma_sum_even_upper, est.gamma_2_even_lower, &fp)?;
    let f = stats::f_upper(est.gamma_sum_even_upper, est.gamma_2_even_lower, &fp, params.budget.epsilon)?;
    let gc = observed.gamma_c as f64;
    let phase = (f / gc).min(1.0);
    let ber = observed.bit_error_rate();
    let leak = h_ec(gc, ber, channel.error_correction_efficiency)?;
    let raw = gc
        - gc * stats::binary_entropy(phase)?
        - leak
        - params.budget.zeta_bits as f64
        - params.budget.zeta_prime_bits as f64;
    let g = raw.max(0.0);
    Ok(KeyRateResult {
        key_length_g: g,
        rate_per_pulse: g / observed.n_tot as f64,
        phase_error_bound: phase,
        h_ec_bits: leak,
        asymptotic: false,
        diagnostics: KeyRateDiagnostics {
            gamma_c: gc,
            bit_error_rate: ber,
            gamma_sum_even_upper: est.gamma_sum_even_upper,
            gamma_2_even_lower: est.gamma_2_even_lower,
            f_value: f,
            raw_key_length: raw,
            eps_sec,
            epsilon_err_spent: est.epsilon_err_spent,
            gamma: coeffs.gamma,
            lambda: coeffs.lambda,
            nu_clamped: nu.clamped,
        },
    })
}

/// Key rate per round in the limit of infinitely many rounds: expected
/// gains, exact decoy constraints, no fluctuation or hash overheads.
pub fn asymptotic_rate(params: &ProtocolParams, channel: &ChannelParams) -> Result<KeyRateResult> {
    params.validate()?;
    channel.validate()?;
    let coeffs = params.dominance_coefficients()?;
    let eps_sec = stats::compose_security(&params.budget);
    let rates = channel::expected_rates(params, channel)?;
    let qc = rates.code_rate;
    if qc <= 0.0 {
        return Ok(KeyRateResult::zero(eps_sec, true));
    }
    let fp = params.fluctuation_params(&coeffs)?;
    let est = decoy::estimate_rates(&rates.test_gain, params)?;
    let f = stats::f_asymptotic(est.sum_even_rate_upper, est.two_even_rate_lower, &fp);
    let phase = (f / qc).min(1.0);
    let ber = rates.code.bit_error_rate;
    let leak = h_ec(qc, ber, channel.error_correction_efficiency)?;
    let raw = qc - qc * stats::binary_entropy(phase)? - leak;
    let r = raw.max(0.0);
    Ok(KeyRateResult {
        key_length_g: r,
        rate_per_pulse: r,
        phase_error_bound: phase,
        h_ec_bits: leak,
        asymptotic: true,
        diagnostics: KeyRateDiagnostics {
            gamma_c: qc,
            bit_error_rate: ber,
            gamma_sum_even_upper: est.sum_even_rate_upper,
            gamma_2_even_lower: est.two_even_rate_lower,
            f_value: f,
            raw_key_length: raw,
            eps_sec,
            epsilon_err_spent: 0.0,
            gamma: coeffs.gamma,
            lambda: coeffs.lambda,
            nu_clamped: est.sum_even_rate_upper < fp.gamma_ratio() * est.two_even_rate_lower,
        },
    })
}

/// Rate at the expected counts of `params.n_tot` rounds, or the asymptotic
/// rate when `n_tot` is `None`.
pub fn expected_rate(params: &ProtocolParams, channel: &ChannelParams, n_tot: Option<u64>) -> Result<KeyRateResult> {
    match n_tot {
        None => asymptotic_rate(params, channel),
        Some(n) => {
            let p = ProtocolParams { n_tot: n, ..*params };
            let obs = channel::expected_counts(&p, channel)?;
            key_length(&obs, &p, channel)
        }
    }
}

/// One output line of the rate and table commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "L_km")]
    pub l_km: f64,
    /// `inf` for the asymptotic limit.
    #[serde(rename = "N_tot")]
    pub n_tot: f64,
    pub mu: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub p_c: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub rate_per_pulse: f64,
    pub phase_error_bound: f64,
    pub eps_sec: f64,
}

impl RateRow {
    pub fn new(distance_km: f64, n_tot: Option<u64>, params: &ProtocolParams, result: &KeyRateResult) -> Self {
        Self {
            l_km: distance_km,
            n_tot: n_tot.map_or(f64::INFINITY, |n| n as f64),
            mu: params.mu,
            mu1: params.mu_test[1],
            mu2: params.mu_test[2],
            mu3: params.mu_test[3],
            p_c: params.p_c,
            p0: params.p_test[0],
            p1: params.p_test[1],
            p2: params.p_test[2],
            p3: params.p_test[3],
            rate_per_pulse: result.rate_per_pulse,
            phase_error_bound: result.phase_error_bound,
            eps_sec: result.diagnostics.eps_sec,
        }
    }
}

pub fn write_rate_csv<W: Write>(rows: &[RateRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Input(e.to_string()))
}

pub fn read_rate_csv<R: Read>(r: R) -> Result<Vec<RateRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<RateRow>, _>>()
        .map_err(|e| Error::Input(e.to_string()))
}
