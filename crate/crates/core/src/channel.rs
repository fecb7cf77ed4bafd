//! Symmetric fiber channel with an untrusted interfering middle node.
//!
//! Both arms have length `L/2`. The middle node interferes the two pulses on
//! a balanced beam splitter with two threshold detectors; a round counts as
//! detected iff exactly one detector clicks.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fock;
use crate::keyrate::ProtocolParams;

/// Default number of phase points for the test-mode average.
pub const DEFAULT_PHASE_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Total Alice to Bob distance in km.
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    pub detector_efficiency: f64,
    pub dark_count_prob: f64,
    pub misalignment: f64,
    pub error_correction_efficiency: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            distance_km: 0.0,
            loss_db_per_km: 0.2,
            detector_efficiency: 0.3,
            dark_count_prob: 1e-8,
            misalignment: 0.03,
            error_correction_efficiency: 1.1,
        }
    }
}

impl ChannelParams {
    pub fn at_distance(distance_km: f64) -> Self {
        Self { distance_km, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.distance_km.is_finite() && self.distance_km >= 0.0, || {
            format!("distance {} km must be >= 0", self.distance_km)
        })?;
        ensure(self.loss_db_per_km.is_finite() && self.loss_db_per_km >= 0.0, || {
            format!("fiber loss {} dB/km must be >= 0", self.loss_db_per_km)
        })?;
        for (name, v) in [
            ("detector_efficiency", self.detector_efficiency),
            ("dark_count_prob", self.dark_count_prob),
            ("misalignment", self.misalignment),
        ] {
            ensure((0.0..=1.0).contains(&v), || format!("{name} = {v} must be in [0, 1]"))?;
        }
        ensure(self.error_correction_efficiency >= 1.0 && self.error_correction_efficiency.is_finite(), || {
            format!("error correction efficiency {} must be >= 1", self.error_correction_efficiency)
        })
    }

    /// Interference visibility `1 - 2 e_m`.
    pub fn visibility(&self) -> f64 {
        1.0 - 2.0 * self.misalignment
    }
}

/// Transmittance of one arm including detector efficiency.
pub fn arm_transmittance(channel: &ChannelParams) -> f64 {
    channel.detector_efficiency * 10f64.powf(-channel.loss_db_per_km * channel.distance_km / 2.0 / 10.0)
}

/// End-to-end transmittance used for the repeaterless comparison:
/// `eta_d^2 * 10^{-xi L / 10}`.
pub fn end_to_end_transmittance(channel: &ChannelParams) -> f64 {
    let eta = arm_transmittance(channel);
    eta * eta
}

/// Repeaterless secret-key capacity `-log2(1 - eta)`.
pub fn plob_bound(eta: f64) -> f64 {
    -(-eta).ln_1p() / std::f64::consts::LN_2
}

/// Click probability of a threshold detector with Poisson mean `mean`.
fn click(mean: f64, pd: f64) -> f64 {
    -((-pd).ln_1p() - mean).exp_m1()
}

fn exactly_one(mean_a: f64, mean_b: f64, pd: f64) -> f64 {
    let ca = click(mean_a, pd);
    let cb = click(mean_b, pd);
    ca * (1.0 - cb) + cb * (1.0 - ca)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeModeStats {
    pub gain: f64,
    pub bit_error_rate: f64,
}

pub fn code_mode_stats(mu: f64, channel: &ChannelParams) -> CodeModeStats {
    let eta = arm_transmittance(channel);
    let pd = channel.dark_count_prob;
    let em = channel.misalignment;
    let right = click(2.0 * mu * eta * (1.0 - em), pd);
    let wrong = click(2.0 * mu * eta * em, pd);
    let ok = right * (1.0 - wrong);
    let err = wrong * (1.0 - right);
    let gain = ok + err;
    let bit_error_rate = if gain > 0.0 { err / gain } else { 0.0 };
    CodeModeStats { gain, bit_error_rate }
}

/// Detector means for relative phase `theta`.
fn test_means(mu_a: f64, mu_b: f64, theta: f64, eta: f64, visibility: f64) -> (f64, f64) {
    let base = (mu_a + mu_b) * eta / 2.0;
    let cross = (mu_a * mu_b).sqrt() * eta * visibility * theta.cos();
    ((base + cross).max(0.0), (base - cross).max(0.0))
}

pub fn test_mode_gain(mu_a: f64, mu_b: f64, channel: &ChannelParams) -> f64 {
    test_mode_gain_with_points(mu_a, mu_b, channel, DEFAULT_PHASE_POINTS)
}

/// Phase-averaged gain of a pair of phase-randomized pulses, using the
/// periodic trapezoidal rule with `points` nodes.
pub fn test_mode_gain_with_points(mu_a: f64, mu_b: f64, channel: &ChannelParams, points: usize) -> f64 {
    let points = points.max(1);
    let eta = arm_transmittance(channel);
    let v = channel.visibility();
    let pd = channel.dark_count_prob;
    let mut acc = 0.0;
    for k in 0..points {
        let theta = std::f64::consts::TAU * k as f64 / points as f64;
        let (mp, mm) = test_means(mu_a, mu_b, theta, eta, v);
        acc += exactly_one(mp, mm, pd);
    }
    acc / points as f64
}

/// Modified Bessel function `I0(x)` by its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..1000 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Closed form of [`test_mode_gain`] through `I0`.
pub fn test_mode_gain_closed_form(mu_a: f64, mu_b: f64, channel: &ChannelParams) -> f64 {
    let eta = arm_transmittance(channel);
    let pd = channel.dark_count_prob;
    let x = (mu_a * mu_b).sqrt() * eta * channel.visibility();
    2.0 * (1.0 - pd) * (-(mu_a + mu_b) * eta / 2.0).exp() * bessel_i0(x)
        - 2.0 * (1.0 - pd) * (1.0 - pd) * (-(mu_a + mu_b) * eta).exp()
}

fn binomial_coefficient(n: u32, k: u32) -> f64 {
    (fock::ln_factorial(n) - fock::ln_factorial(k) - fock::ln_factorial(n - k)).exp()
}

/// Yield of the photon-number pair `(j, m)`: probability of exactly one
/// click when Alice sends `j` photons and Bob sends `m`, with independent
/// random phases.
pub fn fock_yield(j: u32, m: u32, channel: &ChannelParams) -> f64 {
    let eta = arm_transmittance(channel);
    let pd = channel.dark_count_prob;
    let a = eta * channel.visibility() / 2.0;
    let b = 1.0 - eta / 2.0;
    let n = j + m;
    let mut z = 0.0;
    for k in 0..=j.min(m) {
        z += binomial_coefficient(j, k) * binomial_coefficient(m, k) * a.powi(2 * k as i32) * b.powi((n - 2 * k) as i32);
    }
    let y = 2.0 * (1.0 - pd) * z - 2.0 * (1.0 - pd) * (1.0 - pd) * (1.0 - eta).powi(n as i32);
    y.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Expected,
    Sampled { seed: u64 },
}

/// Announced statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedCounts {
    pub gamma_c: u64,
    pub error_count_c: u64,
    /// `gamma[a][b]`: detected rounds where Alice chose test label `a` and Bob `b`.
    pub gamma: [[u64; 4]; 4],
    pub n_tot: u64,
    pub provenance: Provenance,
}

impl ObservedCounts {
    pub fn zeros(n_tot: u64) -> Self {
        Self { gamma_c: 0, error_count_c: 0, gamma: [[0; 4]; 4], n_tot, provenance: Provenance::Expected }
    }

    pub fn validate(&self) -> Result<()> {
        if self.error_count_c > self.gamma_c {
            return Err(Error::Input(format!(
                "error count {} exceeds code detections {}",
                self.error_count_c, self.gamma_c
            )));
        }
        let total: u128 = self.gamma.iter().flatten().map(|&c| c as u128).sum::<u128>() + self.gamma_c as u128;
        if total > self.n_tot as u128 {
            return Err(Error::Input(format!("{total} detections exceed {} rounds", self.n_tot)));
        }
        Ok(())
    }

    pub fn bit_error_rate(&self) -> f64 {
        if self.gamma_c == 0 {
            0.0
        } else {
            self.error_count_c as f64 / self.gamma_c as f64
        }
    }

    /// Writes the counts as CSV rows `label_a,label_b,count`.
    ///
    /// Row order: `code,code` (detections), `code,error`, `rounds,rounds`
    /// (`n_tot`), `provenance,expected|sampled` (seed or 0), then the sixteen
    /// test pairs `a,b` in row-major order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut row = |a: &str, b: &str, c: u64| {
            wr.serialize(CountRow { label_a: a.into(), label_b: b.into(), count: c })
                .map_err(|e| Error::Input(e.to_string()))
        };
        row("code", "code", self.gamma_c)?;
        row("code", "error", self.error_count_c)?;
        row("rounds", "rounds", self.n_tot)?;
        match self.provenance {
            Provenance::Expected => row("provenance", "expected", 0)?,
            Provenance::Sampled { seed } => row("provenance", "sampled", seed)?,
        }
        for a in 0..4 {
            for b in 0..4 {
                row(&a.to_string(), &b.to_string(), self.gamma[a][b])?;
            }
        }
        wr.flush().map_err(|e| Error::Input(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Self::zeros(0);
        let mut seen = [[false; 4]; 4];
        let mut seen_code = false;
        let mut seen_rounds = false;
        for rec in rd.deserialize::<CountRow>() {
            let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
            match (rec.label_a.as_str(), rec.label_b.as_str()) {
                ("code", "code") => {
                    out.gamma_c = rec.count;
                    seen_code = true;
                }
                ("code", "error") => out.error_count_c = rec.count,
                ("rounds", "rounds") => {
                    out.n_tot = rec.count;
                    seen_rounds = true;
                }
                ("provenance", "expected") => out.provenance = Provenance::Expected,
                ("provenance", "sampled") => out.provenance = Provenance::Sampled { seed: rec.count },
                (a, b) => {
                    let parse = |s: &str| s.parse::<usize>().ok().filter(|&v| v < 4);
                    let (Some(a), Some(b)) = (parse(a), parse(b)) else {
                        return Err(Error::Input(format!("unknown row ({a}, {b})")));
                    };
                    out.gamma[a][b] = rec.count;
                    seen[a][b] = true;
                }
            }
        }
        if !seen_code || !seen_rounds || seen.iter().flatten().any(|s| !s) {
            return Err(Error::Input("missing rows in counts file".into()));
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    label_a: String,
    label_b: String,
    count: u64,
}

/// Per-round detection probabilities behind [`ObservedCounts`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub code: CodeModeStats,
    /// `p_c^2 * code gain`.
    pub code_rate: f64,
    /// `test_gain[a][b]`, not weighted by label probabilities.
    pub test_gain: [[f64; 4]; 4],
    /// `p_a p_b * test_gain[a][b]`.
    pub test_rate: [[f64; 4]; 4],
}

pub fn expected_rates(protocol: &ProtocolParams, channel: &ChannelParams) -> Result<ExpectedRates> {
    protocol.check_probabilities()?;
    channel.validate()?;
    let code = code_mode_stats(protocol.mu, channel);
    let mut test_gain = [[0.0; 4]; 4];
    let mut test_rate = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in a..4 {
            let g = test_mode_gain(protocol.mu_test[a], protocol.mu_test[b], channel);
            test_gain[a][b] = g;
            test_gain[b][a] = g;
        }
    }
    for a in 0..4 {
        for b in 0..4 {
            test_rate[a][b] = protocol.p_test[a] * protocol.p_test[b] * test_gain[a][b];
        }
    }
    Ok(ExpectedRates { code, code_rate: protocol.p_c * protocol.p_c * code.gain, test_gain, test_rate })
}

pub fn expected_counts(protocol: &ProtocolParams, channel: &ChannelParams) -> Result<ObservedCounts> {
    let rates = expected_rates(protocol, channel)?;
    let n = protocol.n_tot as f64;
    let gamma_c = (n * rates.code_rate).round() as u64;
    let error_count_c = ((gamma_c as f64) * rates.code.bit_error_rate).round() as u64;
    let mut gamma = [[0u64; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            gamma[a][b] = (n * rates.test_rate[a][b]).round() as u64;
        }
    }
    Ok(ObservedCounts { gamma_c, error_count_c, gamma, n_tot: protocol.n_tot, provenance: Provenance::Expected })
}

pub(crate) fn binomial(rng: &mut ChaCha20Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("binomial parameters checked").sample(rng)
}

/// Replaces every count of an expected-count record by a binomial draw with
/// the same mean over `n_tot` trials. Error counts are drawn among the sampled
/// code detections.
pub fn sample_counts(expected: &ObservedCounts, seed: u64) -> Result<ObservedCounts> {
    if expected.provenance != Provenance::Expected {
        return Err(Error::Input("sample_counts needs expected counts".into()));
    }
    expected.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = expected.n_tot;
    let frac = |c: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let gamma_c = binomial(&mut rng, n, frac(expected.gamma_c));
    let error_count_c = binomial(&mut rng, gamma_c, expected.bit_error_rate());
    let mut gamma = [[0u64; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            gamma[a][b] = binomial(&mut rng, n, frac(expected.gamma[a][b]));
        }
    }
    Ok(ObservedCounts { gamma_c, error_count_c, gamma, n_tot: n, provenance: Provenance::Sampled { seed } })
}
