//! Monte-Carlo validation of the phase-error bound and the decoy estimates.
//!
//! Two simulators run per trial:
//!
//! * a label-mixture simulator for `f`: the even parts of the `(0,0)` and
//!   `(1,1)` test rounds are split into a `Lambda rho_even` component, a
//!   `Gamma tau_even(mu2)` component and a positive remainder; detections of
//!   the `rho_even` component and of even code rounds share one yield, as do
//!   the `Gamma` component and `(2,2)` even rounds. The count of even code
//!   detections is the quantity `f` must bound.
//! * a photon-number simulator for the decoy estimates: every label pair and
//!   photon-number pair is a category with yield `Y_jm` from the channel
//!   model, so the true even-sector counts are known.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, ObservedCounts, Provenance};
use crate::decoy;
use crate::error::{Error, Result};
use crate::fock;
use crate::keyrate::ProtocolParams;
use crate::stats::{self, EpsilonBudget, FormulaMode};

/// Photon-number pairs with `j + m` up to this total are simulated.
const MAX_SIMULATED_TOTAL: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    pub params: ProtocolParams,
    pub channel: ChannelParams,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            params: ProtocolParams {
                n_tot: 100_000_000,
                budget: EpsilonBudget { epsilon: 0.01, epsilon_err: 0.01, ..EpsilonBudget::default() },
                ..ProtocolParams::default()
            },
            channel: ChannelParams::at_distance(50.0),
        }
    }
}

/// Empirical failure rate of one bound against its allowance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
    pub allowed: f64,
    /// `sqrt(allowed (1 - allowed) / trials)`.
    pub standard_error: f64,
    pub pass: bool,
}

impl Coverage {
    fn new(trials: usize, failures: usize, allowed: f64) -> Self {
        let rate = failures as f64 / trials.max(1) as f64;
        let standard_error = (allowed * (1.0 - allowed) / trials.max(1) as f64).sqrt();
        Self { trials, failures, rate, allowed, standard_error, pass: rate <= allowed + 3.0 * standard_error }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub f_bound: Coverage,
    /// The same samples judged with the literal formula.
    pub f_bound_as_printed: Coverage,
    pub sandwich: Coverage,
    pub sandwich_upper_failures: usize,
    pub sandwich_lower_failures: usize,
    /// Formula mode whose coverage failed, if exactly one did.
    pub rejected_mode: Option<FormulaMode>,
    pub mean_gamma_c_even: f64,
    pub mean_f: f64,
}

/// Mixture weights per round: code-even, `Lambda`, `Gamma` part, remainder,
/// `(2,2)` even.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub code_even: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub remainder: f64,
    pub two_even: f64,
}

pub fn mixture_weights(params: &ProtocolParams) -> Result<MixtureWeights> {
    let c = params.dominance_coefficients()?;
    let pe = |mu: f64| fock::p_even(mu);
    let [p0, p1, p2, _] = params.p_test;
    let [mu0, mu1, mu2, _] = params.mu_test;
    let gamma = c.gamma * pe(mu2);
    let remainder = p0 * p0 * pe(mu0) + p1 * p1 * pe(mu1) - gamma - c.lambda;
    if remainder < -1e-15 {
        return Err(Error::InvalidCoefficients);
    }
    Ok(MixtureWeights {
        code_even: params.p_c * params.p_c * pe(params.mu),
        lambda: c.lambda,
        gamma,
        remainder: remainder.max(0.0),
        two_even: p2 * p2 * pe(mu2),
    })
}

/// Draws counts for categories with per-round probabilities `probs` out of
/// `n` rounds (exact multinomial via conditional binomials).
fn multinomial(rng: &mut ChaCha20Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0_f64;
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        let k = if left == 0 || mass <= 0.0 { 0 } else { channel::binomial(rng, left, (p / mass).min(1.0)) };
        out.push(k);
        left -= k;
        mass -= p;
    }
    out
}

struct Trial {
    f_violation: bool,
    f_violation_printed: bool,
    upper_fail: bool,
    lower_fail: bool,
    gamma_c_even: f64,
    f: f64,
}

struct Setup {
    weights: MixtureWeights,
    y_rho: f64,
    y_two: f64,
    y_rest: f64,
    fp: stats::FluctuationParams,
    fp_printed: stats::FluctuationParams,
    /// Per-round detection probabilities, ordered by label pair then by
    /// photon-number pair.
    fock_probs: Vec<f64>,
    fock_index: Vec<(usize, usize, u32, u32)>,
    code_rate: f64,
    code_error: f64,
}

fn setup(cfg: &MonteCarloConfig) -> Result<Setup> {
    let p = &cfg.params;
    p.validate()?;
    cfg.channel.validate()?;
    let coeffs = p.dominance_coefficients()?;
    let weights = mixture_weights(p)?;
    let code = channel::code_mode_stats(p.mu, &cfg.channel);
    // yield shared by rho_even and even code rounds, and by the two Gamma-tied parts
    let y_rho = code.gain;
    let y_two = channel::test_mode_gain(p.mu_test[2], p.mu_test[2], &cfg.channel);
    let fp = p.fluctuation_params(&coeffs)?;
    let fp_printed = stats::FluctuationParams { mode: FormulaMode::AsPrinted, ..fp };
    let mut fock_probs = Vec::new();
    let mut fock_index = Vec::new();
    let mut yields = std::collections::HashMap::new();
    for a in 0..4 {
        for b in 0..4 {
            let w = p.p_test[a] * p.p_test[b];
            for n in 0..=MAX_SIMULATED_TOTAL {
                for j in 0..=n {
                    let m = n - j;
                    let y = *yields.entry((j, m)).or_insert_with(|| channel::fock_yield(j, m, &cfg.channel));
                    fock_probs.push(w * fock::poisson(p.mu_test[a], j) * fock::poisson(p.mu_test[b], m) * y);
                    fock_index.push((a, b, j, m));
                }
            }
        }
    }
    Ok(Setup {
        weights,
        y_rho,
        y_two,
        y_rest: 0.0,
        fp,
        fp_printed,
        fock_probs,
        fock_index,
        code_rate: p.p_c * p.p_c * code.gain,
        code_error: code.bit_error_rate,
    })
}

fn run_trial(cfg: &MonteCarloConfig, s: &Setup, index: u64) -> Result<Trial> {
    let p = &cfg.params;
    let n = p.n_tot;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    let w = &s.weights;
    let k = multinomial(
        &mut rng,
        n,
        &[w.code_even * s.y_rho, w.lambda * s.y_rho, w.gamma * s.y_two, w.remainder * s.y_rest, w.two_even * s.y_two],
    );
    let gamma_c_even = k[0] as f64;
    let gamma_sum = (k[1] + k[2] + k[3]) as f64;
    let gamma_two = k[4] as f64;
    let eps = p.budget.epsilon;
    let f = stats::f_upper(gamma_sum, gamma_two, &s.fp, eps)?;
    let f_printed = stats::f_upper(gamma_sum, gamma_two, &s.fp_printed, eps)?;

    let counts = multinomial(&mut rng, n, &s.fock_probs);
    let mut gamma = [[0u64; 4]; 4];
    let mut true_sum = 0u64;
    let mut true_two = 0u64;
    for (c, &(a, b, j, m)) in counts.iter().zip(&s.fock_index) {
        gamma[a][b] += c;
        if (j + m) % 2 == 0 && a == b {
            if a < 2 {
                true_sum += c;
            } else if a == 2 {
                true_two += c;
            }
        }
    }
    let gamma_c = channel::binomial(&mut rng, n, s.code_rate);
    let error_count_c = channel::binomial(&mut rng, gamma_c, s.code_error);
    let observed = ObservedCounts { gamma_c, error_count_c, gamma, n_tot: n, provenance: Provenance::Sampled { seed: cfg.seed } };
    let est = decoy::estimate(&observed, p)?;
    Ok(Trial {
        f_violation: f < gamma_c_even,
        f_violation_printed: f_printed < gamma_c_even,
        upper_fail: est.gamma_sum_even_upper < true_sum as f64,
        lower_fail: est.gamma_2_even_lower > true_two as f64,
        gamma_c_even,
        f,
    })
}

/// Runs `cfg.trials` independent experiments. Trial `i` draws from stream
/// `i` of a generator seeded with `cfg.seed`, so the report does not depend
/// on thread scheduling.
pub fn run_coverage(cfg: &MonteCarloConfig) -> Result<CoverageReport> {
    if cfg.trials == 0 {
        return Err(Error::Input("trials must be >= 1".into()));
    }
    let s = setup(cfg)?;
    let trials: Vec<Trial> =
        (0..cfg.trials as u64).into_par_iter().map(|i| run_trial(cfg, &s, i)).collect::<Result<_>>()?;
    let count = |pred: fn(&Trial) -> bool| trials.iter().filter(|t| pred(t)).count();
    let eps = cfg.params.budget.epsilon;
    let f_bound = Coverage::new(cfg.trials, count(|t| t.f_violation), eps);
    let f_bound_as_printed = Coverage::new(cfg.trials, count(|t| t.f_violation_printed), eps);
    let sandwich = Coverage::new(cfg.trials, count(|t| t.upper_fail || t.lower_fail), cfg.params.budget.epsilon_err);
    let rejected_mode = match (f_bound.pass, f_bound_as_printed.pass) {
        (true, false) => Some(FormulaMode::AsPrinted),
        (false, true) => Some(FormulaMode::SamplingConsistent),
        _ => None,
    };
    let n = cfg.trials as f64;
    Ok(CoverageReport {
        f_bound,
        f_bound_as_printed,
        sandwich,
        sandwich_upper_failures: count(|t| t.upper_fail),
        sandwich_lower_failures: count(|t| t.lower_fail),
        rejected_mode,
        mean_gamma_c_even: trials.iter().map(|t| t.gamma_c_even).sum::<f64>() / n,
        mean_f: trials.iter().map(|t| t.f).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_nonnegative_and_subnormalized() {
        let w = mixture_weights(&ProtocolParams::default()).unwrap();
        for v in [w.code_even, w.lambda, w.gamma, w.remainder, w.two_even] {
            assert!(v >= 0.0);
        }
        assert!(w.code_even + w.lambda + w.gamma + w.remainder + w.two_even <= 1.0);
    }

    #[test]
    fn multinomial_conserves_rounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let k = multinomial(&mut rng, 1000, &[0.2, 0.3, 0.5]);
        assert_eq!(k.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = MonteCarloConfig { trials: 20, ..Default::default() };
        assert_eq!(run_coverage(&cfg).unwrap(), run_coverage(&cfg).unwrap());
    }

    #[test]
    fn single_trial_reports() {
        let cfg = MonteCarloConfig { trials: 1, ..Default::default() };
        let r = run_coverage(&cfg).unwrap();
        assert_eq!(r.f_bound.trials, 1);
    }
}
