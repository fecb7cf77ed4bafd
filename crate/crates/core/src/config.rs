//! Run configuration for the command-line tool.
//!
//! A config file is a flat JSON object. Every key is optional and falls back
//! to the library default; unknown keys are rejected so typos fail loudly.
//! `n_tot` (and every entry of `n_tot_list`) accepts a count or the string
//! `"inf"` for the asymptotic limit.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::ChannelParams;
use crate::decoy::DecoyOptions;
use crate::dominance::DominanceCoefficients;
use crate::error::{Error, Result};
use crate::keyrate::ProtocolParams;
use crate::montecarlo::MonteCarloConfig;
use crate::optimizer::{OptimizeOptions, SearchSpace, DIM};
use crate::stats::{EpsilonBudget, FormulaMode};

/// Number of rounds, or the asymptotic limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NTot {
    Finite(u64),
    Infinite,
}

impl NTot {
    pub fn as_option(self) -> Option<u64> {
        match self {
            NTot::Finite(n) => Some(n),
            NTot::Infinite => None,
        }
    }
}

impl fmt::Display for NTot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NTot::Finite(n) => write!(f, "{n}"),
            NTot::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for NTot {
    type Err = Error;

    /// Accepts `inf`, plain integers and integral scientific notation (`1e12`).
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") {
            return Ok(NTot::Infinite);
        }
        if let Ok(n) = t.parse::<u64>() {
            return Ok(NTot::Finite(n));
        }
        let x: f64 = t.parse().map_err(|_| Error::Config(format!("n_tot = {s:?} is not a count or \"inf\"")))?;
        from_float(x)
    }
}

fn from_float(x: f64) -> Result<NTot> {
    if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(NTot::Finite(x as u64))
    } else {
        Err(Error::Config(format!("n_tot = {x} must be a nonnegative integer or \"inf\"")))
    }
}

impl Serialize for NTot {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NTot::Finite(n) => s.serialize_u64(*n),
            NTot::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NTot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let r = match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(NTot::Finite(n)),
            Raw::Float(x) => from_float(x),
            Raw::Text(s) => s.parse(),
        };
        r.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // protocol
    pub mu: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub p_c: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub n_tot: NTot,
    pub epsilon: f64,
    pub zeta_bits: u32,
    pub zeta_prime_bits: u32,
    pub epsilon_err: f64,
    pub formula_mode: FormulaMode,
    pub max_photon_total: u32,
    pub use_off_diagonal: bool,
    pub symmetric_yields: bool,
    pub exact_chernoff: bool,

    // channel
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    pub detector_efficiency: f64,
    pub dark_count_prob: f64,
    pub misalignment: f64,
    pub error_correction_efficiency: f64,

    // search, as [lo, hi] per optimized parameter
    pub search_mu: [f64; 2],
    pub search_mu1: [f64; 2],
    pub search_mu2: [f64; 2],
    pub search_mu3: [f64; 2],
    pub search_p_c: [f64; 2],
    pub search_p0: [f64; 2],
    pub search_p1: [f64; 2],
    pub search_p2: [f64; 2],
    pub search_p3: [f64; 2],
    pub restarts: usize,
    pub max_evaluations: usize,

    // table grid
    pub distances_km: Vec<f64>,
    pub n_tot_list: Vec<NTot>,

    // dominance check
    pub cutoff: u32,
    pub lambda_override: Option<f64>,
    pub lambda_scale: f64,
    pub gamma_override: Option<f64>,

    // monte carlo
    pub trials: usize,
    pub mc_n_tot: u64,
    pub mc_epsilon: f64,
    pub mc_epsilon_err: f64,

    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ProtocolParams::default();
        let ch = ChannelParams::default();
        let s = SearchSpace::default();
        let mc = MonteCarloConfig::default();
        let b = |i: usize| [s.bounds[i].0, s.bounds[i].1];
        let opt = OptimizeOptions::default();
        Self {
            mu: p.mu,
            mu0: p.mu_test[0],
            mu1: p.mu_test[1],
            mu2: p.mu_test[2],
            mu3: p.mu_test[3],
            p_c: p.p_c,
            p0: p.p_test[0],
            p1: p.p_test[1],
            p2: p.p_test[2],
            p3: p.p_test[3],
            n_tot: NTot::Finite(p.n_tot),
            epsilon: p.budget.epsilon,
            zeta_bits: p.budget.zeta_bits,
            zeta_prime_bits: p.budget.zeta_prime_bits,
            epsilon_err: p.budget.epsilon_err,
            formula_mode: p.formula_mode,
            max_photon_total: p.decoy.max_photon_total,
            use_off_diagonal: p.decoy.use_off_diagonal,
            symmetric_yields: p.decoy.symmetric_yields,
            exact_chernoff: p.decoy.exact_chernoff,
            distance_km: ch.distance_km,
            loss_db_per_km: ch.loss_db_per_km,
            detector_efficiency: ch.detector_efficiency,
            dark_count_prob: ch.dark_count_prob,
            misalignment: ch.misalignment,
            error_correction_efficiency: ch.error_correction_efficiency,
            search_mu: b(0),
            search_mu1: b(1),
            search_mu2: b(2),
            search_mu3: b(3),
            search_p_c: b(4),
            search_p0: b(5),
            search_p1: b(6),
            search_p2: b(7),
            search_p3: b(8),
            restarts: opt.restarts,
            max_evaluations: opt.max_evaluations,
            distances_km: vec![0.0, 100.0, 200.0, 300.0, 350.0, 400.0],
            n_tot_list: [1e11, 1e12, 1e13, 1e14]
                .iter()
                .map(|&n| NTot::Finite(n as u64))
                .chain(std::iter::once(NTot::Infinite))
                .collect(),
            cutoff: 40,
            lambda_override: None,
            lambda_scale: 1.0,
            gamma_override: None,
            trials: mc.trials,
            mc_n_tot: mc.params.n_tot,
            mc_epsilon: mc.params.budget.epsilon,
            mc_epsilon_err: mc.params.budget.epsilon_err,
            out: None,
            seed: 0,
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Protocol parameters with `n_tot` rounds; the asymptotic limit maps to 0
    /// rounds here since callers dispatch on [`NTot`] themselves.
    pub fn protocol(&self) -> ProtocolParams {
        ProtocolParams {
            mu: self.mu,
            mu_test: [self.mu0, self.mu1, self.mu2, self.mu3],
            p_c: self.p_c,
            p_test: [self.p0, self.p1, self.p2, self.p3],
            n_tot: self.n_tot.as_option().unwrap_or(0),
            budget: self.budget(),
            formula_mode: self.formula_mode,
            decoy: DecoyOptions {
                max_photon_total: self.max_photon_total,
                use_off_diagonal: self.use_off_diagonal,
                symmetric_yields: self.symmetric_yields,
                exact_chernoff: self.exact_chernoff,
            },
        }
    }

    pub fn budget(&self) -> EpsilonBudget {
        EpsilonBudget {
            epsilon: self.epsilon,
            zeta_bits: self.zeta_bits,
            zeta_prime_bits: self.zeta_prime_bits,
            epsilon_err: self.epsilon_err,
        }
    }

    pub fn channel(&self) -> ChannelParams {
        self.channel_at(self.distance_km)
    }

    pub fn channel_at(&self, distance_km: f64) -> ChannelParams {
        ChannelParams {
            distance_km,
            loss_db_per_km: self.loss_db_per_km,
            detector_efficiency: self.detector_efficiency,
            dark_count_prob: self.dark_count_prob,
            misalignment: self.misalignment,
            error_correction_efficiency: self.error_correction_efficiency,
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        let r = [
            self.search_mu,
            self.search_mu1,
            self.search_mu2,
            self.search_mu3,
            self.search_p_c,
            self.search_p0,
            self.search_p1,
            self.search_p2,
            self.search_p3,
        ];
        let mut bounds = [(0.0, 0.0); DIM];
        for i in 0..DIM {
            bounds[i] = (r[i][0], r[i][1]);
        }
        SearchSpace { bounds, mu0: self.mu0 }
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            seed: self.seed,
            restarts: self.restarts,
            max_evaluations: self.max_evaluations,
            warm_start: None,
        }
    }

    pub fn montecarlo(&self) -> MonteCarloConfig {
        let mut params = self.protocol();
        params.n_tot = self.mc_n_tot;
        params.budget.epsilon = self.mc_epsilon;
        params.budget.epsilon_err = self.mc_epsilon_err;
        MonteCarloConfig { trials: self.trials, seed: self.seed, params, channel: self.channel() }
    }

    /// Dominance coefficients for the configured point after overrides.
    ///
    /// With both overrides at zero the trivial decomposition is returned.
    pub fn dominance_coefficients(&self) -> Result<DominanceCoefficients> {
        if self.gamma_override == Some(0.0) && self.lambda_override == Some(0.0) {
            return Ok(DominanceCoefficients::trivial());
        }
        let mut c = self.protocol().dominance_coefficients()?;
        if let Some(g) = self.gamma_override {
            c.gamma = g;
        }
        if let Some(l) = self.lambda_override {
            c.lambda = l;
        }
        c.lambda *= self.lambda_scale;
        Ok(c)
    }

    /// Checks every field against the owning module's rules. Failures are
    /// [`Error::Config`], except intensity ordering, which keeps its own
    /// variant for clearer messages.
    pub fn validate(&self) -> Result<()> {
        let p = self.protocol();
        match p.validate() {
            Err(e @ Error::Ordering { .. }) => return Err(e),
            other => other.map_err(config_err)?,
        }
        self.channel().validate().map_err(config_err)?;
        self.search_space().validate().map_err(config_err)?;
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.restarts == 0 || self.max_evaluations < 10 {
            return cfg("restarts must be >= 1 and max_evaluations >= 10".into());
        }
        if self.distances_km.is_empty() || self.n_tot_list.is_empty() {
            return cfg("distances_km and n_tot_list must be nonempty".into());
        }
        if let Some(d) = self.distances_km.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return cfg(format!("distance {d} km must be finite and >= 0"));
        }
        if self.cutoff < 2 || !self.cutoff.is_multiple_of(2) || self.cutoff > 200 {
            return cfg(format!("cutoff = {} must be even and in [2, 200]", self.cutoff));
        }
        for (name, v) in [("lambda_override", self.lambda_override), ("gamma_override", self.gamma_override)] {
            if let Some(x) = v {
                if !(x.is_finite() && x >= 0.0) {
                    return cfg(format!("{name} = {x} must be finite and >= 0"));
                }
            }
        }
        if !(self.lambda_scale.is_finite() && self.lambda_scale >= 0.0) {
            return cfg(format!("lambda_scale = {} must be finite and >= 0", self.lambda_scale));
        }
        if self.trials == 0 {
            return cfg("trials must be >= 1".into());
        }
        let mc = self.montecarlo();
        mc.params.budget.validate().map_err(config_err)?;
        if mc.params.n_tot == 0 {
            return cfg("mc_n_tot must be >= 1".into());
        }
        Ok(())
    }
}
