//! Parameter search maximizing the key rate at one `(L, N_tot)` point.
//!
//! Multi-start Nelder-Mead over a log-scaled box, restarted from Latin
//! hypercube seeds, followed by a coordinate pass. Every probe is projected
//! onto the feasible set before evaluation.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{ensure, Error, Result};
use crate::keyrate::{self, KeyRateResult, ProtocolParams, DEFAULT_MU0};

pub const DIM: usize = 9;
pub const PARAM_NAMES: [&str; DIM] = ["mu", "mu1", "mu2", "mu3", "p_c", "p0", "p1", "p2", "p3"];

/// Minimum separation between `mu1` and `mu2`.
const ORDER_GAP: f64 = 1e-6;
/// Fraction of the admissible `(mu1 - mu2)/mu2` kept after shrinking.
const VALIDITY_SHRINK: f64 = 0.99;
/// Largest allowed `mu / mu1`.
const MU_RATIO_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Closed intervals in [`PARAM_NAMES`] order; `lo == hi` fixes a parameter.
    pub bounds: [(f64, f64); DIM],
    pub mu0: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            bounds: [
                (0.005, 0.2),
                (0.01, 0.5),
                (0.002, 0.4),
                (0.05, 1.0),
                (0.05, 0.9999),
                (1e-5, 0.5),
                (1e-5, 0.5),
                (1e-5, 0.5),
                (1e-5, 0.5),
            ],
            mu0: DEFAULT_MU0,
        }
    }
}

impl SearchSpace {
    /// A space containing only `point`.
    pub fn single_point(p: &ProtocolParams) -> Self {
        let x = to_vector(p);
        let mut bounds = [(0.0, 0.0); DIM];
        for i in 0..DIM {
            bounds[i] = (x[i], x[i]);
        }
        Self { bounds, mu0: p.mu_test[0] }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            ensure(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi, || {
                format!("interval for {} = [{lo}, {hi}] must be nonempty and positive", PARAM_NAMES[i])
            })?;
        }
        ensure(self.bounds[4].1 <= 1.0 && self.bounds[5..].iter().all(|b| b.1 <= 1.0), || {
            "probability intervals must lie in (0, 1]".into()
        })?;
        ensure(self.mu0 > 0.0 && self.mu0.is_finite(), || format!("mu0 = {} must be > 0", self.mu0))
    }

    fn free_dims(&self) -> Vec<usize> {
        (0..DIM).filter(|&i| self.bounds[i].0 < self.bounds[i].1).collect()
    }

    fn unit_to_value(&self, u: f64, i: usize) -> f64 {
        let (lo, hi) = self.bounds[i];
        if lo == hi {
            lo
        } else {
            lo * (hi / lo).powf(u.clamp(0.0, 1.0))
        }
    }

    fn value_to_unit(&self, x: f64, i: usize) -> f64 {
        let (lo, hi) = self.bounds[i];
        if lo == hi {
            0.0
        } else {
            ((x / lo).ln() / (hi / lo).ln()).clamp(0.0, 1.0)
        }
    }
}

pub fn to_vector(p: &ProtocolParams) -> [f64; DIM] {
    [
        p.mu,
        p.mu_test[1],
        p.mu_test[2],
        p.mu_test[3],
        p.p_c,
        p.p_test[0],
        p.p_test[1],
        p.p_test[2],
        p.p_test[3],
    ]
}

pub fn from_vector(x: &[f64; DIM], mu0: f64, template: &ProtocolParams) -> ProtocolParams {
    ProtocolParams {
        mu: x[0],
        mu_test: [mu0, x[1], x[2], x[3]],
        p_c: x[4],
        p_test: [x[5], x[6], x[7], x[8]],
        ..*template
    }
}

/// `p0^2 e^{-2 mu0} / (p1^2 e^{-2 mu1})`, the bound on `(mu1 - mu2)/mu2`.
fn validity_limit(x: &[f64; DIM], mu0: f64) -> f64 {
    (x[5] * x[5] * (-2.0 * mu0).exp()) / (x[6] * x[6] * (-2.0 * x[1]).exp())
}

fn validity_holds(x: &[f64; DIM], mu0: f64) -> bool {
    let r = (x[1] - x[2]) / x[2];
    r > 0.0 && r < validity_limit(x, mu0)
}

/// Projects a point of the box onto the feasible set: label probabilities
/// sum to at most one, `mu1 > mu2`, the dominance validity condition holds,
/// and `mu < mu1`.
pub fn feasible_projection(space: &SearchSpace, raw: &[f64; DIM]) -> [f64; DIM] {
    let mut x = *raw;
    for i in 0..DIM {
        x[i] = x[i].clamp(space.bounds[i].0, space.bounds[i].1);
    }
    let total: f64 = x[4..].iter().sum();
    if total > 1.0 {
        // shrink only the part above each lower bound so the box is kept
        let floor: f64 = space.bounds[4..].iter().map(|b| b.0).sum();
        let k = (1.0 - floor) / (total - floor) * (1.0 - 1e-12);
        for (v, b) in x[4..].iter_mut().zip(&space.bounds[4..]) {
            *v = b.0 + (*v - b.0) * k;
        }
    }
    if x[1] <= x[2] {
        x.swap(1, 2);
        if x[1] - x[2] < ORDER_GAP {
            x[1] = x[2] + ORDER_GAP;
        }
    }
    if !validity_holds(&x, space.mu0) {
        let target = x[1] / (1.0 + VALIDITY_SHRINK * validity_limit(&x, space.mu0));
        x[2] = target.clamp(space.bounds[2].0, space.bounds[2].1);
        if !validity_holds(&x, space.mu0) {
            // keep mu2, pull mu1 down until the condition holds
            let g = |mu1: f64| {
                let mut y = x;
                y[1] = mu1;
                (mu1 - y[2]) / y[2] - VALIDITY_SHRINK * validity_limit(&y, space.mu0)
            };
            let (mut lo, mut hi) = ((x[2] + ORDER_GAP).max(space.bounds[1].0), x[1]);
            // otherwise no mu1 in the box works; evaluation rejects the point
            if lo < hi && g(lo) < 0.0 {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                x[1] = lo;
            }
        }
    }
    if x[0] >= x[1] {
        x[0] = (MU_RATIO_CAP * x[1]).max(space.bounds[0].0);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_evaluations: usize,
    /// Extra start point added to the Latin hypercube seeds.
    pub warm_start: Option<[f64; DIM]>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { seed: 0, restarts: 8, max_evaluations: 2000, warm_start: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub params: ProtocolParams,
    pub result: KeyRateResult,
    /// Search objective at the optimum (unclamped rate).
    pub objective: f64,
    pub evaluations: usize,
}

struct Problem<'a> {
    space: &'a SearchSpace,
    channel: &'a ChannelParams,
    n_tot: Option<u64>,
    template: &'a ProtocolParams,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn point(&self, u: &[f64]) -> [f64; DIM] {
        let mut x = [0.0; DIM];
        for i in 0..DIM {
            x[i] = self.space.unit_to_value(0.0, i);
        }
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = self.space.unit_to_value(u[k], i);
        }
        feasible_projection(self.space, &x)
    }

    fn evaluate_point(&self, x: &[f64; DIM]) -> Option<(f64, KeyRateResult)> {
        let p = from_vector(x, self.space.mu0, self.template);
        let r = keyrate::expected_rate(&p, self.channel, self.n_tot).ok()?;
        let obj = search_objective(&r, self.n_tot);
        obj.is_finite().then_some((obj, r))
    }

    fn objective(&self, u: &[f64]) -> f64 {
        self.evaluate_point(&self.point(u)).map_or(f64::NEG_INFINITY, |(o, _)| o)
    }
}

/// Unclamped rate, continued past a saturated phase-error bound with a
/// linear penalty so that the search still sees a slope there.
fn search_objective(r: &KeyRateResult, n_tot: Option<u64>) -> f64 {
    let d = &r.diagnostics;
    let excess = if d.gamma_c > 0.0 { (d.f_value / d.gamma_c - 0.5).max(0.0) } else { 0.0 };
    let raw = d.raw_key_length - d.gamma_c * excess;
    match n_tot {
        None => raw,
        Some(0) => 0.0,
        Some(n) => raw / n as f64,
    }
}

/// Best of two candidates: larger objective, ties broken by the
/// lexicographically smaller parameter vector.
fn better(a: &(f64, [f64; DIM]), b: &(f64, [f64; DIM])) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => lex_cmp(&a.1, &b.1) == Ordering::Less,
    }
}

fn lex_cmp(a: &[f64; DIM], b: &[f64; DIM]) -> Ordering {
    for i in 0..DIM {
        match a[i].total_cmp(&b[i]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn latin_hypercube(n: usize, d: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            pts[i][k] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Downhill simplex maximizing `f` over the unit cube, at most `budget`
/// evaluations. Returns the best vertex, its value and evaluations used.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], budget: usize) -> (Vec<f64>, f64, usize) {
    let d = start.len();
    let clamp = |v: Vec<f64>| v.into_iter().map(|c| c.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut evals = 0;
    let eval = |v: &[f64], evals: &mut usize| {
        *evals += 1;
        // minimize the negated objective
        -f(v)
    };
    let s0 = start.to_vec();
    let f0 = eval(&s0, &mut evals);
    simplex.push((s0, f0));
    for k in 0..d {
        let mut v = start.to_vec();
        v[k] = if v[k] + 0.15 <= 1.0 { v[k] + 0.15 } else { v[k] - 0.15 };
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| {
            a.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
        }))
    };
    while evals + 2 <= budget {
        order(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[d].1;
        if best.is_finite() && (worst - best).abs() <= 1e-12 * best.abs().max(1e-300) {
            let spread = (0..d)
                .map(|k| simplex.iter().map(|p| p.0[k]).fold(f64::NEG_INFINITY, f64::max)
                    - simplex.iter().map(|p| p.0[k]).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            if spread < 1e-6 {
                break;
            }
        }
        let mut centroid = vec![0.0; d];
        for p in &simplex[..d] {
            for k in 0..d {
                centroid[k] += p.0[k] / d as f64;
            }
        }
        let along = |t: f64| clamp((0..d).map(|k| centroid[k] + t * (simplex[d].0[k] - centroid[k])).collect());
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                if evals + d > budget {
                    break;
                }
                let b = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = p.0.iter().zip(&b).map(|(x, y)| y + 0.5 * (x - y)).collect();
                    let fv = eval(&v, &mut evals);
                    *p = (v, fv);
                }
            }
        }
    }
    order(&mut simplex);
    let (v, fv) = simplex.swap_remove(0);
    (v, -fv, evals)
}

/// Greedy coordinate search with shrinking steps.
fn coordinate_pass(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>, f_start: f64, budget: usize) -> (Vec<f64>, f64, usize) {
    let mut best = start;
    let mut fbest = f_start;
    let mut evals = 0;
    let mut step = 0.05;
    while step > 1e-4 && evals < budget {
        let mut improved = false;
        for k in 0..best.len() {
            for dir in [1.0, -1.0] {
                if evals >= budget {
                    break;
                }
                let mut v = best.clone();
                v[k] = (v[k] + dir * step).clamp(0.0, 1.0);
                if v[k] == best[k] {
                    continue;
                }
                evals += 1;
                let fv = f(&v);
                if fv > fbest {
                    best = v;
                    fbest = fv;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    (best, fbest, evals)
}

/// Searches `space` for the parameters maximizing the key rate at
/// `channel.distance_km` and `n_tot` rounds (`None` = asymptotic).
pub fn optimize(
    space: &SearchSpace,
    channel: &ChannelParams,
    n_tot: Option<u64>,
    template: &ProtocolParams,
    options: &OptimizeOptions,
) -> Result<OptimizeResult> {
    space.validate()?;
    channel.validate()?;
    let free = space.free_dims();
    let prob = Problem { space, channel, n_tot, template, free: free.clone() };
    let d = free.len();

    if d == 0 {
        let x = prob.point(&[]);
        let (objective, result) = prob
            .evaluate_point(&x)
            .ok_or_else(|| Error::SearchFailure(format!("the single point {x:?} is not a valid protocol")))?;
        return Ok(OptimizeResult { params: from_vector(&x, space.mu0, template), result, objective, evaluations: 1 });
    }

    let restarts = options.restarts.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut starts = latin_hypercube(restarts, d, &mut rng);
    if let Some(w) = options.warm_start {
        starts.push(free.iter().map(|&i| space.value_to_unit(w[i], i)).collect());
    }
    let refine_budget = options.max_evaluations / 5;
    let per_start = (options.max_evaluations - refine_budget) / starts.len();
    let f = |u: &[f64]| prob.objective(u);

    let runs: Vec<(Vec<f64>, f64, usize)> = starts.par_iter().map(|s| nelder_mead(&f, s, per_start)).collect();
    let mut evaluations: usize = runs.iter().map(|r| r.2).sum();
    let mut best: Option<(f64, [f64; DIM], Vec<f64>)> = None;
    for (u, fu, _) in runs {
        let x = prob.point(&u);
        let cand = (fu, x);
        if best.as_ref().is_none_or(|b| better(&cand, &(b.0, b.1))) {
            best = Some((fu, x, u));
        }
    }
    let (fbest, _, ubest) = best.expect("at least one restart");
    if fbest == f64::NEG_INFINITY {
        return Err(Error::SearchFailure(format!(
            "no probe among {evaluations} evaluations produced a valid protocol (distance {} km)",
            channel.distance_km
        )));
    }
    let (u, _, used) = coordinate_pass(&f, ubest, fbest, refine_budget);
    evaluations += used;
    let x = prob.point(&u);
    let (objective, result) = prob
        .evaluate_point(&x)
        .ok_or_else(|| Error::SearchFailure("best point failed to re-evaluate".into()))?;
    Ok(OptimizeResult { params: from_vector(&x, space.mu0, template), result, objective, evaluations })
}

/// Uniform random point of the box after projection.
pub fn random_feasible_point(space: &SearchSpace, rng: &mut impl Rng) -> [f64; DIM] {
    let mut x = [0.0; DIM];
    for i in 0..DIM {
        x[i] = space.unit_to_value(rng.random::<f64>(), i);
    }
    feasible_projection(space, &x)
}
