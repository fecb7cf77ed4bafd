//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tfqkd::lp::{LinearProgram, Sense};

/// Optimum of a box-bounded LP by trying every basis of `n` tight
/// constraints. `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    // each inequality as (a, b) meaning a . y <= b
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = lp.var_bounds(j);
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        assert!(lo.is_finite() && hi.is_finite(), "oracle needs a bounded box");
        ineq.push((e.iter().map(|v| -v).collect(), -lo));
        ineq.push((e, hi));
    }
    for (i, row) in lp.rows().iter().enumerate() {
        let (lo, hi) = lp.row_bounds(i);
        if lo.is_finite() {
            ineq.push((row.iter().map(|v| -v).collect(), -lo));
        }
        if hi.is_finite() {
            ineq.push((row.clone(), hi));
        }
    }
    let sign = if lp.sense() == Sense::Maximize { 1.0 } else { -1.0 };
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| ineq[pick[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| ineq[pick[r]].1);
        if let Some(y) = a.lu().solve(&b) {
            let y: Vec<f64> = y.iter().copied().collect();
            let scale = 1.0 + y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if y.iter().all(|v| v.is_finite()) && lp.max_violation(&y) <= 1e-9 * scale {
                let v = sign * lp.objective_value(&y);
                if best.is_none_or(|b| v > b) {
                    best = Some(v);
                }
            }
        }
        if !next_combination(&mut pick, ineq.len()) {
            break;
        }
    }
    best.map(|v| sign * v)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Random LP with 1..=6 bounded variables and up to 4 rows. Most instances
/// are feasible by construction; about one in five has unrelated row bounds.
pub fn random_lp(seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(0..=4);
    let sense = if rng.random_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
    let mut lp = LinearProgram::new(n, sense);
    let mut inside = vec![0.0; n];
    for j in 0..n {
        let lo = rng.random_range(-2.0..0.5);
        let hi = lo + rng.random_range(0.1..3.0);
        lp.set_var_bounds(j, lo, hi).unwrap();
        inside[j] = rng.random_range(lo..hi);
    }
    lp.set_objective((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let wild = rng.random_bool(0.2);
    for _ in 0..m {
        let row: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
        let act: f64 = row.iter().zip(&inside).map(|(a, y)| a * y).sum();
        let (lo, hi) = if wild {
            let c = rng.random_range(-3.0..3.0);
            (c, c + rng.random_range(0.0..0.5))
        } else {
            (act - rng.random_range(0.0..1.0), act + rng.random_range(0.0..1.0))
        };
        let lo = if rng.random_bool(0.2) { f64::NEG_INFINITY } else { lo };
        let hi = if rng.random_bool(0.2) { f64::INFINITY } else { hi };
        lp.add_row(row, lo, hi).unwrap();
    }
    lp
}
