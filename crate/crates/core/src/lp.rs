//! Small dense linear programs with bounded variables.
//!
//! Solves `optimize c^T y` subject to `row_lower <= A y <= row_upper` and
//! `var_lower <= y <= var_upper` with a two-phase primal simplex on a dense
//! tableau. Every constraint row gets a logical variable `r = A y`, so all
//! constraints become variable bounds on `[A, -I] (y, r) = 0`. Phase one
//! drives artificial columns to zero; Bland's smallest-index rule is used for
//! both the entering and the leaving choice, which makes the pivot sequence a
//! pure function of the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-10;
const BOUND_CLAMP_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    sense: Sense,
    rows: Vec<Vec<f64>>,
    row_lower: Vec<f64>,
    row_upper: Vec<f64>,
    var_lower: Vec<f64>,
    var_upper: Vec<f64>,
}

impl LinearProgram {
    /// A program over `num_vars` variables bounded to `[0, 1]` with a zero
    /// objective.
    pub fn new(num_vars: usize, sense: Sense) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            sense,
            rows: Vec::new(),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
            var_lower: vec![0.0; num_vars],
            var_upper: vec![1.0; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row_bounds(&self, i: usize) -> (f64, f64) {
        (self.row_lower[i], self.row_upper[i])
    }

    pub fn var_bounds(&self, j: usize) -> (f64, f64) {
        (self.var_lower[j], self.var_upper[j])
    }

    pub fn set_sense(&mut self, sense: Sense) {
        self.sense = sense;
    }

    pub fn set_objective(&mut self, c: Vec<f64>) -> Result<()> {
        if c.len() != self.num_vars() {
            return Err(Error::Dimension(format!("objective has {} entries, expected {}", c.len(), self.num_vars())));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("objective coefficients must be finite".into()));
        }
        self.objective = c;
        Ok(())
    }

    pub fn set_var_bounds(&mut self, j: usize, lower: f64, upper: f64) -> Result<()> {
        if j >= self.num_vars() {
            return Err(Error::Dimension(format!("variable {j} out of range")));
        }
        check_bounds(lower, upper)?;
        self.var_lower[j] = lower;
        self.var_upper[j] = upper;
        Ok(())
    }

    /// Appends `lower <= coeffs . y <= upper`; either side may be infinite.
    pub fn add_row(&mut self, coeffs: Vec<f64>, lower: f64, upper: f64) -> Result<usize> {
        if coeffs.len() != self.num_vars() {
            return Err(Error::Dimension(format!("row has {} entries, expected {}", coeffs.len(), self.num_vars())));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("row coefficients must be finite".into()));
        }
        check_bounds(lower, upper)?;
        self.rows.push(coeffs);
        self.row_lower.push(lower);
        self.row_upper.push(upper);
        Ok(self.rows.len() - 1)
    }

    /// Largest violation of any row or variable bound by `y`.
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (j, &v) in y.iter().enumerate() {
            worst = worst.max(self.var_lower[j] - v).max(v - self.var_upper[j]);
        }
        for (i, row) in self.rows.iter().enumerate() {
            let act: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
            worst = worst.max(self.row_lower[i] - act).max(act - self.row_upper[i]);
        }
        worst
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(a, b)| a * b).sum()
    }
}

fn check_bounds(lower: f64, upper: f64) -> Result<()> {
    if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
        return Err(Error::Input(format!("invalid bounds [{lower}, {upper}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective_value: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
}

fn pow2_scale(x: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        2f64.powi(-(x.log2().round() as i32))
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NonBasic {
    Lower,
    Upper,
    /// Free variable parked at zero.
    Zero,
}

struct Tableau {
    m: usize,
    ncols: usize,
    t: Vec<f64>, // row-major m x ncols
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    state: Vec<NonBasic>,
    enterable: Vec<bool>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.ncols + j]
    }

    fn recompute_basics(&mut self) {
        for i in 0..self.m {
            let mut v = 0.0;
            for j in 0..self.ncols {
                if !self.is_basic[j] && self.x[j] != 0.0 {
                    v -= self.at(i, j) * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.ncols;
        let piv = self.t[r * n + q];
        for j in 0..n {
            self.t[r * n + j] /= piv;
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f != 0.0 {
                for j in 0..n {
                    self.t[i * n + j] -= f * self.t[r * n + j];
                }
                self.t[i * n + q] = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    /// Minimizes `cost . x` from the current basic feasible point.
    fn run(&mut self, cost: &[f64]) -> Result<Outcome> {
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Err(Error::Input("simplex iteration limit reached".into()));
            }
            self.recompute_basics();

            // Bland: first improving column
            let mut entering = None;
            for j in 0..self.ncols {
                if self.is_basic[j] || !self.enterable[j] {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..self.m {
                    let cb = cost[self.basis[i]];
                    if cb != 0.0 {
                        d -= cb * self.at(i, j);
                    }
                }
                let dir = match self.state[j] {
                    NonBasic::Lower if d < -OPTIMALITY_TOL && self.upper[j] > self.lower[j] => 1.0,
                    NonBasic::Upper if d > OPTIMALITY_TOL && self.upper[j] > self.lower[j] => -1.0,
                    NonBasic::Zero if d.abs() > OPTIMALITY_TOL => -d.signum(),
                    _ => continue,
                };
                entering = Some((j, dir));
                break;
            }
            let Some((q, dir)) = entering else {
                return Ok(Outcome::Optimal);
            };

            // ratio test; ties go to the smallest variable index
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = dir * self.at(i, q);
                let b = self.basis[i];
                let limit = if alpha > PIVOT_TOL {
                    if self.lower[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    ((self.x[b] - self.lower[b]) / alpha).max(0.0)
                } else if alpha < -PIVOT_TOL {
                    if self.upper[b] == f64::INFINITY {
                        continue;
                    }
                    ((self.upper[b] - self.x[b]) / -alpha).max(0.0)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < step || (limit == step && step.is_finite()),
                    Some((r, _)) => limit < step || (limit == step && b < self.basis[r]),
                };
                if better {
                    step = limit;
                    leave = Some((i, alpha));
                }
            }
            if step == f64::INFINITY {
                return Ok(Outcome::Unbounded);
            }
            self.iterations += 1;
            match leave {
                None => {
                    // bound flip
                    self.state[q] = if dir > 0.0 { NonBasic::Upper } else { NonBasic::Lower };
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, alpha)) => {
                    let b = self.basis[r];
                    self.state[b] = if alpha > 0.0 { NonBasic::Lower } else { NonBasic::Upper };
                    self.x[b] = if alpha > 0.0 { self.lower[b] } else { self.upper[b] };
                    self.x[q] += dir * step;
                    self.pivot(r, q);
                }
            }
        }
    }
}

/// Solves the program. Infeasible and unbounded programs are reported through
/// [`LpStatus`]; only malformed input produces an error.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    let m = lp.num_rows();

    // column scaling: y = col_scale * y'
    let mut row_scale = vec![1.0; m];
    for i in 0..m {
        let bound_mag = [lp.row_lower[i], lp.row_upper[i]]
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let coef_mag = lp.rows[i].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        row_scale[i] = pow2_scale(if bound_mag > 1e-300 { bound_mag } else { coef_mag });
    }
    let mut col_scale = vec![1.0; n];
    for j in 0..n {
        let mag = (0..m).fold(0.0_f64, |acc, i| acc.max((lp.rows[i][j] * row_scale[i]).abs()));
        // y' = y / col_scale, so scaled coefficients are a * col_scale
        col_scale[j] = pow2_scale(mag);
    }

    // columns: structurals [0, n), logicals [n, n + m), artificials [n + m, n + 2m)
    let ncols = n + 2 * m;
    let mut lower = vec![0.0; ncols];
    let mut upper = vec![0.0; ncols];
    for j in 0..n {
        lower[j] = lp.var_lower[j] / col_scale[j];
        upper[j] = lp.var_upper[j] / col_scale[j];
    }
    for i in 0..m {
        lower[n + i] = lp.row_lower[i] * row_scale[i];
        upper[n + i] = lp.row_upper[i] * row_scale[i];
        lower[n + m + i] = 0.0;
        upper[n + m + i] = f64::INFINITY;
    }

    let mut x = vec![0.0; ncols];
    let mut state = vec![NonBasic::Lower; ncols];
    for j in 0..n {
        (x[j], state[j]) = if lower[j].is_finite() {
            (lower[j], NonBasic::Lower)
        } else if upper[j].is_finite() {
            (upper[j], NonBasic::Upper)
        } else {
            (0.0, NonBasic::Zero)
        };
    }

    let scaled = |i: usize, j: usize| lp.rows[i][j] * row_scale[i] * col_scale[j];
    let mut t = vec![0.0; m * ncols];
    let mut basis = vec![0; m];
    let mut is_basic = vec![false; ncols];
    let mut enterable = vec![true; ncols];
    let mut phase_one_needed = false;
    for i in 0..m {
        let act: f64 = (0..n).map(|j| scaled(i, j) * x[j]).sum();
        let (lo, hi) = (lower[n + i], upper[n + i]);
        let tol = FEASIBILITY_TOL * (1.0 + act.abs());
        let (basic_col, sign) = if act >= lo - tol && act <= hi + tol {
            // logical is basic: row of B^{-1} M is -(row of M)
            upper[n + m + i] = 0.0;
            enterable[n + m + i] = false;
            (n + i, -1.0)
        } else {
            let target = if act < lo { lo } else { hi };
            x[n + i] = target;
            state[n + i] = if act < lo { NonBasic::Lower } else { NonBasic::Upper };
            phase_one_needed = true;
            // sigma a = r - A y
            let sigma = if target > act { 1.0 } else { -1.0 };
            (n + m + i, sigma)
        };
        let row = &mut t[i * ncols..(i + 1) * ncols];
        for j in 0..n {
            row[j] = scaled(i, j) / sign;
        }
        row[n + i] = -1.0 / sign;
        // artificial column sigma e_i; when the logical is basic the
        // artificial is fixed at zero and its column is irrelevant
        row[n + m + i] = if basic_col == n + m + i { 1.0 } else { 0.0 };
        basis[i] = basic_col;
        is_basic[basic_col] = true;
    }

    let mut tab = Tableau { m, ncols, t, lower, upper, x, basis, is_basic, state, enterable, iterations: 0 };

    if phase_one_needed {
        let mut cost = vec![0.0; ncols];
        for c in cost.iter_mut().skip(n + m) {
            *c = 1.0;
        }
        tab.run(&cost)?;
        tab.recompute_basics();
        let infeas: f64 = (n + m..ncols).map(|j| tab.x[j].abs()).sum();
        if infeas > FEASIBILITY_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective_value: f64::NAN,
                values: unscale(&tab.x[..n], &col_scale, lp),
                iterations: tab.iterations,
            });
        }
    }
    for j in n + m..ncols {
        tab.upper[j] = 0.0;
        tab.enterable[j] = false;
        if !tab.is_basic[j] {
            tab.x[j] = 0.0;
            tab.state[j] = NonBasic::Lower;
        }
    }

    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; ncols];
    let cmax = (0..n).fold(0.0_f64, |acc, j| acc.max((lp.objective[j] * col_scale[j]).abs()));
    let cnorm = pow2_scale(cmax);
    for j in 0..n {
        cost[j] = sign * lp.objective[j] * col_scale[j] * cnorm;
    }
    let outcome = tab.run(&cost)?;
    tab.recompute_basics();
    let values = unscale(&tab.x[..n], &col_scale, lp);
    match outcome {
        Outcome::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective_value: sign * -f64::INFINITY,
            values,
            iterations: tab.iterations,
        }),
        Outcome::Optimal => Ok(LpSolution {
            status: LpStatus::Optimal,
            objective_value: lp.objective_value(&values),
            values,
            iterations: tab.iterations,
        }),
    }
}

fn unscale(xs: &[f64], col_scale: &[f64], lp: &LinearProgram) -> Vec<f64> {
    xs.iter()
        .zip(col_scale)
        .enumerate()
        .map(|(j, (v, s))| {
            let y = v * s;
            let (lo, hi) = (lp.var_lower[j], lp.var_upper[j]);
            if y < lo && y >= lo - BOUND_CLAMP_TOL * (1.0 + lo.abs()) {
                lo
            } else if y > hi && y <= hi + BOUND_CLAMP_TOL * (1.0 + hi.abs()) {
                hi
            } else {
                y
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_variable_box() {
        let mut lp = LinearProgram::new(1, Sense::Maximize);
        lp.set_objective(vec![1.0]).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective_value, 1.0);
    }

    #[test]
    fn two_variable_vertex() {
        let mut lp = LinearProgram::new(2, Sense::Maximize);
        lp.set_objective(vec![1.0, 1.0]).unwrap();
        lp.add_row(vec![1.0, 2.0], f64::NEG_INFINITY, 1.0).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective_value, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.values[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(2, Sense::Minimize);
        lp.add_row(vec![1.0, 1.0], 3.0, f64::INFINITY).unwrap();
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(2, Sense::Maximize);
        lp.set_var_bounds(0, 0.0, f64::INFINITY).unwrap();
        lp.set_objective(vec![1.0, 0.0]).unwrap();
        lp.add_row(vec![1.0, -1.0], f64::NEG_INFINITY, 1.0).unwrap();
        lp.set_var_bounds(1, 0.0, f64::INFINITY).unwrap();
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables() {
        // min x s.t. x >= -2 via row, x free
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.set_var_bounds(0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        lp.set_objective(vec![1.0]).unwrap();
        lp.add_row(vec![1.0], -2.0, f64::INFINITY).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective_value, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_rows_and_badly_scaled_coefficients() {
        // y0 + 1e-6 y1 = 0.5e-6 with y in [0,1]; max y1
        let mut lp = LinearProgram::new(2, Sense::Maximize);
        lp.set_objective(vec![0.0, 1.0]).unwrap();
        lp.add_row(vec![1.0, 1e-6], 0.5e-6, 0.5e-6).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective_value, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let mut lp = LinearProgram::new(2, Sense::Maximize);
        assert!(matches!(lp.add_row(vec![1.0], 0.0, 1.0), Err(Error::Dimension(_))));
        assert!(matches!(lp.set_objective(vec![1.0; 3]), Err(Error::Dimension(_))));
        assert!(lp.add_row(vec![1.0, 1.0], 2.0, 1.0).is_err());
    }
}
