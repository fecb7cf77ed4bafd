mod common;

use proptest::prelude::*;

use tfqkd::lp::{solve, LinearProgram, LpStatus, Sense};

use common::{random_lp, vertex_enumeration};

#[test]
fn matches_vertex_enumeration() {
    let mut infeasible = 0;
    for seed in 0..1000 {
        let lp = random_lp(seed);
        let sol = solve(&lp).unwrap();
        match vertex_enumeration(&lp) {
            Some(v) => {
                assert_eq!(sol.status, LpStatus::Optimal, "seed {seed}");
                assert!((sol.objective_value - v).abs() <= 1e-8 * (1.0 + v.abs()), "seed {seed}: {} vs {v}", sol.objective_value);
            }
            None => {
                assert_eq!(sol.status, LpStatus::Infeasible, "seed {seed}");
                infeasible += 1;
            }
        }
    }
    // both branches are exercised
    assert!(infeasible > 0 && infeasible < 500);
}

#[test]
fn solve_is_deterministic() {
    for seed in 0..50 {
        let lp = random_lp(seed);
        // Debug text, since infeasible solutions carry a NaN objective
        assert_eq!(format!("{:?}", solve(&lp).unwrap()), format!("{:?}", solve(&lp).unwrap()));
    }
}

fn negated(lp: &LinearProgram) -> LinearProgram {
    let mut out = lp.clone();
    out.set_objective(lp.objective().iter().map(|c| -c).collect()).unwrap();
    out.set_sense(match lp.sense() {
        Sense::Maximize => Sense::Minimize,
        Sense::Minimize => Sense::Maximize,
    });
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn optimum_beats_every_feasible_point(seed in any::<u64>(), probes in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 6), 20)) {
        let lp = random_lp(seed);
        let sol = solve(&lp).unwrap();
        if sol.status != LpStatus::Optimal {
            return Ok(());
        }
        for u in probes {
            let y: Vec<f64> = (0..lp.num_vars()).map(|j| {
                let (lo, hi) = lp.var_bounds(j);
                lo + u[j] * (hi - lo)
            }).collect();
            if lp.max_violation(&y) > 0.0 {
                continue;
            }
            let v = lp.objective_value(&y);
            match lp.sense() {
                Sense::Maximize => prop_assert!(sol.objective_value >= v - 1e-9),
                Sense::Minimize => prop_assert!(sol.objective_value <= v + 1e-9),
            }
        }
    }

    #[test]
    fn solutions_respect_bounds(seed in any::<u64>()) {
        let lp = random_lp(seed);
        let sol = solve(&lp).unwrap();
        if sol.status == LpStatus::Optimal {
            for (j, &v) in sol.values.iter().enumerate() {
                let (lo, hi) = lp.var_bounds(j);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            prop_assert!(lp.max_violation(&sol.values) <= 1e-8);
            prop_assert!((lp.objective_value(&sol.values) - sol.objective_value).abs() <= 1e-9);
        }
    }

    #[test]
    fn negated_objective_flips_sign(seed in any::<u64>()) {
        let lp = random_lp(seed);
        let a = solve(&lp).unwrap();
        let b = solve(&negated(&lp)).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.status == LpStatus::Optimal {
            prop_assert!((a.objective_value + b.objective_value).abs() <= 1e-9 * (1.0 + a.objective_value.abs()));
        }
    }
}
