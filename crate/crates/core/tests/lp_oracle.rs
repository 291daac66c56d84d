mod common;

use common::{random_bounded_lp, rel_err, vertex_enumeration};
use judgeflow::lp::{solve_lp, LpProblem, LpStatus, Relation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn agrees_with_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut infeasible = 0;
    for case in 0..400 {
        let p = random_bounded_lp(&mut rng);
        let s = solve_lp(&p).unwrap();
        match vertex_enumeration(&p) {
            None => {
                assert_eq!(s.status, LpStatus::Infeasible, "case {case}: {p:?}");
                infeasible += 1;
            }
            Some(best) => {
                assert_eq!(s.status, LpStatus::Optimal, "case {case}: {p:?}");
                assert!(rel_err(s.objective_value, best) < 1e-8, "case {case}");
                assert!(p.max_violation(&s.values) < 1e-8, "case {case}");
            }
        }
    }
    assert!(infeasible > 0 && infeasible < 300);
}

#[test]
fn objective_reevaluation_and_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let p = random_bounded_lp(&mut rng);
        let s = solve_lp(&p).unwrap();
        if !s.is_optimal() {
            continue;
        }
        assert!((p.evaluate(&s.values) - s.objective_value).abs() <= 1e-12);

        let mut scaled = p.clone();
        scaled.objective.iter_mut().for_each(|c| *c *= 3.5);
        for c in scaled.constraints.iter_mut() {
            c.coeffs.iter_mut().for_each(|a| *a *= 3.5);
            c.rhs *= 3.5;
        }
        let t = solve_lp(&scaled).unwrap();
        for (a, b) in s.values.iter().zip(&t.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn deterministic() {
    let mut p = LpProblem::new(vec![1.0, 1.0, 1.0]);
    p.add(vec![1.0, 1.0, 1.0], Relation::Le, 2.0);
    p.add(vec![1.0, -1.0, 0.0], Relation::Le, 0.5);
    let a = solve_lp(&p).unwrap();
    let b = solve_lp(&p).unwrap();
    assert_eq!(a, b);
}
