mod common;

use common::arb_instance;
use judgeflow::fluid::{solve_feedback, solve_overloaded, solve_steady_state};
use judgeflow::QualityParams;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn objective_matches_served_arrivals(inst in arb_instance(4)) {
        let sol = solve_steady_state(&inst).unwrap();
        let served: f64 = inst
            .classes
            .iter()
            .zip(&sol.classes)
            .map(|(p, c)| p.reward * (p.lambda - p.theta * c.q_w))
            .sum();
        prop_assert!(close(sol.objective, served, 1e-9), "{} vs {}", sol.objective, served);
    }

    #[test]
    fn more_capacity_never_hurts(inst in arb_instance(3), pool in 0usize..3, extra in 0.01..5.0f64) {
        let base = solve_steady_state(&inst).unwrap().objective;
        let mut bigger = inst.clone();
        match pool {
            0 => bigger.n_w += extra,
            1 => bigger.n_j += extra,
            _ => bigger.n_h += extra,
        }
        let relaxed = solve_steady_state(&bigger).unwrap().objective;
        prop_assert!(relaxed >= base - 1e-9 * base.abs().max(1.0), "{relaxed} < {base}");
    }

    #[test]
    fn uncapped_model_bounds_the_capped_one(inst in arb_instance(3)) {
        let capped = solve_steady_state(&inst).unwrap().objective;
        let uncapped = solve_overloaded(&inst).unwrap().objective;
        let reward_rate: f64 = inst.classes.iter().map(|c| c.reward * c.lambda).sum();
        prop_assert!(capped <= reward_rate + 1e-9 * reward_rate.max(1.0));
        prop_assert!(uncapped >= 0.0);
    }

    #[test]
    fn counterproductive_judge_gets_nothing(
        inst in arb_instance(3),
        alpha in 0.05..0.6f64,
        beta_i in 0.5..0.9f64,
        beta_ii in 0.55..0.95f64,
    ) {
        let mut inst = inst;
        inst.classes[0].quality = QualityParams::new(alpha, beta_i, beta_ii);
        let sol = solve_steady_state(&inst).unwrap();
        prop_assert_eq!(sol.classes[0].v, 0.0);
        prop_assert_eq!(sol.classes[0].phi, 0.0);
    }

    #[test]
    fn error_free_workers_make_feedback_irrelevant(inst in arb_instance(3), kappa in 0.05..0.95f64) {
        let mut inst = inst;
        for c in inst.classes.iter_mut() {
            c.quality.alpha = 0.0;
            c.kappa = Some(kappa);
            c.lambda = 1000.0;
        }
        let fb = solve_feedback(&inst).unwrap();
        let base = solve_steady_state(&inst).unwrap();
        prop_assert!(close(fb.objective, base.objective, 1e-9), "{} vs {}", fb.objective, base.objective);
        for c in &fb.classes {
            prop_assert!(c.x_fb.abs() <= 1e-9);
        }
    }

    #[test]
    fn feedback_equality_holds_at_every_optimum(inst in arb_instance(3), kappa in 0.05..0.95f64) {
        let mut inst = inst;
        for c in inst.classes.iter_mut() {
            c.kappa = Some(kappa);
        }
        let sol = solve_feedback(&inst).unwrap();
        for (p, c) in inst.classes.iter().zip(&sol.classes) {
            let q = p.quality;
            let expected = q.alpha * (c.x - (1.0 - q.beta_ii) * c.v);
            prop_assert!((c.x_fb - expected).abs() <= 1e-9 * c.x.max(1.0));
        }
    }
}
