mod common;

use common::erlang_a_abandonment;
use judgeflow::experiments::RandomInstanceSpec;
use judgeflow::instance::{presets, ClassParams, Instance, SimSettings};
use judgeflow::policies::{PolicyKind, PolicySpec, Tiebreak};
use judgeflow::simulator::{integerized, run, SimConfig, Simulation};
use judgeflow::QualityParams;
use proptest::prelude::*;

fn config(inst: &Instance, scale_n: u32, seed: u64, feedback: bool) -> SimConfig {
    let mut cfg = SimConfig::new(inst.clone(), &SimSettings::default());
    cfg.scale_n = scale_n;
    cfg.horizon_t = 1e5;
    cfg.warmup = 0.0;
    cfg.seed = seed;
    cfg.feedback = feedback;
    cfg
}

/// Steps `events` times, checking the model-level properties after each one.
fn drive(cfg: SimConfig, policy: PolicySpec, events: u64) -> Result<(), TestCaseError> {
    let n = cfg.scale_n as f64;
    let kind = policy.kind;
    let ceilings: Vec<u64> = policy.targets.iter().map(|x| (n * x).ceil() as u64).collect();
    let mut sim = Simulation::new(cfg, policy).unwrap();
    while sim.events() < events && !sim.is_done() {
        sim.step().unwrap();
        sim.check_invariants().map_err(TestCaseError::fail)?;
        let workers = sim.servers()[0];
        let mut busy = 0;
        let mut waiting = 0;
        for (i, c) in sim.classes().iter().enumerate() {
            for f in [&c.flows, &c.flows_fb] {
                prop_assert_eq!(f.w_to_j + f.w_to_h, f.worker_done, "splitting, class {}", i);
                match kind {
                    PolicyKind::NeverJudge => prop_assert_eq!(f.w_to_j, 0),
                    PolicyKind::AlwaysJudge => prop_assert_eq!(f.w_to_h, 0),
                    _ => {}
                }
            }
            let population = c.arrivals - c.abandonments - c.completions - c.completions_fb - c.removed;
            prop_assert_eq!(population, c.population(), "class {} mass balance", i);
            if kind == PolicyKind::FluidTracking {
                prop_assert!(c.fresh.x <= ceilings[i], "class {i}: X {} above {}", c.fresh.x, ceilings[i]);
            }
            busy += c.fresh.x + c.fb.x;
            waiting += c.fresh.q_w + c.fb.q_w;
        }
        if kind.is_greedy() && waiting > 0 {
            prop_assert_eq!(busy, workers, "idle worker with {} waiting", waiting);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn baseline_properties_hold_after_every_event(
        id in 0usize..500,
        seed in any::<u64>(),
        scale in 1u32..4,
        which in 0usize..4,
        tiebreak in 0usize..3,
    ) {
        let inst = RandomInstanceSpec::default().sample(id);
        let kind = [
            PolicyKind::FluidTracking,
            PolicyKind::GreedyOptimal,
            PolicyKind::AlwaysJudge,
            PolicyKind::NeverJudge,
        ][which];
        let tb = [Tiebreak::RoundRobin, Tiebreak::Fcfs, Tiebreak::MaxDeficit][tiebreak];
        let policy = PolicySpec::for_instance(kind, &integerized(&inst, scale), false)
            .unwrap()
            .with_tiebreak(tb);
        drive(config(&inst, scale, seed, false), policy, 20_000)?;
    }

    #[test]
    fn feedback_properties_hold_after_every_event(
        id in 0usize..500,
        seed in any::<u64>(),
        kappa in 0.1..0.9f64,
        which in 0usize..4,
    ) {
        let mut inst = RandomInstanceSpec::default().sample(id);
        for c in inst.classes.iter_mut() {
            c.kappa = Some(kappa);
        }
        let kind = [
            PolicyKind::FluidTrackingFeedback,
            PolicyKind::GreedyOptimal,
            PolicyKind::AlwaysJudge,
            PolicyKind::NeverJudge,
        ][which];
        let policy = PolicySpec::for_instance(kind, &integerized(&inst, 2), true).unwrap();
        drive(config(&inst, 2, seed, true), policy, 20_000)?;
    }

    #[test]
    fn identical_seeds_reproduce_metrics(id in 0usize..500, seed in any::<u64>()) {
        let inst = RandomInstanceSpec::default().sample(id);
        let policy = PolicySpec::for_instance(PolicyKind::FluidTracking, &integerized(&inst, 2), false).unwrap();
        let mut cfg = config(&inst, 2, seed, false);
        cfg.horizon_t = 30.0;
        cfg.warmup = 5.0;
        let a = run(&cfg, &policy).unwrap();
        let b = run(&cfg, &policy).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

fn erlang_instance(lambda: f64, theta: f64, mu: f64, servers: f64) -> Instance {
    Instance {
        classes: vec![ClassParams {
            lambda,
            theta,
            mu_w: mu,
            mu_j: 1.0,
            mu_h: 5.0,
            reward: 1.0,
            quality: QualityParams::new(0.0, 0.2, 0.1),
            kappa: None,
        }],
        n_w: servers,
        n_j: 1.0,
        n_h: 10.0 * servers,
    }
}

#[test]
fn worker_pool_is_an_erlang_a_queue() {
    for (lambda, theta, mu, servers) in [(6.0, 0.5, 1.0, 5.0), (3.0, 2.0, 1.5, 2.0), (8.0, 0.2, 2.0, 3.0)] {
        let inst = erlang_instance(lambda, theta, mu, servers);
        let analytic = erlang_a_abandonment(lambda, mu, theta, servers as usize);
        let policy = PolicySpec::for_instance(PolicyKind::NeverJudge, &inst, false).unwrap();
        let reps = 16;
        let fractions: Vec<f64> = (0..reps)
            .map(|r| {
                let mut cfg = config(&inst, 1, 500 + r, false);
                cfg.horizon_t = 1500.0;
                cfg.warmup = 100.0;
                run(&cfg, &policy).unwrap().abandonment_fraction()
            })
            .collect();
        let mean = fractions.iter().sum::<f64>() / reps as f64;
        let sd = (fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "lambda {lambda}: simulated {mean} vs analytic {analytic} (se {se})"
        );
    }
}

#[test]
fn erlang_oracle_limits() {
    // No queueing when servers are plentiful; everyone beyond capacity leaves when service is slow.
    assert!(erlang_a_abandonment(1.0, 1.0, 1.0, 50) < 1e-12);
    let heavy = erlang_a_abandonment(1000.0, 1.0, 1.0, 1);
    assert!(heavy > 0.99);

    // With theta = mu every task leaves at the same rate wherever it sits, so
    // the count is Poisson(lambda / mu).
    let (lambda, mu, c) = (7.0f64, 1.0f64, 4usize);
    let mut p = (-lambda / mu).exp();
    let mut excess = 0.0;
    for k in 1..200usize {
        p *= lambda / mu / k as f64;
        excess += k.saturating_sub(c) as f64 * p;
    }
    let expected = mu * excess / lambda;
    assert!((erlang_a_abandonment(lambda, mu, mu, c) - expected).abs() < 1e-12);
}

#[test]
fn throughput_scales_with_n() {
    let inst = presets::single_class(6.5);
    let policy = |n| PolicySpec::for_instance(PolicyKind::FluidTracking, &integerized(&inst, n), false).unwrap();
    let rate = |n: u32| {
        let mut cfg = config(&inst, n, 3, false);
        cfg.horizon_t = 200.0;
        cfg.warmup = 40.0;
        run(&cfg, &policy(n)).unwrap().throughput_rate
    };
    let (small, large) = (rate(5), rate(20));
    assert!((small - large).abs() / large < 0.05, "{small} vs {large}");
}
