//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use judgeflow::instance::{ClassParams, Instance};
use judgeflow::lp::{LpProblem, Relation};
use judgeflow::QualityParams;
use proptest::prelude::*;
use rand::Rng;

/// Maximum objective over all basic feasible solutions, found by solving
/// every square subsystem of active constraints. `None` when no vertex is
/// feasible.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.num_vars();
    let mut eq_rows = Vec::new();
    let mut ineq_rows = Vec::new();
    for c in &p.constraints {
        let row = (c.coeffs.clone(), c.rhs);
        match c.relation {
            Relation::Eq => eq_rows.push(row),
            _ => ineq_rows.push(row),
        }
    }
    for (j, b) in p.bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        ineq_rows.push((e.clone(), b.lower));
        if let Some(u) = b.upper {
            ineq_rows.push((e, u));
        }
    }
    if eq_rows.len() > n {
        return None;
    }
    let k = n - eq_rows.len();
    let mut best: Option<f64> = None;
    for subset in combinations(ineq_rows.len(), k) {
        let mut a: Vec<Vec<f64>> = eq_rows.iter().map(|r| r.0.clone()).collect();
        let mut b: Vec<f64> = eq_rows.iter().map(|r| r.1).collect();
        for &s in &subset {
            a.push(ineq_rows[s].0.clone());
            b.push(ineq_rows[s].1);
        }
        let Some(x) = gauss_solve(a, b) else { continue };
        if p.max_violation(&x) > 1e-7 {
            continue;
        }
        let z = p.evaluate(&x);
        best = Some(best.map_or(z, |bz: f64| bz.max(z)));
    }
    best
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// A random LP over a box, so it is never unbounded. Small integer
/// coefficients make degenerate vertices common.
pub fn random_bounded_lp<R: Rng>(rng: &mut R) -> LpProblem {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=6);
    let objective = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
    let mut p = LpProblem::new(objective);
    let mut n_eq = 0;
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=6) as f64).collect();
        let relation = match rng.random_range(0..10) {
            0 | 1 => Relation::Ge,
            2 if n_eq < 1 => {
                n_eq += 1;
                Relation::Eq
            }
            _ => Relation::Le,
        };
        let rhs = if rng.random_bool(0.5) {
            rng.random_range(-2..=12) as f64
        } else {
            rng.random_range(-2.0..12.0)
        };
        p.add(coeffs, relation, rhs);
    }
    for j in 0..n {
        if rng.random_bool(0.3) {
            p.bounds[j].lower = rng.random_range(-3.0..1.0);
        }
        p.set_upper(j, rng.random_range(2.0..10.0));
    }
    p
}

/// Relative objective error used for solver comparisons.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Long-run abandonment fraction of an M/M/c+M queue, from the birth-death
/// chain truncated once the stationary tail is negligible. Weights are kept
/// in log space so heavy loads do not overflow.
pub fn erlang_a_abandonment(lambda: f64, mu: f64, theta: f64, servers: usize) -> f64 {
    assert!(theta > 0.0);
    let mut log_w = vec![0.0f64];
    let mut peak = 0.0f64;
    let mut k = 0usize;
    loop {
        k += 1;
        let death = k.min(servers) as f64 * mu + k.saturating_sub(servers) as f64 * theta;
        let lw = log_w[k - 1] + (lambda / death).ln();
        log_w.push(lw);
        peak = peak.max(lw);
        if death > lambda && lw < peak - 50.0 {
            break;
        }
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = w.iter().sum();
    let queued: f64 = w
        .iter()
        .enumerate()
        .map(|(k, w)| k.saturating_sub(servers) as f64 * w)
        .sum();
    theta * queued / total / lambda
}

/// Valid instances with 1 to `max_classes` classes and moderate rates.
pub fn arb_instance(max_classes: usize) -> impl Strategy<Value = Instance> {
    let class = (
        (0.5..100.0f64, 0.05..2.0f64, 0.5..40.0f64, 1.0..40.0f64, 0.5..20.0f64, 0.5..2.0f64),
        (0.0..0.6f64, 0.0..0.5f64, 0.0..0.5f64),
    )
        .prop_map(|((lambda, theta, mu_w, mu_j, mu_h, reward), (alpha, beta_i, beta_ii))| ClassParams {
            lambda,
            theta,
            mu_w,
            mu_j,
            mu_h,
            reward,
            quality: QualityParams::new(alpha, beta_i, beta_ii),
            kappa: None,
        });
    (prop::collection::vec(class, 1..=max_classes), 0.5..20.0f64, 0.5..10.0f64, 0.5..20.0f64)
        .prop_map(|(classes, n_w, n_j, n_h)| Instance { classes, n_w, n_j, n_h })
}
