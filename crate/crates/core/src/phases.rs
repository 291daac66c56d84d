//! Closed-form regime analysis for one and two classes, with cross-checks
//! against the fluid LP.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{routing_fraction, solve_overloaded, solve_steady_state};
use crate::instance::Instance;
use crate::quality::PROB_TOL;

/// Active-judge cutoff used when reading allocations off the LP.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Capacities expressed in worker-output units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCapacities {
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_eff")]
    pub j_eff: f64,
}

impl NormalizedCapacities {
    pub fn new(mu_w: f64, mu_j: f64, mu_h: f64, n_w: f64, n_j: f64, n_h: f64) -> Self {
        let j = mu_j / mu_w * n_j;
        NormalizedCapacities {
            h: mu_h / mu_w * n_h,
            j,
            j_eff: n_w.min(j),
        }
    }
}

/// Human-capacity thresholds separating the four single-class phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleClassThresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl SingleClassThresholds {
    pub fn new(ratio_wh: f64, n_w: f64, j_eff: f64, p_pass: f64) -> Self {
        let t1 = ratio_wh * (p_pass * j_eff);
        let t3 = ratio_wh * n_w;
        // n_w - p_rej J_eff, grouped so rounding cannot reorder t1 <= t2 <= t3.
        let t2 = (ratio_wh * ((n_w - j_eff) + p_pass * j_eff)).max(t1).min(t3);
        SingleClassThresholds { t1, t2, t3 }
    }

    pub fn phase(&self, n_h: f64) -> u8 {
        if n_h <= self.t1 {
            1
        } else if n_h <= self.t2 {
            2
        } else if n_h <= self.t3 {
            3
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    LimitedWorkers,
    AbundantWorkers,
    Counterproductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ClosedForm,
    /// Arrivals cannot keep the workers busy; only LP results apply.
    NotOverloaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub verdict: Verdict,
    pub n_h: f64,
    pub capacities: NormalizedCapacities,
    pub thresholds: SingleClassThresholds,
    /// Transition point of the abundant-worker structure.
    pub t_aw: f64,
    pub regime: Option<Regime>,
    pub phase: Option<u8>,
    pub phi_star: Option<f64>,
    pub x_star: Option<f64>,
    pub v_star: Option<f64>,
    /// The judge neither helps nor hurts; phi = 0 is chosen among the optima.
    pub knife_edge: bool,
    pub phi_lp: f64,
}

/// Closed-form optimum `(x, v)` of the four-phase structure. Valid for any
/// `J_eff <= n_w`.
pub fn four_phase_allocation(caps: &NormalizedCapacities, n_w: f64, p_pass: f64) -> (u8, f64, f64) {
    let p_rej = 1.0 - p_pass;
    let (h, je) = (caps.h, caps.j_eff);
    if h <= p_pass * je {
        (1, h / p_pass, h / p_pass)
    } else if h <= n_w - p_rej * je {
        (2, h + p_rej * je, je)
    } else if h <= n_w {
        (3, n_w, (n_w - h) / p_rej)
    } else {
        (4, n_w, 0.0)
    }
}

/// Closed-form optimum `(x, v)` when `n_w >= H + p_rej J`.
pub fn abundant_allocation(caps: &NormalizedCapacities, p_pass: f64) -> (u8, f64, f64) {
    let (h, j) = (caps.h, caps.j);
    if h <= p_pass * j {
        (1, h / p_pass, h / p_pass)
    } else {
        (2, h + (1.0 - p_pass) * j, j)
    }
}

pub fn abundant_phi(caps: &NormalizedCapacities, p_pass: f64) -> f64 {
    let (_, x, v) = abundant_allocation(caps, p_pass);
    routing_fraction(v, x)
}

pub fn single_class_phase(inst: &Instance) -> Result<PhaseReport> {
    if inst.num_classes() != 1 {
        return Err(Error::Usage(format!(
            "single-class analysis needs exactly 1 class, got {}",
            inst.num_classes()
        )));
    }
    inst.validate()?;
    let c = &inst.classes[0];
    let d = c.derived(0)?;
    let caps = NormalizedCapacities::new(c.mu_w, c.mu_j, c.mu_h, inst.n_w, inst.n_j, inst.n_h);
    let ratio = c.mu_w / c.mu_h;
    let thresholds = SingleClassThresholds::new(ratio, inst.n_w, caps.j_eff, d.p_pass);
    let lp = solve_steady_state(inst)?;
    let alpha = c.quality.alpha;
    let knife_edge = d.p_pass > 0.0 && (d.q_acc - (1.0 - alpha)).abs() <= PROB_TOL;
    let mut report = PhaseReport {
        verdict: Verdict::ClosedForm,
        n_h: inst.n_h,
        capacities: caps,
        thresholds,
        t_aw: ratio * d.p_pass * caps.j,
        regime: None,
        phase: None,
        phi_star: None,
        x_star: None,
        v_star: None,
        knife_edge,
        phi_lp: lp.classes[0].phi,
    };
    let overloaded = alpha >= 1.0 || c.lambda / (c.mu_w * (1.0 - alpha)) >= inst.n_w;
    if !overloaded {
        report.verdict = Verdict::NotOverloaded;
        return Ok(report);
    }
    let abundant = inst.n_w >= caps.h + d.p_rej * caps.j;
    if !d.judge_improves && !knife_edge {
        report.regime = Some(Regime::Counterproductive);
        report.phi_star = Some(0.0);
        return Ok(report);
    }
    let (phase, x, v) = if abundant {
        report.regime = Some(Regime::AbundantWorkers);
        abundant_allocation(&caps, d.p_pass)
    } else {
        report.regime = Some(Regime::LimitedWorkers);
        four_phase_allocation(&caps, inst.n_w, d.p_pass)
    };
    report.phase = Some(phase);
    if knife_edge {
        report.phi_star = Some(0.0);
    } else {
        report.x_star = Some(x);
        report.v_star = Some(v);
        report.phi_star = Some(routing_fraction(v, x));
    }
    Ok(report)
}

/// Class labels in this report are 1-based. The closed forms describe the
/// model with backlogged work queues (no per-class arrival cap binds); the
/// `overloaded` flags record whether the instance itself guarantees that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoClassReport {
    pub n_h: f64,
    pub overloaded: [bool; 2],
    pub p_pass: [f64; 2],
    pub p_rej: [f64; 2],
    pub q_acc: [f64; 2],
    pub eta: [f64; 2],
    /// `p_rej - beta_I`, the judge's net value per unit of routed work.
    pub c: [f64; 2],
    pub k_q: usize,
    pub k_eta: usize,
    pub k_c: usize,
    /// `J_eff` is shared by both classes.
    pub capacities: NormalizedCapacities,
    pub lower_threshold: f64,
    pub upper_threshold: f64,
    /// Above this point only `k_eta` receives judge capacity.
    pub worker_binding_threshold: f64,
    /// Above this point the judge is bypassed.
    pub bypass_threshold: f64,
    pub complementarity_interval: Option<(f64, f64)>,
    pub worker_binding: bool,
    /// Same class ranks first on both indices; no reversal.
    pub degenerate: bool,
    /// Interior allocation `(v_1, v_2)` when `n_h` lies in the interval.
    pub interior: Option<(f64, f64)>,
}

impl TwoClassReport {
    /// Classes (0-based) that must receive judge capacity at `n_h`, where the
    /// closed forms make a prediction.
    pub fn predicted_active(&self, n_h: f64) -> Option<Vec<usize>> {
        let (kq, ke) = (self.k_q - 1, self.k_eta - 1);
        if self.degenerate {
            return None;
        }
        if n_h >= self.bypass_threshold {
            return Some(vec![]);
        }
        if n_h <= self.lower_threshold {
            return Some(vec![kq]);
        }
        if let Some((a, b)) = self.complementarity_interval {
            if n_h > a && n_h < b {
                return Some(vec![0, 1]);
            }
            if self.worker_binding && n_h <= a {
                return Some(vec![kq]);
            }
        }
        if n_h >= self.worker_binding_threshold || (!self.worker_binding && n_h >= self.upper_threshold) {
            return Some(vec![ke]);
        }
        None
    }
}

fn argmax(v: [f64; 2]) -> usize {
    if v[1] > v[0] {
        1
    } else {
        0
    }
}

pub fn two_class_report(inst: &Instance) -> Result<TwoClassReport> {
    if inst.num_classes() != 2 {
        return Err(Error::Usage(format!(
            "two-class analysis needs exactly 2 classes, got {}",
            inst.num_classes()
        )));
    }
    inst.validate()?;
    let (a, b) = (&inst.classes[0], &inst.classes[1]);
    let same = |x: f64, y: f64| (x - y).abs() <= PROB_TOL * x.abs().max(1.0);
    if !same(a.mu_w, b.mu_w) || !same(a.quality.alpha, b.quality.alpha) {
        return Err(Error::precondition(
            "two-class analysis: classes must share mu_w and alpha",
        ));
    }
    if !same(a.mu_j, b.mu_j) || !same(a.mu_h, b.mu_h) || !same(a.reward, b.reward) {
        return Err(Error::precondition(
            "two-class analysis: classes must share mu_j, mu_h and reward for a common J_eff and H",
        ));
    }
    let alpha = a.quality.alpha;
    let overloaded = [0, 1].map(|i| {
        let c = &inst.classes[i];
        alpha >= 1.0 || c.lambda / (c.mu_w * (1.0 - alpha)) >= inst.n_w
    });
    let d = inst.derived()?;
    for (i, di) in d.iter().enumerate() {
        if !di.judge_improves {
            return Err(Error::precondition(format!(
                "two-class analysis: judge must improve quality for class {} (q_acc > 1 - alpha)",
                i + 1
            )));
        }
    }
    let caps = NormalizedCapacities::new(a.mu_w, a.mu_j, a.mu_h, inst.n_w, inst.n_j, inst.n_h);
    if caps.j_eff >= inst.n_w {
        return Err(Error::precondition("two-class analysis: judge capacity must be scarce (J_eff < n_w)"));
    }
    let ratio = a.mu_w / a.mu_h;
    let p_pass = [d[0].p_pass, d[1].p_pass];
    let p_rej = [d[0].p_rej, d[1].p_rej];
    let q_acc = [d[0].q_acc, d[1].q_acc];
    let beta = [a.quality.beta_i, b.quality.beta_i];
    let eta = [beta[0] / p_rej[0], beta[1] / p_rej[1]];
    let c = [p_rej[0] - beta[0], p_rej[1] - beta[1]];
    let kq = argmax(q_acc);
    let ke = argmax([-eta[0], -eta[1]]);
    let kc = argmax(c);
    let je = caps.j_eff;

    let lower = ratio * p_pass[kq] * je;
    let wb_upper = ratio * (inst.n_w - p_rej[ke] * je);
    let degenerate = kq == ke;
    let worker_binding = kq == kc;
    let (upper, interval) = if worker_binding {
        (wb_upper, (ratio * (inst.n_w - p_rej[kq] * je), wb_upper))
    } else {
        let up = ratio * p_pass[kc] * je;
        (up, (lower, up))
    };
    let interval = (!degenerate && interval.0 < interval.1).then_some(interval);
    let interior = interval
        .filter(|&(lo, hi)| inst.n_h > lo && inst.n_h < hi)
        .map(|_| {
            let v1 = if worker_binding {
                let r = inst.n_w - caps.h;
                (r - p_rej[1] * je) / (p_rej[0] - p_rej[1])
            } else {
                (caps.h - p_pass[1] * je) / (p_pass[0] - p_pass[1])
            };
            (v1, je - v1)
        });
    Ok(TwoClassReport {
        n_h: inst.n_h,
        overloaded,
        p_pass,
        p_rej,
        q_acc,
        eta,
        c,
        k_q: kq + 1,
        k_eta: ke + 1,
        k_c: kc + 1,
        capacities: caps,
        lower_threshold: lower,
        upper_threshold: upper,
        worker_binding_threshold: wb_upper,
        bypass_threshold: ratio * inst.n_w,
        complementarity_interval: interval,
        worker_binding,
        degenerate,
        interior,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub n_h: f64,
    pub closed_form: Vec<f64>,
    pub lp: Vec<f64>,
    pub matches: bool,
}

/// Evaluates the closed forms and the LP at every grid point. Single-class
/// points compare phi; two-class points compare the set of classes with
/// positive judge allocation in the backlogged-queue LP. Points without a
/// closed-form prediction are reported as matching.
pub fn verify_phase_against_lp(inst: &Instance, n_h_grid: &[f64]) -> Result<Vec<PointCheck>> {
    match inst.num_classes() {
        1 => n_h_grid
            .par_iter()
            .map(|&n_h| {
                let r = single_class_phase(&inst.with_n_h(n_h))?;
                let cf = r.phi_star.unwrap_or(r.phi_lp);
                Ok(PointCheck {
                    n_h,
                    closed_form: vec![cf],
                    lp: vec![r.phi_lp],
                    matches: (cf - r.phi_lp).abs() <= 1e-8,
                })
            })
            .collect(),
        2 => n_h_grid
            .par_iter()
            .map(|&n_h| {
                let at = inst.with_n_h(n_h);
                let report = two_class_report(&at)?;
                let lp = solve_overloaded(&at)?;
                let v: Vec<f64> = lp.classes.iter().map(|c| c.v).collect();
                let active: Vec<usize> = (0..2).filter(|&i| v[i] > ACTIVE_TOL).collect();
                let (closed_form, matches) = match report.predicted_active(n_h) {
                    Some(pred) => {
                        let flags = (0..2).map(|i| pred.contains(&i) as u8 as f64).collect();
                        (flags, pred == active)
                    }
                    None => (vec![f64::NAN; 2], true),
                };
                Ok(PointCheck {
                    n_h,
                    closed_form,
                    lp: v,
                    matches,
                })
            })
            .collect(),
        _ => Err(Error::Usage(
            "closed-form analysis requires 1 or 2 classes".to_string(),
        )),
    }
}

/// `lo, lo + step, ..., hi` computed by index to avoid drift.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}
