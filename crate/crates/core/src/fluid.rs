//! Steady-state fluid LPs: the baseline reduced LP in (x_i, v_i), the
//! feedback-rework LP, and joint capacity planning under a budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Budget, Instance};
use crate::lp::{solve_lp, Bound, LpProblem, LpSolution, Relation};
use crate::quality::QualityDerived;

/// Absolute slack below which a flow balance is considered exact.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidClass {
    /// Worker service mass.
    pub x: f64,
    /// Worker mass whose output is routed to the judge.
    pub v: f64,
    /// Judge service mass.
    pub y: f64,
    /// Human service mass on the direct path.
    pub z_d: f64,
    /// Human service mass on the judge path.
    pub z_j: f64,
    /// Work-queue mass.
    pub q_w: f64,
    pub phi: f64,
}

/// Which shared constraints are tight at the optimum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub worker: bool,
    pub judge: bool,
    pub human: bool,
    /// Per-class arrival cap; always false for classes without one.
    pub arrival: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidSolution {
    pub classes: Vec<FluidClass>,
    /// Optimal reward rate R*.
    pub objective: f64,
    pub binding: Binding,
}

impl FluidSolution {
    pub fn phi(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.phi).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.x).collect()
    }

    pub fn worker_load(&self) -> f64 {
        self.classes.iter().map(|c| c.x).sum()
    }

    pub fn judge_load(&self) -> f64 {
        self.classes.iter().map(|c| c.y).sum()
    }

    pub fn human_load(&self) -> f64 {
        self.classes.iter().map(|c| c.z_d + c.z_j).sum()
    }
}

pub fn routing_fraction(v: f64, x: f64) -> f64 {
    if x > 0.0 {
        (v / x).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

struct Rows {
    worker: usize,
    judge: usize,
    human: usize,
    arrival: Vec<Option<usize>>,
}

/// Columns are laid out as `[v_1..v_I, x_1..x_I]`, so ties between optimal
/// vertices resolve toward less judge routing.
fn baseline_lp(inst: &Instance, derived: &[QualityDerived], arrival_caps: bool) -> (LpProblem, Rows) {
    let k = inst.num_classes();
    let (vi, xi) = (|i: usize| i, |i: usize| k + i);
    let mut obj = vec![0.0; 2 * k];
    for (i, c) in inst.classes.iter().enumerate() {
        let w = c.reward * c.mu_w * (1.0 - c.quality.alpha);
        obj[xi(i)] = w;
        obj[vi(i)] = -w * c.quality.beta_i;
    }
    let mut lp = LpProblem::new(obj);
    let mut arrival = Vec::with_capacity(k);
    for (i, c) in inst.classes.iter().enumerate() {
        let mut row = vec![0.0; 2 * k];
        row[vi(i)] = 1.0;
        row[xi(i)] = -1.0;
        lp.add(row, Relation::Le, 0.0);

        let alpha = c.quality.alpha;
        arrival.push(if arrival_caps && alpha < 1.0 {
            let mut row = vec![0.0; 2 * k];
            row[xi(i)] = 1.0;
            row[vi(i)] = -c.quality.beta_i;
            Some(lp.add(row, Relation::Le, c.lambda / (c.mu_w * (1.0 - alpha))))
        } else {
            None
        });

        if !derived[i].judge_improves {
            lp.set_upper(vi(i), 0.0);
        }
    }
    let mut row = vec![0.0; 2 * k];
    (0..k).for_each(|i| row[xi(i)] = 1.0);
    let worker = lp.add(row, Relation::Le, inst.n_w);

    let mut row = vec![0.0; 2 * k];
    for (i, c) in inst.classes.iter().enumerate() {
        row[vi(i)] = c.mu_w / c.mu_j;
    }
    let judge = lp.add(row, Relation::Le, inst.n_j);

    let mut row = vec![0.0; 2 * k];
    for (i, c) in inst.classes.iter().enumerate() {
        let r = c.mu_w / c.mu_h;
        row[xi(i)] = r;
        row[vi(i)] = -r * derived[i].p_rej;
    }
    let human = lp.add(row, Relation::Le, inst.n_h);
    (
        lp,
        Rows {
            worker,
            judge,
            human,
            arrival,
        },
    )
}

fn binding_of(sol: &LpSolution, rows: &Rows) -> Binding {
    Binding {
        worker: sol.is_binding(rows.worker),
        judge: sol.is_binding(rows.judge),
        human: sol.is_binding(rows.human),
        arrival: rows
            .arrival
            .iter()
            .map(|r| r.is_some_and(|r| sol.is_binding(r)))
            .collect(),
    }
}

/// Work-queue mass from the queue's flow balance, `theta q_w = inflow - outflow`.
fn recover_queue(class: usize, theta: f64, lambda: f64, net: f64) -> Result<f64> {
    if theta > 0.0 {
        Ok(net / theta)
    } else if net.abs() <= BALANCE_TOL * lambda.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::OverloadWithoutAbandonment { class })
    }
}

fn recover(inst: &Instance, derived: &[QualityDerived], x: &[f64], v: &[f64]) -> Result<Vec<FluidClass>> {
    inst.classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d = &derived[i];
            let (x, v) = (x[i], v[i]);
            let y = c.mu_w / c.mu_j * v;
            let z_d = c.mu_w / c.mu_h * (x - v);
            let z_j = c.mu_w / c.mu_h * d.p_pass * v;
            let inflow = c.lambda
                + c.mu_j * y * d.p_rej
                + c.mu_h * z_d * c.quality.alpha
                + c.mu_h * z_j * (1.0 - d.q_acc);
            let q_w = recover_queue(i, c.theta, c.lambda, inflow - c.mu_w * x)?;
            Ok(FluidClass {
                x,
                v,
                y,
                z_d,
                z_j,
                q_w,
                phi: routing_fraction(v, x),
            })
        })
        .collect()
}

pub fn solve_steady_state(inst: &Instance) -> Result<FluidSolution> {
    solve_baseline(inst, &vec![true; inst.num_classes()], true)
}

/// Baseline LP with judge routing disabled for every class whose entry in
/// `judge_allowed` is false.
pub fn solve_with_judge_mask(inst: &Instance, judge_allowed: &[bool]) -> Result<FluidSolution> {
    solve_baseline(inst, judge_allowed, true)
}

/// Baseline LP with every work queue taken as backlogged: the per-class
/// arrival caps are dropped. This is the LP the closed-form analysis
/// describes; it differs from [`solve_steady_state`] only when some cap binds.
/// Recovered `q_w` may then be negative.
pub fn solve_overloaded(inst: &Instance) -> Result<FluidSolution> {
    solve_baseline(inst, &vec![true; inst.num_classes()], false)
}

/// [`solve_overloaded`] with a judge mask.
pub fn solve_overloaded_with_judge_mask(inst: &Instance, judge_allowed: &[bool]) -> Result<FluidSolution> {
    solve_baseline(inst, judge_allowed, false)
}

fn solve_baseline(inst: &Instance, judge_allowed: &[bool], arrival_caps: bool) -> Result<FluidSolution> {
    inst.validate()?;
    if judge_allowed.len() != inst.num_classes() {
        return Err(Error::Dimension(format!(
            "judge mask has {} entries for {} classes",
            judge_allowed.len(),
            inst.num_classes()
        )));
    }
    let derived = inst.derived()?;
    let (mut lp, rows) = baseline_lp(inst, &derived, arrival_caps);
    for (i, _) in judge_allowed.iter().enumerate().filter(|(_, a)| !**a) {
        lp.set_upper(i, 0.0);
    }
    let sol = solve_lp(&lp)?.into_optimal()?;
    let k = inst.num_classes();
    let classes = recover(inst, &derived, &sol.values[k..], &sol.values[..k])?;
    Ok(FluidSolution {
        classes,
        objective: sol.objective_value,
        binding: binding_of(&sol, &rows),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackClass {
    pub x: f64,
    pub v: f64,
    pub x_fb: f64,
    pub v_fb: f64,
    pub phi: f64,
    pub phi_fb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFluidSolution {
    pub classes: Vec<FeedbackClass>,
    pub objective: f64,
    pub binding: Binding,
}

impl FeedbackFluidSolution {
    pub fn worker_load(&self) -> f64 {
        self.classes.iter().map(|c| c.x + c.x_fb).sum()
    }
}

/// Solves the rework model in which human-rejected tasks return once with
/// error rate `kappa * alpha`. Every class must carry a `kappa`. Work queues
/// are taken to be backlogged, so no arrival cap enters this LP.
pub fn solve_feedback(inst: &Instance) -> Result<FeedbackFluidSolution> {
    inst.validate()?;
    let derived = inst.derived()?;
    let fb = inst
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| c.feedback(i))
        .collect::<Result<Vec<_>>>()?;
    let k = inst.num_classes();
    let n = 4 * k;
    let (vi, vfi, xi, xfi) = (|i| i, |i| k + i, |i| 2 * k + i, |i| 3 * k + i);

    let mut obj = vec![0.0; n];
    for (i, c) in inst.classes.iter().enumerate() {
        let a = c.quality.alpha;
        let w = c.reward * c.mu_w;
        let wf = w * (1.0 - fb[i].kappa * a);
        obj[xi(i)] = w * (1.0 - a);
        obj[vi(i)] = -w * (1.0 - a) * c.quality.beta_i;
        obj[xfi(i)] = wf;
        obj[vfi(i)] = -wf * c.quality.beta_i;
    }
    let mut lp = LpProblem::new(obj);
    for (i, c) in inst.classes.iter().enumerate() {
        let a = c.quality.alpha;
        let mut row = vec![0.0; n];
        row[xfi(i)] = 1.0;
        row[xi(i)] = -a;
        row[vi(i)] = a * (1.0 - c.quality.beta_ii);
        lp.add(row, Relation::Eq, 0.0);

        for (v, x) in [(vi(i), xi(i)), (vfi(i), xfi(i))] {
            let mut row = vec![0.0; n];
            row[v] = 1.0;
            row[x] = -1.0;
            lp.add(row, Relation::Le, 0.0);
        }
    }
    let mut row = vec![0.0; n];
    (0..k).for_each(|i| {
        row[xi(i)] = 1.0;
        row[xfi(i)] = 1.0;
    });
    let worker = lp.add(row, Relation::Le, inst.n_w);
    let mut row = vec![0.0; n];
    for (i, c) in inst.classes.iter().enumerate() {
        row[vi(i)] = c.mu_w / c.mu_j;
        row[vfi(i)] = c.mu_w / c.mu_j;
    }
    let judge = lp.add(row, Relation::Le, inst.n_j);
    let mut row = vec![0.0; n];
    for (i, c) in inst.classes.iter().enumerate() {
        let r = c.mu_w / c.mu_h;
        row[xi(i)] = r;
        row[vi(i)] = -r * derived[i].p_rej;
        row[xfi(i)] = r;
        row[vfi(i)] = -r * fb[i].p_rej_fb;
    }
    let human = lp.add(row, Relation::Le, inst.n_h);

    let sol = solve_lp(&lp)?.into_optimal()?;
    let rows = Rows {
        worker,
        judge,
        human,
        arrival: vec![None; k],
    };
    let s = &sol.values;
    let classes = (0..k)
        .map(|i| {
            let (x, v, x_fb, v_fb) = (s[xi(i)], s[vi(i)], s[xfi(i)], s[vfi(i)]);
            FeedbackClass {
                x,
                v,
                x_fb,
                v_fb,
                phi: routing_fraction(v, x),
                phi_fb: routing_fraction(v_fb, x_fb),
            }
        })
        .collect();
    Ok(FeedbackFluidSolution {
        classes,
        objective: sol.objective_value,
        binding: binding_of(&sol, &rows),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    pub n_w: f64,
    pub n_j: f64,
    pub solution: FluidSolution,
}

/// Chooses `(n_w, n_j)` within `gamma_w n_w + gamma_j n_j <= B` jointly with
/// the operating point. The instance's own `n_w` and `n_j` are ignored.
/// Planned capacities are the levels actually used, so worker and judge
/// pools are both saturated in the reported plan.
pub fn solve_capacity_plan(inst: &Instance, budget: &Budget) -> Result<CapacityPlan> {
    if !(budget.b.is_finite() && budget.b >= 0.0) {
        return Err(Error::domain("B", format!("{} must be nonnegative", budget.b)));
    }
    for (name, g) in [("gamma_w", budget.gamma_w), ("gamma_j", budget.gamma_j)] {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::domain(name, format!("{g} must be positive")));
        }
    }
    let base = inst.with_capacities(0.0, 0.0, inst.n_h);
    base.validate()?;
    let derived = base.derived()?;
    let k = base.num_classes();

    // Extend the baseline LP with columns n_w, n_j; they move from the
    // right-hand side of the worker and judge rows onto the left.
    let (mut lp, rows) = baseline_lp(&base, &derived, true);
    let (nw, nj) = (2 * k, 2 * k + 1);
    lp.objective.extend([0.0, 0.0]);
    lp.bounds.extend([Bound::default(); 2]);
    for c in lp.constraints.iter_mut() {
        c.coeffs.extend([0.0, 0.0]);
    }
    lp.constraints[rows.worker].coeffs[nw] = -1.0;
    lp.constraints[rows.judge].coeffs[nj] = -1.0;
    let mut row = vec![0.0; 2 * k + 2];
    row[nw] = budget.gamma_w;
    row[nj] = budget.gamma_j;
    lp.add(row, Relation::Le, budget.b);

    let sol = solve_lp(&lp)?.into_optimal()?;
    let (n_w, n_j) = (sol.values[nw], sol.values[nj]);
    let planned = base.with_capacities(n_w, n_j, inst.n_h);
    let classes = recover(&planned, &derived, &sol.values[k..2 * k], &sol.values[..k])?;
    Ok(CapacityPlan {
        n_w,
        n_j,
        solution: FluidSolution {
            classes,
            objective: sol.objective_value,
            binding: binding_of(&sol, &rows),
        },
    })
}
