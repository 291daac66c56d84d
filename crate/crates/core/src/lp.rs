//! Dense two-phase simplex for small linear programs.
//!
//! Problems are stated as maximization over variables with finite lower
//! bounds (default 0) and optional upper bounds. Pivoting follows Bland's
//! rule, so the method terminates on degenerate problems. Among multiple
//! optimal vertices the solver returns the lexicographically smallest
//! value vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEAS_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
/// Basic values this small are pivoting round-off and read as exact zeros.
const ROUND_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: Option<f64>,
}

impl Default for Bound {
    fn default() -> Self {
        Bound {
            lower: 0.0,
            upper: None,
        }
    }
}

/// `maximize objective · x` subject to `constraints` and `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<Bound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Empty unless the status is optimal.
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Indices of constraints with slack below [`FEAS_TOL`].
    pub binding: Vec<usize>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn into_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(Error::Solver("infeasible")),
            LpStatus::Unbounded => Err(Error::Solver("unbounded")),
        }
    }

    pub fn is_binding(&self, constraint: usize) -> bool {
        self.binding.contains(&constraint)
    }
}

impl LpProblem {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            objective,
            constraints: Vec::new(),
            bounds: vec![Bound::default(); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds a constraint and returns its index.
    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> usize {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_upper(&mut self, var: usize, upper: f64) {
        self.bounds[var].upper = Some(upper);
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        dot(&self.objective, values)
    }

    /// Largest constraint or bound violation at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs = dot(&c.coeffs, values);
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (x, b) in values.iter().zip(&self.bounds) {
            worst = worst.max(b.lower - x);
            if let Some(u) = b.upper {
                worst = worst.max(x - u);
            }
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::Dimension(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Dimension("objective has non-finite entries".into()));
        }
        for (k, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::Dimension(format!(
                    "constraint {k} has {} coefficients for {n} variables",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::Dimension(format!("constraint {k} is not finite")));
            }
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if !b.lower.is_finite() {
                return Err(Error::Dimension(format!("variable {j} lower bound must be finite")));
            }
            if b.upper.is_some_and(f64::is_nan) {
                return Err(Error::Dimension(format!("variable {j} upper bound is NaN")));
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Tableau {
    cols: usize,
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.rhs.len()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let cols = self.cols;
        let p = self.at(r, c);
        for j in 0..cols {
            self.a[r * cols + j] /= p;
        }
        self.rhs[r] /= p;
        self.a[r * cols + c] = 1.0;
        for i in 0..self.rows() {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f == 0.0 {
                continue;
            }
            for j in 0..cols {
                self.a[i * cols + j] -= f * self.a[r * cols + j];
            }
            self.a[i * cols + c] = 0.0;
            self.rhs[i] -= f * self.rhs[r];
            if self.rhs[i] < 0.0 && self.rhs[i] > -FEAS_TOL {
                self.rhs[i] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb == 0.0 {
                continue;
            }
            for (j, dj) in d.iter_mut().enumerate() {
                *dj -= cb * self.at(i, j);
            }
        }
        for &bv in &self.basis {
            d[bv] = 0.0;
        }
        d
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.rhs)
            .map(|(&bv, &b)| cost[bv] * b)
            .sum()
    }

    /// Maximizes `cost` over the columns flagged in `allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<Outcome> {
        for _ in 0..MAX_PIVOTS {
            let d = self.reduced_costs(cost);
            let Some(enter) = (0..self.cols).find(|&j| allowed[j] && d[j] > COST_TOL) else {
                return Ok(Outcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows() {
                let aij = self.at(i, enter);
                if aij <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs[i] / aij;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - 1e-12
                            || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])
                        {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            match leave {
                None => return Ok(Outcome::Unbounded),
                Some((r, _)) => self.pivot(r, enter),
            }
        }
        Err(Error::Solver("not converging (pivot limit reached)"))
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.num_vars();

    for b in &problem.bounds {
        if let Some(u) = b.upper {
            if u < b.lower - FEAS_TOL {
                return Ok(not_optimal(LpStatus::Infeasible));
            }
        }
    }

    // Rows in terms of shifted variables x' = x - lower, each with rhs >= 0.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &problem.constraints {
        let shift: f64 = c
            .coeffs
            .iter()
            .zip(&problem.bounds)
            .map(|(a, b)| a * b.lower)
            .sum();
        rows.push((c.coeffs.clone(), c.relation, c.rhs - shift));
    }
    for (j, b) in problem.bounds.iter().enumerate() {
        if let Some(u) = b.upper.filter(|u| u.is_finite()) {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e, Relation::Le, u - b.lower));
        }
    }
    for row in rows.iter_mut() {
        if row.2 < 0.0 {
            row.0.iter_mut().for_each(|a| *a = -*a);
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let art_start = n + n_slack;
    let mut tab = Tableau {
        cols,
        a: vec![0.0; m * cols],
        rhs: vec![0.0; m],
        basis: vec![0; m],
    };
    let (mut s, mut t) = (n, art_start);
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        tab.a[i * cols..i * cols + n].copy_from_slice(coeffs);
        tab.rhs[i] = *rhs;
        match rel {
            Relation::Le => {
                tab.a[i * cols + s] = 1.0;
                tab.basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                tab.a[i * cols + s] = -1.0;
                tab.a[i * cols + t] = 1.0;
                tab.basis[i] = t;
                s += 1;
                t += 1;
            }
            Relation::Eq => {
                tab.a[i * cols + t] = 1.0;
                tab.basis[i] = t;
                t += 1;
            }
        }
    }

    let mut allowed = vec![true; cols];
    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        phase1[art_start..].iter_mut().for_each(|c| *c = -1.0);
        tab.optimize(&phase1, &allowed)?;
        let scale = 1.0 + tab.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if -tab.objective(&phase1) > FEAS_TOL * scale {
            return Ok(not_optimal(LpStatus::Infeasible));
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.rows() {
            if tab.basis[i] >= art_start {
                match (0..art_start).find(|&j| tab.at(i, j).abs() > PIVOT_TOL) {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        remove_row(&mut tab, i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        allowed[art_start..].iter_mut().for_each(|a| *a = false);
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&problem.objective);
    if let Outcome::Unbounded = tab.optimize(&cost, &allowed)? {
        return Ok(not_optimal(LpStatus::Unbounded));
    }

    // Restrict to the optimal face and minimize x_0, x_1, ... in turn.
    restrict_to_face(&tab, &cost, &mut allowed);
    for k in 0..n {
        if !(0..cols).any(|j| allowed[j] && !tab.basis.contains(&j)) {
            break;
        }
        let mut stage = vec![0.0; cols];
        stage[k] = -1.0;
        if let Outcome::Optimal = tab.optimize(&stage, &allowed)? {
            restrict_to_face(&tab, &stage, &mut allowed);
        }
    }

    let mut values: Vec<f64> = problem.bounds.iter().map(|b| b.lower).collect();
    for (i, &bv) in tab.basis.iter().enumerate() {
        if bv < n && tab.rhs[i].abs() >= ROUND_TOL {
            values[bv] += tab.rhs[i];
        }
    }
    let binding = problem
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let lhs = dot(&c.coeffs, &values);
            match c.relation {
                Relation::Le => c.rhs - lhs < FEAS_TOL,
                Relation::Ge => lhs - c.rhs < FEAS_TOL,
                Relation::Eq => true,
            }
        })
        .map(|(k, _)| k)
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value: problem.evaluate(&values),
        values,
        binding,
    })
}

fn restrict_to_face(tab: &Tableau, cost: &[f64], allowed: &mut [bool]) {
    let d = tab.reduced_costs(cost);
    for (j, dj) in d.iter().enumerate() {
        if *dj < -COST_TOL {
            allowed[j] = false;
        }
    }
}

fn remove_row(tab: &mut Tableau, i: usize) {
    let cols = tab.cols;
    tab.a.drain(i * cols..(i + 1) * cols);
    tab.rhs.remove(i);
    tab.basis.remove(i);
}

fn not_optimal(status: LpStatus) -> LpSolution {
    LpSolution {
        status,
        values: Vec::new(),
        objective_value: match status {
            LpStatus::Unbounded => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        },
        binding: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable() {
        let mut p = LpProblem::new(vec![1.0]);
        p.add(vec![1.0], Relation::Le, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.values, vec![1.0]);
        assert_eq!(s.objective_value, 1.0);
        assert_eq!(s.binding, vec![0]);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = LpProblem::new(vec![1.0]);
        p.add(vec![1.0], Relation::Le, -1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);

        let mut p = LpProblem::new(vec![1.0, 0.0]);
        p.add(vec![0.0, 1.0], Relation::Le, 3.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
        assert!(solve_lp(&p).unwrap().into_optimal().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let mut p = LpProblem::new(vec![1.0, 2.0]);
        p.add(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&p), Err(Error::Dimension(_))));
        let mut p = LpProblem::new(vec![1.0]);
        p.add(vec![1.0], Relation::Le, f64::INFINITY);
        assert!(matches!(solve_lp(&p), Err(Error::Dimension(_))));
    }

    #[test]
    fn textbook_example() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut p = LpProblem::new(vec![3.0, 5.0]);
        p.add(vec![1.0, 0.0], Relation::Le, 4.0);
        p.add(vec![0.0, 2.0], Relation::Le, 12.0);
        p.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.values[0] - 2.0).abs() < 1e-12);
        assert!((s.values[1] - 6.0).abs() < 1e-12);
        assert!((s.objective_value - 36.0).abs() < 1e-12);
        assert_eq!(s.binding, vec![1, 2]);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + y, x + y = 2, x >= 0.5, y <= 1 -> ties broken toward smaller x
        let mut p = LpProblem::new(vec![1.0, 1.0]);
        p.add(vec![1.0, 1.0], Relation::Eq, 2.0);
        p.add(vec![1.0, 0.0], Relation::Ge, 0.5);
        p.set_upper(1, 1.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.values[0] - 1.0).abs() < 1e-12);
        assert!((s.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lexicographic_tie_break() {
        // Every point on x + y = 1 is optimal; the smallest x wins.
        let mut p = LpProblem::new(vec![1.0, 1.0]);
        p.add(vec![1.0, 1.0], Relation::Le, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.values, vec![0.0, 1.0]);

        let mut p = LpProblem::new(vec![0.0, 0.0, 1.0]);
        p.add(vec![1.0, 1.0, 1.0], Relation::Le, 3.0);
        p.add(vec![1.0, 0.0, 0.0], Relation::Ge, 0.25);
        p.add(vec![0.0, 0.0, 1.0], Relation::Le, 2.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.values[0] - 0.25).abs() < 1e-12);
        assert!(s.values[1].abs() < 1e-12);
        assert!((s.values[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_lower_bounds() {
        let mut p = LpProblem::new(vec![-1.0, 1.0]);
        p.bounds[0].lower = 1.5;
        p.bounds[1].lower = -2.0;
        p.add(vec![1.0, 1.0], Relation::Le, 0.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.values[0] - 1.5).abs() < 1e-12);
        assert!((s.values[1] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut p = LpProblem::new(vec![1.0, 2.0]);
        p.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        p.add(vec![2.0, 2.0], Relation::Eq, 2.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the textbook largest-coefficient rule.
        let mut p = LpProblem::new(vec![0.75, -150.0, 0.02, -6.0]);
        p.add(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0);
        p.add(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0);
        p.add(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let s = solve_lp(&p).unwrap();
        assert!((s.objective_value - 0.05).abs() < 1e-9);
    }
}
