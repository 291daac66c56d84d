//! Admission and routing rules applied by the simulator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{solve_feedback, solve_steady_state, FeedbackFluidSolution, FluidSolution};
use crate::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Threshold admission at `n x_i*` with Bernoulli(`phi_i*`) routing.
    FluidTracking,
    /// Admit any waiting task; route with `phi_i*`.
    GreedyOptimal,
    AlwaysJudge,
    NeverJudge,
    /// Fluid tracking on the rework model; feedback tasks are admitted first.
    FluidTrackingFeedback,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::FluidTracking,
        PolicyKind::GreedyOptimal,
        PolicyKind::AlwaysJudge,
        PolicyKind::NeverJudge,
        PolicyKind::FluidTrackingFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::FluidTracking => "fluid_tracking",
            PolicyKind::GreedyOptimal => "greedy_optimal",
            PolicyKind::AlwaysJudge => "always_judge",
            PolicyKind::NeverJudge => "never_judge",
            PolicyKind::FluidTrackingFeedback => "fluid_tracking_feedback",
        }
    }

    pub fn is_greedy(self) -> bool {
        matches!(
            self,
            PolicyKind::GreedyOptimal | PolicyKind::AlwaysJudge | PolicyKind::NeverJudge
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    /// Accepts the snake_case names plus the short CLI spellings.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "fluid" | "fluid_tracking" => PolicyKind::FluidTracking,
            "greedy_optimal" | "greedy" => PolicyKind::GreedyOptimal,
            "always_judge" => PolicyKind::AlwaysJudge,
            "never_judge" => PolicyKind::NeverJudge,
            "fluid_feedback" | "fluid_tracking_feedback" => PolicyKind::FluidTrackingFeedback,
            _ => return Err(Error::Usage(format!("unknown policy `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tiebreak {
    #[default]
    RoundRobin,
    /// Oldest waiting task first, across classes.
    Fcfs,
    /// Largest gap `n x_i* - X_i` first.
    MaxDeficit,
}

impl FromStr for Tiebreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "round_robin" => Tiebreak::RoundRobin,
            "fcfs" => Tiebreak::Fcfs,
            "max_deficit" => Tiebreak::MaxDeficit,
            _ => return Err(Error::Usage(format!("unknown tiebreak `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Fresh,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    Judge,
    HumanDirect,
}

/// A static policy: fluid targets and routing fractions fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Worker-mass targets `x_i*`, or `x_i* + x_{i,fb}*` for the feedback variant.
    pub targets: Vec<f64>,
    pub routing: Vec<f64>,
    /// Empty unless the policy carries feedback routing.
    pub routing_fb: Vec<f64>,
    pub tiebreak: Tiebreak,
}

impl PolicySpec {
    pub fn from_fluid(kind: PolicyKind, sol: &FluidSolution) -> Result<PolicySpec> {
        if kind == PolicyKind::FluidTrackingFeedback {
            return Err(Error::Usage(
                "fluid_tracking_feedback needs a feedback fluid solution".into(),
            ));
        }
        let k = sol.classes.len();
        let routing = match kind {
            PolicyKind::AlwaysJudge => vec![1.0; k],
            PolicyKind::NeverJudge => vec![0.0; k],
            _ => sol.phi(),
        };
        Ok(PolicySpec {
            kind,
            targets: sol.targets(),
            routing,
            routing_fb: Vec::new(),
            tiebreak: Tiebreak::default(),
        })
    }

    /// Policy for the rework model. Greedy kinds keep their fixed routing
    /// and take feedback routing from the LP where it matters.
    pub fn from_feedback(kind: PolicyKind, sol: &FeedbackFluidSolution) -> Result<PolicySpec> {
        if kind == PolicyKind::FluidTracking {
            return Err(Error::Usage(
                "fluid_tracking ignores feedback tasks; use fluid_tracking_feedback".into(),
            ));
        }
        let k = sol.classes.len();
        let (routing, routing_fb) = match kind {
            PolicyKind::AlwaysJudge => (vec![1.0; k], vec![1.0; k]),
            PolicyKind::NeverJudge => (vec![0.0; k], vec![0.0; k]),
            _ => (
                sol.classes.iter().map(|c| c.phi).collect(),
                sol.classes.iter().map(|c| c.phi_fb).collect(),
            ),
        };
        Ok(PolicySpec {
            kind,
            targets: sol.classes.iter().map(|c| c.x + c.x_fb).collect(),
            routing,
            routing_fb,
            tiebreak: Tiebreak::default(),
        })
    }

    /// Solves the matching fluid LP on `inst` and builds the policy.
    pub fn for_instance(kind: PolicyKind, inst: &Instance, feedback: bool) -> Result<PolicySpec> {
        if feedback {
            PolicySpec::from_feedback(kind, &solve_feedback(inst)?)
        } else {
            PolicySpec::from_fluid(kind, &solve_steady_state(inst)?)
        }
    }

    pub fn with_tiebreak(mut self, tiebreak: Tiebreak) -> Self {
        self.tiebreak = tiebreak;
        self
    }

    pub fn validate(&self, classes: usize, feedback: bool) -> Result<()> {
        if self.targets.len() != classes || self.routing.len() != classes {
            return Err(Error::Usage(format!(
                "policy covers {} classes, instance has {classes}",
                self.routing.len()
            )));
        }
        match (self.kind, feedback) {
            (PolicyKind::FluidTrackingFeedback, false) => {
                return Err(Error::Usage(
                    "fluid_tracking_feedback requires the feedback model".into(),
                ))
            }
            (PolicyKind::FluidTracking, true) => {
                return Err(Error::Usage(
                    "fluid_tracking ignores feedback tasks; use fluid_tracking_feedback".into(),
                ))
            }
            _ => {}
        }
        if feedback && self.routing_fb.len() != classes {
            return Err(Error::Usage("policy lacks feedback routing fractions".into()));
        }
        let probs = self.routing.iter().chain(&self.routing_fb);
        if let Some(p) = probs.copied().find(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("routing", format!("{p} is not a probability")));
        }
        if let Some(t) = self.targets.iter().copied().find(|t| !(*t >= 0.0)) {
            return Err(Error::domain("targets", format!("{t} is negative")));
        }
        Ok(())
    }

    pub fn routing_probability(&self, class: usize, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::Fresh => self.routing[class],
            TaskKind::Feedback => self.routing_fb.get(class).copied().unwrap_or(self.routing[class]),
        }
    }

    pub fn route_on_worker_completion<R: Rng + ?Sized>(
        &self,
        class: usize,
        kind: TaskKind,
        rng: &mut R,
    ) -> Destination {
        match self.kind {
            PolicyKind::AlwaysJudge => Destination::Judge,
            PolicyKind::NeverJudge => Destination::HumanDirect,
            _ => {
                let p = self.routing_probability(class, kind);
                if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                    Destination::Judge
                } else {
                    Destination::HumanDirect
                }
            }
        }
    }
}

/// What admission needs to see of a class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorkView {
    pub waiting: u64,
    pub waiting_fb: u64,
    /// Tasks of this class in worker service, both kinds.
    pub in_service: u64,
    /// Arrival epoch of the oldest waiting fresh task, if known.
    pub oldest: Option<f64>,
    pub oldest_fb: Option<f64>,
}

/// Per-replication admission state (the round-robin cursor).
#[derive(Debug, Clone, Default)]
pub struct Admission {
    cursor: usize,
}

impl Admission {
    pub fn new() -> Self {
        Admission::default()
    }

    /// Picks the next task to start on a free worker, or `None` to idle.
    pub fn admit_one(&mut self, spec: &PolicySpec, view: &[WorkView], scale_n: f64) -> Option<(usize, TaskKind)> {
        let k = view.len();
        let eligible = |i: usize| {
            let w = &view[i];
            if w.waiting + w.waiting_fb == 0 {
                return false;
            }
            spec.kind.is_greedy() || (w.in_service as f64) < scale_n * spec.targets[i]
        };
        let fb_first = spec.kind == PolicyKind::FluidTrackingFeedback;
        let kind_for = |i: usize| {
            let w = &view[i];
            if w.waiting_fb > 0 && (fb_first || w.waiting == 0) {
                TaskKind::Feedback
            } else {
                TaskKind::Fresh
            }
        };
        // Feedback-first also orders classes: a class offering feedback work wins.
        let offers_fb = |i: usize| fb_first && view[i].waiting_fb > 0;
        let any_fb = fb_first && (0..k).any(|i| eligible(i) && offers_fb(i));
        let candidate = |i: usize| eligible(i) && (!any_fb || offers_fb(i));

        let chosen = match spec.tiebreak {
            Tiebreak::RoundRobin => {
                let i = (0..k).map(|d| (self.cursor + d) % k).find(|&i| candidate(i))?;
                self.cursor = (i + 1) % k;
                i
            }
            Tiebreak::Fcfs => {
                let head = |i: usize| match kind_for(i) {
                    TaskKind::Fresh => view[i].oldest,
                    TaskKind::Feedback => view[i].oldest_fb,
                };
                (0..k)
                    .filter(|&i| candidate(i))
                    .min_by(|&a, &b| {
                        let (ha, hb) = (head(a).unwrap_or(f64::INFINITY), head(b).unwrap_or(f64::INFINITY));
                        ha.total_cmp(&hb)
                    })?
            }
            Tiebreak::MaxDeficit => {
                let deficit = |i: usize| scale_n * spec.targets[i] - view[i].in_service as f64;
                (0..k)
                    .filter(|&i| candidate(i))
                    .max_by(|&a, &b| deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a)))?
            }
        };
        Some((chosen, kind_for(chosen)))
    }
}

/// Ordered admissions that fill `free` worker servers from the given view.
pub fn admit_on_capacity_free(
    spec: &PolicySpec,
    admission: &mut Admission,
    view: &[WorkView],
    free: u64,
    scale_n: f64,
) -> Vec<(usize, TaskKind)> {
    let mut view = view.to_vec();
    let mut out = Vec::new();
    for _ in 0..free {
        let Some((i, kind)) = admission.admit_one(spec, &view, scale_n) else {
            break;
        };
        let w = &mut view[i];
        match kind {
            TaskKind::Fresh => w.waiting -= 1,
            TaskKind::Feedback => w.waiting_fb -= 1,
        }
        w.in_service += 1;
        out.push((i, kind));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: PolicyKind, targets: Vec<f64>, routing: Vec<f64>) -> PolicySpec {
        PolicySpec {
            kind,
            targets,
            routing,
            routing_fb: Vec::new(),
            tiebreak: Tiebreak::RoundRobin,
        }
    }

    fn waiting(n: u64, in_service: u64) -> WorkView {
        WorkView {
            waiting: n,
            in_service,
            ..Default::default()
        }
    }

    #[test]
    fn routing_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = spec(PolicyKind::FluidTracking, vec![1.0], vec![1.0]);
        assert!((0..100).all(|_| s.route_on_worker_completion(0, TaskKind::Fresh, &mut rng) == Destination::Judge));
        let s = spec(PolicyKind::FluidTracking, vec![1.0], vec![0.0]);
        assert!((0..100).all(|_| s.route_on_worker_completion(0, TaskKind::Fresh, &mut rng) == Destination::HumanDirect));
        let s = spec(PolicyKind::AlwaysJudge, vec![1.0], vec![0.0]);
        assert_eq!(s.route_on_worker_completion(0, TaskKind::Fresh, &mut rng), Destination::Judge);
        let s = spec(PolicyKind::NeverJudge, vec![1.0], vec![1.0]);
        assert_eq!(s.route_on_worker_completion(0, TaskKind::Fresh, &mut rng), Destination::HumanDirect);
    }

    #[test]
    fn routing_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = spec(PolicyKind::FluidTracking, vec![1.0], vec![0.968784]);
        let hits = (0..200_000)
            .filter(|_| s.route_on_worker_completion(0, TaskKind::Fresh, &mut rng) == Destination::Judge)
            .count();
        let p = hits as f64 / 200_000.0;
        assert!((p - 0.968784).abs() < 4.0 * (0.968784f64 * 0.031216 / 200_000.0).sqrt());
    }

    #[test]
    fn threshold_is_strict() {
        let s = spec(PolicyKind::FluidTracking, vec![2.5], vec![0.5]);
        let mut adm = Admission::new();
        assert_eq!(adm.admit_one(&s, &[waiting(3, 25)], 10.0), None);
        assert_eq!(adm.admit_one(&s, &[waiting(3, 24)], 10.0), Some((0, TaskKind::Fresh)));
        assert_eq!(adm.admit_one(&s, &[waiting(0, 0)], 10.0), None);
        // Greedy ignores the target.
        let g = spec(PolicyKind::GreedyOptimal, vec![2.5], vec![0.5]);
        assert_eq!(adm.admit_one(&g, &[waiting(3, 99)], 10.0), Some((0, TaskKind::Fresh)));
    }

    #[test]
    fn round_robin_alternates() {
        let s = spec(PolicyKind::FluidTracking, vec![5.0, 5.0], vec![0.5, 0.5]);
        let mut adm = Admission::new();
        let view = [waiting(10, 0), waiting(10, 0)];
        let first: Vec<usize> = (0..4).map(|_| adm.admit_one(&s, &view, 1.0).unwrap().0).collect();
        assert_eq!(first, vec![0, 1, 0, 1]);
        let batch = admit_on_capacity_free(&s, &mut adm, &view, 3, 1.0);
        assert_eq!(batch.iter().map(|a| a.0).collect::<Vec<_>>(), vec![0, 1, 0]);
    }

    #[test]
    fn batch_respects_targets() {
        let s = spec(PolicyKind::FluidTracking, vec![0.3, 5.0], vec![0.5, 0.5]);
        let mut adm = Admission::new();
        let batch = admit_on_capacity_free(&s, &mut adm, &[waiting(10, 0), waiting(1, 0)], 10, 10.0);
        let c0 = batch.iter().filter(|a| a.0 == 0).count();
        assert_eq!(c0, 3);
        assert_eq!(batch.len(), 4);
    }

    #[test]
    fn fcfs_and_max_deficit() {
        let mut s = spec(PolicyKind::GreedyOptimal, vec![1.0, 3.0], vec![0.5, 0.5]).with_tiebreak(Tiebreak::Fcfs);
        let mut adm = Admission::new();
        let mut view = [waiting(1, 0), waiting(1, 0)];
        view[0].oldest = Some(4.0);
        view[1].oldest = Some(2.0);
        assert_eq!(adm.admit_one(&s, &view, 1.0).unwrap().0, 1);
        s.tiebreak = Tiebreak::MaxDeficit;
        assert_eq!(adm.admit_one(&s, &view, 1.0).unwrap().0, 1);
        view[1].in_service = 3;
        assert_eq!(adm.admit_one(&s, &view, 1.0).unwrap().0, 0);
    }

    #[test]
    fn feedback_admitted_first() {
        let s = PolicySpec {
            kind: PolicyKind::FluidTrackingFeedback,
            targets: vec![2.0, 2.0],
            routing: vec![1.0, 1.0],
            routing_fb: vec![0.5, 0.5],
            tiebreak: Tiebreak::RoundRobin,
        };
        let mut adm = Admission::new();
        let view = [
            waiting(5, 0),
            WorkView {
                waiting: 5,
                waiting_fb: 2,
                ..Default::default()
            },
        ];
        assert_eq!(adm.admit_one(&s, &view, 1.0), Some((1, TaskKind::Feedback)));
        let single = [WorkView {
            waiting: 5,
            waiting_fb: 1,
            in_service: 1,
            ..Default::default()
        }];
        assert_eq!(adm.admit_one(&s, &single, 1.0), Some((0, TaskKind::Feedback)));
        let full = [WorkView {
            in_service: 2,
            ..single[0]
        }];
        assert_eq!(adm.admit_one(&s, &full, 1.0), None);
    }

    #[test]
    fn incompatible_combinations() {
        let s = spec(PolicyKind::FluidTracking, vec![1.0], vec![0.5]);
        assert!(s.validate(1, true).unwrap_err().is_usage());
        assert!(s.validate(2, false).unwrap_err().is_usage());
        let mut f = s.clone();
        f.kind = PolicyKind::FluidTrackingFeedback;
        f.routing_fb = vec![0.5];
        assert!(f.validate(1, false).unwrap_err().is_usage());
        assert!(f.validate(1, true).is_ok());
        let mut bad = s;
        bad.routing = vec![1.5];
        assert!(bad.validate(1, false).is_err());
    }

    #[test]
    fn policy_names_parse() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("fluid".parse::<PolicyKind>().unwrap(), PolicyKind::FluidTracking);
        assert_eq!("never-judge".parse::<PolicyKind>().unwrap(), PolicyKind::NeverJudge);
        assert!("sometimes".parse::<PolicyKind>().unwrap_err().is_usage());
        assert_eq!("max-deficit".parse::<Tiebreak>().unwrap(), Tiebreak::MaxDeficit);
    }
}
