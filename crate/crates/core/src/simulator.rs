//! Exact simulation of the n-scaled Markovian network as a continuous-time
//! Markov chain on per-class station counts.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, SimSettings};
use crate::policies::{Admission, Destination, PolicySpec, TaskKind, WorkView};

/// Header line carried by every CSV this crate writes.
pub const CSV_HEADER: &str = "# judgeflow-csv v1";

const SPOT_CHECK_EVERY: u64 = 10_000;

/// Post-warmup batches behind the throughput standard error.
pub const BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub instance: Instance,
    pub scale_n: u32,
    pub horizon_t: f64,
    pub warmup: f64,
    pub seed: u64,
    pub sample_interval: f64,
    /// Simulate the rework model; every class must carry `kappa`.
    pub feedback: bool,
    /// Keep per-class samples for the trajectory dump.
    pub record_classes: bool,
}

impl SimConfig {
    pub fn new(instance: Instance, settings: &SimSettings) -> Self {
        SimConfig {
            instance,
            scale_n: settings.scale_n,
            horizon_t: settings.horizon_t,
            warmup: settings.warmup,
            seed: settings.seed,
            sample_interval: settings.sample_interval,
            feedback: false,
            record_classes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if self.scale_n == 0 {
            return Err(Error::domain("scale_n", "must be at least 1"));
        }
        if !(self.horizon_t.is_finite() && self.horizon_t > 0.0) {
            return Err(Error::domain("horizon_T", "must be positive and finite"));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon_t) {
            return Err(Error::domain("warmup", "must lie in [0, horizon_T)"));
        }
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return Err(Error::domain("sample_interval", "must be positive"));
        }
        if self.feedback && !self.instance.has_feedback() {
            return Err(Error::domain("kappa", "feedback simulation needs kappa on every class"));
        }
        Ok(())
    }
}

/// Server counts `floor(n c)` for the worker, judge and human pools.
pub fn server_counts(inst: &Instance, scale_n: u32) -> [u64; 3] {
    let n = scale_n as f64;
    [inst.n_w, inst.n_j, inst.n_h].map(|c| (n * c + 1e-9).floor().max(0.0) as u64)
}

/// The instance with capacities replaced by `floor(n c) / n`.
pub fn integerized(inst: &Instance, scale_n: u32) -> Instance {
    let [w, j, h] = server_counts(inst, scale_n);
    let n = scale_n as f64;
    inst.with_capacities(w as f64 / n, j as f64 / n, h as f64 / n)
}

/// Counts at each station for one task kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stations {
    pub q_w: u64,
    pub x: u64,
    pub q_j: u64,
    pub y: u64,
    pub q_hd: u64,
    pub z_d: u64,
    pub q_hj: u64,
    pub z_j: u64,
}

impl Stations {
    pub fn total(&self) -> u64 {
        self.q_w + self.x + self.q_j + self.y + self.q_hd + self.z_d + self.q_hj + self.z_j
    }

    fn add(&self, o: &Stations) -> Stations {
        Stations {
            q_w: self.q_w + o.q_w,
            x: self.x + o.x,
            q_j: self.q_j + o.q_j,
            y: self.y + o.y,
            q_hd: self.q_hd + o.q_hd,
            z_d: self.z_d + o.z_d,
            q_hj: self.q_hj + o.q_hj,
            z_j: self.z_j + o.z_j,
        }
    }
}

/// Cumulative inter-node flow counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flows {
    pub worker_done: u64,
    pub w_to_j: u64,
    pub w_to_h: u64,
    /// Judge rejections, returned to the fresh work queue.
    pub j_to_w: u64,
    pub j_to_h: u64,
    /// Human rejections on the direct path.
    pub hd_to_w: u64,
    pub hd_to_c: u64,
    /// Human rejections on the judge path.
    pub hj_to_w: u64,
    pub hj_to_c: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassState {
    pub fresh: Stations,
    pub fb: Stations,
    pub arrivals: u64,
    pub abandonments: u64,
    pub completions: u64,
    pub completions_fb: u64,
    /// Feedback tasks rejected a second time.
    pub removed: u64,
    pub flows: Flows,
    pub flows_fb: Flows,
}

impl ClassState {
    pub fn population(&self) -> u64 {
        self.fresh.total() + self.fb.total()
    }

    pub fn stations(&self, kind: TaskKind) -> &Stations {
        match kind {
            TaskKind::Fresh => &self.fresh,
            TaskKind::Feedback => &self.fb,
        }
    }

    fn stations_mut(&mut self, kind: TaskKind) -> &mut Stations {
        match kind {
            TaskKind::Fresh => &mut self.fresh,
            TaskKind::Feedback => &mut self.fb,
        }
    }

    fn flows_mut(&mut self, kind: TaskKind) -> &mut Flows {
        match kind {
            TaskKind::Fresh => &mut self.flows,
            TaskKind::Feedback => &mut self.flows_fb,
        }
    }

    /// Both task kinds summed.
    pub fn combined(&self) -> Stations {
        self.fresh.add(&self.fb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanPath {
    Direct,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Arrival { class: usize },
    Abandon { class: usize, kind: TaskKind },
    WorkerDone { class: usize, kind: TaskKind, to: Destination },
    JudgeDone { class: usize, kind: TaskKind, pass: bool },
    HumanDone { class: usize, kind: TaskKind, path: HumanPath, pass: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time: f64,
    pub q_j: u64,
    pub q_h: u64,
    pub q_w: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSample {
    pub time: f64,
    pub class: usize,
    pub stations: Stations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub arrivals: u64,
    pub abandonments: u64,
    pub completions: u64,
    pub completions_fb: u64,
    pub removed: u64,
}

/// Time-average busy fraction of each pool after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Utilization {
    pub worker: f64,
    pub judge: f64,
    pub human: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub scale_n: u32,
    pub seed: u64,
    pub events: u64,
    /// Reward-weighted completions per unit time per unit scale, after warmup.
    pub throughput_rate: f64,
    /// Batch-means standard error of `throughput_rate`; NaN before the horizon.
    pub throughput_se: f64,
    /// Post-warmup counts.
    pub classes: Vec<ClassMetrics>,
    pub trajectory: Vec<QueueSample>,
    pub class_trajectory: Vec<ClassSample>,
    pub utilization: Utilization,
}

impl SimMetrics {
    /// Abandoned share of post-warmup arrivals, all classes together.
    pub fn abandonment_fraction(&self) -> f64 {
        let a: u64 = self.classes.iter().map(|c| c.arrivals).sum();
        let b: u64 = self.classes.iter().map(|c| c.abandonments).sum();
        if a == 0 {
            0.0
        } else {
            b as f64 / a as f64
        }
    }

    pub fn write_trajectory_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(w, "time,class,Qw,X,Qj,Y,Qhd,Zd,Qhj,Zj")?;
        for s in &self.class_trajectory {
            let c = &s.stations;
            writeln!(
                w,
                "{:.6},{},{},{},{},{},{},{},{},{}",
                s.time,
                s.class + 1,
                c.q_w,
                c.x,
                c.q_j,
                c.y,
                c.q_hd,
                c.z_d,
                c.q_hj,
                c.z_j
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Rates {
    lambda_n: f64,
    theta: f64,
    mu_w: f64,
    mu_j: f64,
    mu_h: f64,
    reward: f64,
    /// Indexed by task kind: fresh, feedback.
    p_pass: [f64; 2],
    direct_ok: [f64; 2],
    judged_ok: [f64; 2],
}

const STRIDE: usize = 11;

fn kind_index(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Fresh => 0,
        TaskKind::Feedback => 1,
    }
}

fn kind_of(ix: usize) -> TaskKind {
    if ix == 0 {
        TaskKind::Fresh
    } else {
        TaskKind::Feedback
    }
}

/// One replication: state, clock and random stream.
pub struct Simulation {
    cfg: SimConfig,
    policy: PolicySpec,
    rates: Vec<Rates>,
    servers: [u64; 3],
    classes: Vec<ClassState>,
    rng: ChaCha8Rng,
    admission: Admission,
    judge_fifo: VecDeque<(u32, TaskKind)>,
    human_fifo: VecDeque<(u32, TaskKind, HumanPath)>,
    /// Arrival epochs of waiting tasks, kept only for FCFS admission.
    wait_times: Option<Vec<[VecDeque<f64>; 2]>>,
    view: Vec<WorkView>,
    event_rates: Vec<f64>,
    t: f64,
    events: u64,
    next_sample: f64,
    trajectory: Vec<QueueSample>,
    class_trajectory: Vec<ClassSample>,
    warm: Option<Vec<ClassMetrics>>,
    /// Cumulative reward at warmup and at each batch boundary.
    batch_marks: Vec<f64>,
    busy_time: [f64; 3],
    done: bool,
}

/// Generator keyed by instance, scale and seed, independent of run order.
pub fn replication_rng(inst: &Instance, scale_n: u32, seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&inst.fingerprint().to_le_bytes());
    key[8..16].copy_from_slice(&(scale_n as u64).to_le_bytes());
    key[16..24].copy_from_slice(&seed.to_le_bytes());
    key[24..].copy_from_slice(b"judgeflw");
    ChaCha8Rng::from_seed(key)
}

impl Simulation {
    pub fn new(cfg: SimConfig, policy: PolicySpec) -> Result<Simulation> {
        cfg.validate()?;
        let k = cfg.instance.num_classes();
        policy.validate(k, cfg.feedback)?;
        let mut rates = Vec::with_capacity(k);
        for (i, c) in cfg.instance.classes.iter().enumerate() {
            let d = c.derived(i)?;
            let a = c.quality.alpha;
            let (p_pass_fb, judged_fb, direct_fb) = if cfg.feedback {
                let fb = c.feedback(i)?;
                let p = fb.p_pass_fb();
                let ok = (1.0 - fb.kappa * a) * (1.0 - c.quality.beta_i);
                (p, if p > 0.0 { ok / p } else { 1.0 }, 1.0 - fb.kappa * a)
            } else {
                (d.p_pass, d.q_acc, 1.0 - a)
            };
            rates.push(Rates {
                lambda_n: c.lambda * cfg.scale_n as f64,
                theta: c.theta,
                mu_w: c.mu_w,
                mu_j: c.mu_j,
                mu_h: c.mu_h,
                reward: c.reward,
                p_pass: [d.p_pass, p_pass_fb],
                direct_ok: [1.0 - a, direct_fb],
                judged_ok: [d.q_acc, judged_fb],
            });
        }
        let servers = server_counts(&cfg.instance, cfg.scale_n);
        let rng = replication_rng(&cfg.instance, cfg.scale_n, cfg.seed);
        let wait_times = (policy.tiebreak == crate::policies::Tiebreak::Fcfs)
            .then(|| vec![[VecDeque::new(), VecDeque::new()]; k]);
        let mut sim = Simulation {
            cfg,
            policy,
            rates,
            servers,
            classes: vec![ClassState::default(); k],
            rng,
            admission: Admission::new(),
            judge_fifo: VecDeque::new(),
            human_fifo: VecDeque::new(),
            wait_times,
            view: vec![WorkView::default(); k],
            event_rates: vec![0.0; k * STRIDE],
            t: 0.0,
            events: 0,
            next_sample: 0.0,
            trajectory: Vec::new(),
            class_trajectory: Vec::new(),
            warm: None,
            batch_marks: Vec::with_capacity(BATCHES + 1),
            busy_time: [0.0; 3],
            done: false,
        };
        if sim.cfg.warmup == 0.0 {
            sim.warm = Some(sim.counters());
            sim.batch_marks.push(0.0);
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn classes(&self) -> &[ClassState] {
        &self.classes
    }

    pub fn servers(&self) -> [u64; 3] {
        self.servers
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn counters(&self) -> Vec<ClassMetrics> {
        self.classes
            .iter()
            .map(|c| ClassMetrics {
                arrivals: c.arrivals,
                abandonments: c.abandonments,
                completions: c.completions,
                completions_fb: c.completions_fb,
                removed: c.removed,
            })
            .collect()
    }

    fn reward_done(&self) -> f64 {
        self.classes
            .iter()
            .zip(&self.rates)
            .map(|(c, r)| r.reward * (c.completions + c.completions_fb) as f64)
            .sum()
    }

    fn busy(&self) -> [u64; 3] {
        let mut b = [0; 3];
        for c in &self.classes {
            b[0] += c.fresh.x + c.fb.x;
            b[1] += c.fresh.y + c.fb.y;
            b[2] += c.fresh.z_d + c.fresh.z_j + c.fb.z_d + c.fb.z_j;
        }
        b
    }

    /// Checks capacity limits, splitting consistency, FIFO bookkeeping and
    /// per-class mass balance.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let busy = self.busy();
        for (pool, (b, s)) in ["worker", "judge", "human"].iter().zip(busy.iter().zip(self.servers)) {
            if *b > s {
                return Err(format!("{pool} pool holds {b} tasks with {s} servers"));
            }
        }
        let (mut qj, mut qh) = (0, 0);
        for (i, c) in self.classes.iter().enumerate() {
            let out = c.abandonments + c.completions + c.completions_fb + c.removed;
            if c.population() + out != c.arrivals {
                return Err(format!(
                    "class {}: population {} != arrivals {} - departures {}",
                    i + 1,
                    c.population(),
                    c.arrivals,
                    out
                ));
            }
            for f in [&c.flows, &c.flows_fb] {
                if f.w_to_j + f.w_to_h != f.worker_done {
                    return Err(format!("class {}: worker output split does not add up", i + 1));
                }
            }
            let s = c.combined();
            qj += s.q_j;
            qh += s.q_hd + s.q_hj;
        }
        if qj != self.judge_fifo.len() as u64 || qh != self.human_fifo.len() as u64 {
            return Err("queue counts disagree with FIFO contents".into());
        }
        Ok(())
    }

    fn fill_rates(&mut self) -> f64 {
        let mut total = 0.0;
        for (i, (r, c)) in self.rates.iter().zip(&self.classes).enumerate() {
            let e = &mut self.event_rates[i * STRIDE..(i + 1) * STRIDE];
            e[0] = r.lambda_n;
            e[1] = r.theta * c.fresh.q_w as f64;
            e[2] = r.theta * c.fb.q_w as f64;
            e[3] = r.mu_w * c.fresh.x as f64;
            e[4] = r.mu_w * c.fb.x as f64;
            e[5] = r.mu_j * c.fresh.y as f64;
            e[6] = r.mu_j * c.fb.y as f64;
            e[7] = r.mu_h * c.fresh.z_d as f64;
            e[8] = r.mu_h * c.fresh.z_j as f64;
            e[9] = r.mu_h * c.fb.z_d as f64;
            e[10] = r.mu_h * c.fb.z_j as f64;
            total += e.iter().sum::<f64>();
        }
        total
    }

    fn advance_clock(&mut self, to: f64) {
        let end = to.min(self.cfg.horizon_t);
        while self.next_sample <= end && self.next_sample <= self.cfg.horizon_t {
            self.record_sample(self.next_sample);
            self.next_sample += self.cfg.sample_interval;
            // Snap accumulated drift so long runs keep exact grid points.
            let k = (self.next_sample / self.cfg.sample_interval).round();
            self.next_sample = k * self.cfg.sample_interval;
        }
        if self.warm.is_none() && end >= self.cfg.warmup {
            self.warm = Some(self.counters());
            self.batch_marks.push(self.reward_done());
        }
        let width = (self.cfg.horizon_t - self.cfg.warmup) / BATCHES as f64;
        while self.warm.is_some() && self.batch_marks.len() <= BATCHES {
            let k = self.batch_marks.len();
            let boundary = if k == BATCHES {
                self.cfg.horizon_t
            } else {
                self.cfg.warmup + width * k as f64
            };
            if end < boundary {
                break;
            }
            self.batch_marks.push(self.reward_done());
        }
        let lo = self.t.max(self.cfg.warmup);
        if end > lo {
            let busy = self.busy();
            for p in 0..3 {
                self.busy_time[p] += busy[p] as f64 * (end - lo);
            }
        }
        self.t = end;
    }

    fn record_sample(&mut self, time: f64) {
        let (mut q_j, mut q_h, mut q_w) = (0, 0, 0);
        for (i, c) in self.classes.iter().enumerate() {
            let s = c.combined();
            q_j += s.q_j;
            q_h += s.q_hd + s.q_hj;
            q_w += s.q_w;
            if self.cfg.record_classes {
                self.class_trajectory.push(ClassSample {
                    time,
                    class: i,
                    stations: s,
                });
            }
        }
        self.trajectory.push(QueueSample { time, q_j, q_h, q_w });
    }

    /// Advances to the next event and applies it. Returns `None` once the
    /// horizon is reached.
    pub fn step(&mut self) -> Result<Option<Event>> {
        if self.done {
            return Ok(None);
        }
        let total = self.fill_rates();
        if total <= 0.0 {
            let population: u64 = self.classes.iter().map(|c| c.population()).sum();
            if population > 0 {
                return Err(Error::Deadlock {
                    time: self.t,
                    population,
                });
            }
            self.advance_clock(self.cfg.horizon_t);
            self.done = true;
            return Ok(None);
        }
        let dt: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        let t_next = self.t + dt;
        if t_next > self.cfg.horizon_t {
            self.advance_clock(self.cfg.horizon_t);
            self.done = true;
            return Ok(None);
        }
        self.advance_clock(t_next);

        let mut u = self.rng.random::<f64>() * total;
        let mut slot = self.event_rates.len() - 1;
        for (j, r) in self.event_rates.iter().enumerate() {
            if u < *r {
                slot = j;
                break;
            }
            u -= r;
        }
        // Guard against rounding landing on a zero-rate tail slot.
        while self.event_rates[slot] <= 0.0 {
            slot -= 1;
        }
        let event = self.apply(slot / STRIDE, slot % STRIDE);
        self.dispatch();
        self.events += 1;
        if cfg!(debug_assertions) || self.events % SPOT_CHECK_EVERY == 0 {
            if let Err(msg) = self.check_invariants() {
                panic!("simulation invariant violated after event {}: {msg}", self.events);
            }
        }
        Ok(Some(event))
    }

    fn push_wait(&mut self, class: usize, kind: TaskKind) {
        if let Some(w) = &mut self.wait_times {
            w[class][kind_index(kind)].push_back(self.t);
        }
    }

    fn apply(&mut self, i: usize, slot: usize) -> Event {
        let r = self.rates[i];
        match slot {
            0 => {
                let c = &mut self.classes[i];
                c.arrivals += 1;
                c.fresh.q_w += 1;
                self.push_wait(i, TaskKind::Fresh);
                Event::Arrival { class: i }
            }
            1 | 2 => {
                let kind = kind_of(slot - 1);
                let c = &mut self.classes[i];
                c.stations_mut(kind).q_w -= 1;
                c.abandonments += 1;
                if let Some(w) = &mut self.wait_times {
                    let q = &mut w[i][kind_index(kind)];
                    let ix = self.rng.random_range(0..q.len());
                    q.remove(ix);
                }
                Event::Abandon { class: i, kind }
            }
            3 | 4 => {
                let kind = kind_of(slot - 3);
                let to = self.policy.route_on_worker_completion(i, kind, &mut self.rng);
                let c = &mut self.classes[i];
                c.stations_mut(kind).x -= 1;
                let f = c.flows_mut(kind);
                f.worker_done += 1;
                match to {
                    Destination::Judge => {
                        f.w_to_j += 1;
                        c.stations_mut(kind).q_j += 1;
                        self.judge_fifo.push_back((i as u32, kind));
                    }
                    Destination::HumanDirect => {
                        f.w_to_h += 1;
                        c.stations_mut(kind).q_hd += 1;
                        self.human_fifo.push_back((i as u32, kind, HumanPath::Direct));
                    }
                }
                Event::WorkerDone { class: i, kind, to }
            }
            5 | 6 => {
                let kind = kind_of(slot - 5);
                let pass = self.rng.random::<f64>() < r.p_pass[kind_index(kind)];
                let c = &mut self.classes[i];
                c.stations_mut(kind).y -= 1;
                if pass {
                    c.flows_mut(kind).j_to_h += 1;
                    c.stations_mut(kind).q_hj += 1;
                    self.human_fifo.push_back((i as u32, kind, HumanPath::Judge));
                } else {
                    c.flows_mut(kind).j_to_w += 1;
                    c.fresh.q_w += 1;
                    self.push_wait(i, TaskKind::Fresh);
                }
                Event::JudgeDone { class: i, kind, pass }
            }
            _ => {
                let (kind, path) = match slot {
                    7 => (TaskKind::Fresh, HumanPath::Direct),
                    8 => (TaskKind::Fresh, HumanPath::Judge),
                    9 => (TaskKind::Feedback, HumanPath::Direct),
                    _ => (TaskKind::Feedback, HumanPath::Judge),
                };
                let k = kind_index(kind);
                let ok = match path {
                    HumanPath::Direct => r.direct_ok[k],
                    HumanPath::Judge => r.judged_ok[k],
                };
                let pass = self.rng.random::<f64>() < ok;
                let feedback = self.cfg.feedback;
                let c = &mut self.classes[i];
                let s = c.stations_mut(kind);
                match path {
                    HumanPath::Direct => s.z_d -= 1,
                    HumanPath::Judge => s.z_j -= 1,
                }
                let f = c.flows_mut(kind);
                match (path, pass) {
                    (HumanPath::Direct, true) => f.hd_to_c += 1,
                    (HumanPath::Direct, false) => f.hd_to_w += 1,
                    (HumanPath::Judge, true) => f.hj_to_c += 1,
                    (HumanPath::Judge, false) => f.hj_to_w += 1,
                }
                match (pass, kind) {
                    (true, TaskKind::Fresh) => c.completions += 1,
                    (true, TaskKind::Feedback) => c.completions_fb += 1,
                    (false, TaskKind::Feedback) => c.removed += 1,
                    (false, TaskKind::Fresh) if feedback => {
                        c.fb.q_w += 1;
                        self.push_wait(i, TaskKind::Feedback);
                    }
                    (false, TaskKind::Fresh) => {
                        c.fresh.q_w += 1;
                        self.push_wait(i, TaskKind::Fresh);
                    }
                }
                Event::HumanDone { class: i, kind, path, pass }
            }
        }
    }

    /// Starts service wherever a server is free: FCFS at the judge and
    /// human pools, policy admission at the workers.
    fn dispatch(&mut self) {
        let mut busy = self.busy();
        while busy[1] < self.servers[1] {
            let Some((i, kind)) = self.judge_fifo.pop_front() else { break };
            let s = self.classes[i as usize].stations_mut(kind);
            s.q_j -= 1;
            s.y += 1;
            busy[1] += 1;
        }
        while busy[2] < self.servers[2] {
            let Some((i, kind, path)) = self.human_fifo.pop_front() else { break };
            let s = self.classes[i as usize].stations_mut(kind);
            match path {
                HumanPath::Direct => {
                    s.q_hd -= 1;
                    s.z_d += 1;
                }
                HumanPath::Judge => {
                    s.q_hj -= 1;
                    s.z_j += 1;
                }
            }
            busy[2] += 1;
        }
        if busy[0] >= self.servers[0] {
            return;
        }
        for (i, c) in self.classes.iter().enumerate() {
            let w = &mut self.view[i];
            w.waiting = c.fresh.q_w;
            w.waiting_fb = c.fb.q_w;
            w.in_service = c.fresh.x + c.fb.x;
            if let Some(t) = &self.wait_times {
                w.oldest = t[i][0].front().copied();
                w.oldest_fb = t[i][1].front().copied();
            }
        }
        let n = self.cfg.scale_n as f64;
        while busy[0] < self.servers[0] {
            let Some((i, kind)) = self.admission.admit_one(&self.policy, &self.view, n) else {
                break;
            };
            let s = self.classes[i].stations_mut(kind);
            s.q_w -= 1;
            s.x += 1;
            let w = &mut self.view[i];
            match kind {
                TaskKind::Fresh => w.waiting -= 1,
                TaskKind::Feedback => w.waiting_fb -= 1,
            }
            w.in_service += 1;
            if let Some(t) = &mut self.wait_times {
                t[i][kind_index(kind)].pop_front();
                w.oldest = t[i][0].front().copied();
                w.oldest_fb = t[i][1].front().copied();
            }
            busy[0] += 1;
        }
    }

    /// Runs to the horizon.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    pub fn metrics(&self) -> SimMetrics {
        let now = self.counters();
        let base = self.warm.clone().unwrap_or_else(|| now.clone());
        let classes: Vec<ClassMetrics> = now
            .iter()
            .zip(&base)
            .map(|(a, b)| ClassMetrics {
                arrivals: a.arrivals - b.arrivals,
                abandonments: a.abandonments - b.abandonments,
                completions: a.completions - b.completions,
                completions_fb: a.completions_fb - b.completions_fb,
                removed: a.removed - b.removed,
            })
            .collect();
        let span = (self.t.min(self.cfg.horizon_t) - self.cfg.warmup).max(0.0);
        let n = self.cfg.scale_n as f64;
        let reward: f64 = classes
            .iter()
            .zip(&self.rates)
            .map(|(c, r)| r.reward * (c.completions + c.completions_fb) as f64)
            .sum();
        let throughput_rate = if span > 0.0 { reward / (n * span) } else { 0.0 };
        let util = |p: usize| {
            if span > 0.0 && self.servers[p] > 0 {
                self.busy_time[p] / (span * self.servers[p] as f64)
            } else {
                0.0
            }
        };
        let throughput_se = if self.batch_marks.len() == BATCHES + 1 && span > 0.0 {
            let per: Vec<f64> = self
                .batch_marks
                .windows(2)
                .map(|w| (w[1] - w[0]) / (n * span / BATCHES as f64))
                .collect();
            let mean = per.iter().sum::<f64>() / BATCHES as f64;
            let var = per.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
            (var / BATCHES as f64).sqrt()
        } else {
            f64::NAN
        };
        SimMetrics {
            scale_n: self.cfg.scale_n,
            seed: self.cfg.seed,
            events: self.events,
            throughput_rate,
            throughput_se,
            classes,
            trajectory: self.trajectory.clone(),
            class_trajectory: self.class_trajectory.clone(),
            utilization: Utilization {
                worker: util(0),
                judge: util(1),
                human: util(2),
            },
        }
    }
}

/// Simulates one replication to the horizon.
pub fn run(config: &SimConfig, policy: &PolicySpec) -> Result<SimMetrics> {
    let mut sim = Simulation::new(config.clone(), policy.clone())?;
    sim.run_to_end()?;
    Ok(sim.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    /// Fewer than [`MIN_SAMPLES`] samples in the latter half.
    Inconclusive,
}

pub const MIN_SAMPLES: usize = 10;
pub const R2_THRESHOLD: f64 = 0.9;
pub const SLOPE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueVerdict {
    pub stability: Stability,
    pub slope: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares fit of `y` on `t`; unstable iff `R^2 > 0.9` and slope `> 1`.
pub fn classify_growth(points: &[(f64, f64)]) -> QueueVerdict {
    let m = points.len();
    if m < MIN_SAMPLES {
        return QueueVerdict {
            stability: Stability::Inconclusive,
            slope: 0.0,
            r_squared: 0.0,
            samples: m,
        };
    }
    let mf = m as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / mf;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / mf;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in points {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let r_squared = if stt > 0.0 && syy > 0.0 {
        (sty * sty) / (stt * syy)
    } else {
        0.0
    };
    let unstable = r_squared > R2_THRESHOLD && slope > SLOPE_THRESHOLD;
    QueueVerdict {
        stability: if unstable { Stability::Unstable } else { Stability::Stable },
        slope,
        r_squared,
        samples: m,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub judge: QueueVerdict,
    pub human: QueueVerdict,
}

impl StabilityReport {
    /// Neither queue is classified as growing.
    pub fn is_stable(&self) -> bool {
        self.judge.stability != Stability::Unstable && self.human.stability != Stability::Unstable
    }

    pub fn is_conclusive(&self) -> bool {
        self.judge.stability != Stability::Inconclusive && self.human.stability != Stability::Inconclusive
    }
}

/// Regresses total judge and human queue lengths over `[T/2, T]`.
pub fn detect_instability(trajectory: &[QueueSample], horizon_t: f64) -> StabilityReport {
    let late: Vec<&QueueSample> = trajectory
        .iter()
        .filter(|s| s.time >= horizon_t / 2.0 && s.time <= horizon_t)
        .collect();
    let series = |f: fn(&QueueSample) -> u64| {
        late.iter().map(|s| (s.time, f(s) as f64)).collect::<Vec<_>>()
    };
    StabilityReport {
        judge: classify_growth(&series(|s| s.q_j)),
        human: classify_growth(&series(|s| s.q_h)),
    }
}
