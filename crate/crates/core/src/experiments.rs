//! Simulation studies and figure series: asymptotic optimality gap on random
//! instances, policy comparison with stability classification, and sweeps
//! of the fluid and closed-form solutions over human capacity.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{solve_capacity_plan, solve_feedback, solve_overloaded, solve_steady_state};
use crate::instance::{presets, Budget, ClassParams, Instance};
use crate::phases::{abundant_phi, grid, single_class_phase, two_class_report, NormalizedCapacities};
use crate::plot::{Chart, Marker, Series};
use crate::policies::{PolicyKind, PolicySpec};
use crate::quality::QualityParams;
use crate::simulator::{detect_instability, integerized, run, SimConfig, Stability, StabilityReport, CSV_HEADER};

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "JUDGEFLOW_THREADS";

/// Mixes a master seed and an index into an independent 64-bit seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rayon pool sized by `JUDGEFLOW_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Usage(format!("{THREADS_ENV}={v} is not a thread count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

/// Writes the versioned header, a column line and fixed-precision rows.
/// Non-finite cells are left empty.
pub fn write_table<W: Write>(mut w: W, columns: &[&str], rows: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    writeln!(w, "{}", columns.join(","))?;
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .map(|v| if v.is_finite() { format!("{v:.6}") } else { String::new() })
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Parameter ranges for random instances; every draw is independent and uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInstanceSpec {
    pub min_classes: usize,
    pub max_classes: usize,
    pub alpha: (f64, f64),
    pub beta_i: (f64, f64),
    pub beta_ii: (f64, f64),
    pub mu_w: (f64, f64),
    pub mu_j: (f64, f64),
    pub mu_h: (f64, f64),
    pub lambda: (f64, f64),
    pub theta: (f64, f64),
    pub n_w: (f64, f64),
    pub n_j: (f64, f64),
    pub n_h: (f64, f64),
    pub seed: u64,
}

impl Default for RandomInstanceSpec {
    fn default() -> Self {
        RandomInstanceSpec {
            min_classes: 3,
            max_classes: 5,
            alpha: (0.20, 0.35),
            beta_i: (0.05, 0.15),
            beta_ii: (0.10, 0.25),
            mu_w: (18.0, 22.0),
            mu_j: (28.0, 32.0),
            mu_h: (9.0, 11.0),
            lambda: (50.0, 70.0),
            theta: (0.4, 0.6),
            n_w: (4.0, 6.0),
            n_j: (2.0, 4.0),
            n_h: (5.0, 8.0),
            seed: 42,
        }
    }
}

impl RandomInstanceSpec {
    /// Instance number `id`; the same `(seed, id)` always gives the same instance.
    pub fn sample(&self, id: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, id as u64));
        let mut u = |r: (f64, f64)| if r.1 > r.0 { rng.random_range(r.0..r.1) } else { r.0 };
        let k = self.min_classes + (u((0.0, 1.0)) * (self.max_classes - self.min_classes + 1) as f64) as usize;
        let k = k.min(self.max_classes);
        let classes = (0..k)
            .map(|_| {
                let alpha = u(self.alpha);
                let beta_i = u(self.beta_i);
                let beta_ii = u(self.beta_ii);
                ClassParams {
                    lambda: u(self.lambda),
                    theta: u(self.theta),
                    mu_w: u(self.mu_w),
                    mu_j: u(self.mu_j),
                    mu_h: u(self.mu_h),
                    reward: 1.0,
                    quality: QualityParams::new(alpha, beta_i, beta_ii),
                    kappa: None,
                }
            })
            .collect();
        Instance {
            classes,
            n_w: u(self.n_w),
            n_j: u(self.n_j),
            n_h: u(self.n_h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub instance: usize,
    pub n: u32,
    pub seed: u64,
    pub r_star: f64,
    pub r_sim: f64,
    /// Batch-means standard error of `r_sim`.
    pub r_sim_se: f64,
    pub gap_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub instance: usize,
    pub n: u32,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub n: u32,
    pub runs: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    /// Standard error of the mean gap across runs.
    pub se_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConfig {
    pub spec: RandomInstanceSpec,
    pub instances: usize,
    pub scales: Vec<u32>,
    pub replications: usize,
    pub horizon_t: f64,
    pub warmup: f64,
    pub master_seed: u64,
}

impl Default for AsymptoticConfig {
    fn default() -> Self {
        AsymptoticConfig {
            spec: RandomInstanceSpec::default(),
            instances: 20,
            scales: vec![1, 2, 5, 10, 20, 50],
            replications: 5,
            horizon_t: 500.0,
            warmup: 100.0,
            master_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticStudy {
    pub results: Vec<GapResult>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<ScaleSummary>,
}

impl AsymptoticStudy {
    pub fn summary_for(&self, n: u32) -> Option<&ScaleSummary> {
        self.summary.iter().find(|s| s.n == n)
    }

    /// `gap.csv`: one row per completed run.
    pub fn write_gap_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(w, "instance,n,seed,R_star,R_sim,gap_pct")?;
        for r in &self.results {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.instance, r.n, r.seed, r.r_star, r.r_sim, r.gap_percent
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let rows: Vec<Vec<f64>> = self
            .summary
            .iter()
            .map(|s| vec![s.n as f64, s.runs as f64, s.mean_gap, s.std_gap, s.se_gap])
            .collect();
        write_table(w, &["n", "runs", "mean_gap_pct", "std_gap_pct", "se_gap_pct"], &rows)
    }

    pub fn chart(&self) -> Chart {
        let mut c = Chart::new("Optimality gap of fluid tracking", "scale n", "gap (%)");
        let mean: Vec<(f64, f64)> = self.summary.iter().map(|s| (s.n as f64, s.mean_gap)).collect();
        let hi: Vec<(f64, f64)> = self.summary.iter().map(|s| (s.n as f64, s.mean_gap + s.std_gap)).collect();
        let lo: Vec<(f64, f64)> = self.summary.iter().map(|s| (s.n as f64, s.mean_gap - s.std_gap)).collect();
        let marks = vec![Marker::Circle; mean.len()];
        c.push(Series::line("mean", mean).with_markers(marks));
        c.push(Series::line("+1 sd", hi).dashed());
        c.push(Series::line("-1 sd", lo).dashed());
        c
    }
}

/// Seed of replication `r` under `master`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, r as u64)
}

/// Simulates fluid tracking on one instance at scale `n`. `R*` is the LP
/// value on the integerized capacities the simulation actually uses.
pub fn gap_run(inst: &Instance, id: usize, n: u32, seed: u64, horizon_t: f64, warmup: f64) -> Result<GapResult> {
    let planned = integerized(inst, n);
    let lp = solve_steady_state(&planned)?;
    let policy = PolicySpec::from_fluid(PolicyKind::FluidTracking, &lp)?;
    let cfg = SimConfig {
        instance: inst.clone(),
        scale_n: n,
        horizon_t,
        warmup,
        seed,
        sample_interval: 1.0,
        feedback: false,
        record_classes: false,
    };
    let m = run(&cfg, &policy)?;
    let gap_percent = if lp.objective > 0.0 {
        (lp.objective - m.throughput_rate) / lp.objective * 100.0
    } else {
        0.0
    };
    Ok(GapResult {
        instance: id,
        n,
        seed,
        r_star: lp.objective,
        r_sim: m.throughput_rate,
        r_sim_se: m.throughput_se,
        gap_percent,
    })
}

pub fn run_asymptotic_study(cfg: &AsymptoticConfig) -> Result<AsymptoticStudy> {
    if cfg.instances == 0 || cfg.replications == 0 || cfg.scales.is_empty() {
        return Err(Error::Usage("study needs at least one instance, scale and replication".into()));
    }
    if let Some(&n) = cfg.scales.iter().find(|&&n| n == 0) {
        return Err(Error::domain("scales", format!("scale {n} must be at least 1")));
    }
    let instances: Vec<Instance> = (0..cfg.instances).map(|i| cfg.spec.sample(i)).collect();
    let mut tasks = Vec::new();
    for id in 0..cfg.instances {
        for &n in &cfg.scales {
            for r in 0..cfg.replications {
                tasks.push((id, n, replication_seed(cfg.master_seed, r)));
            }
        }
    }
    let pool = thread_pool()?;
    let outcomes: Vec<(usize, u32, u64, Result<GapResult>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(id, n, seed)| (id, n, seed, gap_run(&instances[id], id, n, seed, cfg.horizon_t, cfg.warmup)))
            .collect()
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (instance, n, seed, out) in outcomes {
        match out {
            Ok(r) => results.push(r),
            Err(e) => failures.push(RunFailure {
                instance,
                n,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let summary = cfg
        .scales
        .iter()
        .map(|&n| {
            let gaps: Vec<f64> = results.iter().filter(|r| r.n == n).map(|r| r.gap_percent).collect();
            let (mean_gap, std_gap) = mean_std(&gaps);
            ScaleSummary {
                n,
                runs: gaps.len(),
                mean_gap,
                std_gap,
                se_gap: std_gap / (gaps.len() as f64).sqrt(),
            }
        })
        .collect();
    Ok(AsymptoticStudy {
        results,
        failures,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCompareConfig {
    pub instance: Instance,
    pub scale_n: u32,
    pub n_h_grid: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub horizon_t: f64,
    pub warmup: f64,
    pub seeds: usize,
    pub master_seed: u64,
}

impl Default for PolicyCompareConfig {
    fn default() -> Self {
        PolicyCompareConfig {
            instance: presets::two_class(14.0),
            scale_n: 10,
            n_h_grid: (3..=22).map(f64::from).collect(),
            policies: vec![
                PolicyKind::FluidTracking,
                PolicyKind::GreedyOptimal,
                PolicyKind::AlwaysJudge,
                PolicyKind::NeverJudge,
            ],
            horizon_t: 250.0,
            warmup: 50.0,
            seeds: 3,
            master_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub n_h: f64,
    pub seed: u64,
    pub throughput: f64,
    pub stability: StabilityReport,
}

impl PolicyRun {
    pub fn stable(&self) -> bool {
        self.stability.is_stable()
    }

    /// The queue reported in the CSV: an unstable one if any (steeper first),
    /// else the steeper of the two.
    pub fn headline(&self) -> (&'static str, f64, f64) {
        let j = &self.stability.judge;
        let h = &self.stability.human;
        let judge_first = match (j.stability == Stability::Unstable, h.stability == Stability::Unstable) {
            (true, false) => true,
            (false, true) => false,
            _ => j.slope >= h.slope,
        };
        if judge_first {
            ("judge", j.slope, j.r_squared)
        } else {
            ("human", h.slope, h.r_squared)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub policy: PolicyKind,
    pub n_h: f64,
    pub mean_throughput: f64,
    pub se_throughput: f64,
    /// Stable at every seed.
    pub stable: bool,
    pub judge_unstable_seeds: usize,
    pub human_unstable_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub runs: Vec<PolicyRun>,
    pub points: Vec<PolicyPoint>,
}

impl PolicyComparison {
    pub fn point(&self, policy: PolicyKind, n_h: f64) -> Option<&PolicyPoint> {
        self.points
            .iter()
            .find(|p| p.policy == policy && (p.n_h - n_h).abs() < 1e-9)
    }

    /// `policy_compare.csv`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(w, "policy,n_h,seed,throughput,stable,slope,r2,queue")?;
        for r in &self.runs {
            let (queue, slope, r2) = r.headline();
            writeln!(
                w,
                "{},{:.6},{},{:.6},{},{:.6},{:.6},{}",
                r.policy,
                r.n_h,
                r.seed,
                r.throughput,
                r.stable(),
                slope,
                r2,
                queue
            )?;
        }
        Ok(())
    }

    pub fn chart(&self) -> Chart {
        let mut c = Chart::new("Throughput by policy (o stable, x unstable)", "n_h", "throughput");
        let mut kinds: Vec<PolicyKind> = Vec::new();
        for p in &self.points {
            if !kinds.contains(&p.policy) {
                kinds.push(p.policy);
            }
        }
        for k in kinds {
            let pts: Vec<&PolicyPoint> = self.points.iter().filter(|p| p.policy == k).collect();
            let marks = pts
                .iter()
                .map(|p| if p.stable { Marker::Circle } else { Marker::Cross })
                .collect();
            let xy = pts.iter().map(|p| (p.n_h, p.mean_throughput)).collect();
            c.push(Series::line(k.name(), xy).with_markers(marks));
        }
        c
    }
}

pub fn run_policy_comparison(cfg: &PolicyCompareConfig) -> Result<PolicyComparison> {
    cfg.instance.validate()?;
    if cfg.seeds == 0 || cfg.n_h_grid.is_empty() || cfg.policies.is_empty() {
        return Err(Error::Usage("comparison needs at least one seed, n_h value and policy".into()));
    }
    let mut tasks = Vec::new();
    for &policy in &cfg.policies {
        for &n_h in &cfg.n_h_grid {
            for s in 0..cfg.seeds {
                tasks.push((policy, n_h, replication_seed(cfg.master_seed, s)));
            }
        }
    }
    let pool = thread_pool()?;
    let runs: Vec<PolicyRun> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(policy, n_h, seed)| {
                let inst = cfg.instance.with_n_h(n_h);
                let spec = PolicySpec::for_instance(policy, &integerized(&inst, cfg.scale_n), false)?;
                let sim = SimConfig {
                    instance: inst,
                    scale_n: cfg.scale_n,
                    horizon_t: cfg.horizon_t,
                    warmup: cfg.warmup,
                    seed,
                    sample_interval: 1.0,
                    feedback: false,
                    record_classes: false,
                };
                let m = run(&sim, &spec)?;
                Ok(PolicyRun {
                    policy,
                    n_h,
                    seed,
                    throughput: m.throughput_rate,
                    stability: detect_instability(&m.trajectory, cfg.horizon_t),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut points = Vec::new();
    for &policy in &cfg.policies {
        for &n_h in &cfg.n_h_grid {
            let group: Vec<&PolicyRun> = runs.iter().filter(|r| r.policy == policy && r.n_h == n_h).collect();
            let thr: Vec<f64> = group.iter().map(|r| r.throughput).collect();
            let (mean, sd) = mean_std(&thr);
            points.push(PolicyPoint {
                policy,
                n_h,
                mean_throughput: mean,
                se_throughput: sd / (thr.len() as f64).sqrt(),
                stable: group.iter().all(|r| r.stable()),
                judge_unstable_seeds: group
                    .iter()
                    .filter(|r| r.stability.judge.stability == Stability::Unstable)
                    .count(),
                human_unstable_seeds: group
                    .iter()
                    .filter(|r| r.stability.human.stability == Stability::Unstable)
                    .count(),
            });
        }
    }
    Ok(PolicyComparison { runs, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FigureId {
    #[serde(rename = "2a")]
    Fig2a,
    #[serde(rename = "2b")]
    Fig2b,
    #[serde(rename = "3")]
    Fig3,
    #[serde(rename = "4")]
    Fig4,
    #[serde(rename = "6")]
    Fig6,
}

impl FigureId {
    pub const ALL: [FigureId; 5] = [FigureId::Fig2a, FigureId::Fig2b, FigureId::Fig3, FigureId::Fig4, FigureId::Fig6];

    pub fn label(self) -> &'static str {
        match self {
            FigureId::Fig2a => "2a",
            FigureId::Fig2b => "2b",
            FigureId::Fig3 => "3",
            FigureId::Fig4 => "4",
            FigureId::Fig6 => "6",
        }
    }

    /// Instance the figure sweeps when none is supplied.
    pub fn default_instance(self) -> Instance {
        match self {
            FigureId::Fig2a => presets::single_class(3.0),
            FigureId::Fig2b => presets::single_class_abundant(3.0),
            FigureId::Fig3 | FigureId::Fig6 => presets::two_class(3.0),
            FigureId::Fig4 => presets::single_class_feedback(3.0),
        }
    }

    /// Default `n_h` sweep.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            FigureId::Fig2a | FigureId::Fig4 => grid(3.0, 12.0, 0.25),
            FigureId::Fig2b => grid(3.0, 22.0, 0.25),
            FigureId::Fig3 => grid(3.0, 22.0, 0.25),
            FigureId::Fig6 => grid(3.0, 22.0, 0.5),
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_prefix("fig").unwrap_or(&s);
        FigureId::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| Error::Usage(format!("unknown figure `{s}` (expected one of 2a, 2b, 3, 4, 6)")))
    }
}

/// A sweep table plus its chart.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSeries {
    pub id: FigureId,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub chart: Chart,
}

impl FigureSeries {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_table(w, &self.columns, &self.rows)
    }

    /// Writes `fig{ID}.csv` and `fig{ID}.svg` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("fig{}.csv", self.id));
        let svg = dir.join(format!("fig{}.svg", self.id));
        self.write_csv(std::io::BufWriter::new(fs::File::create(&csv)?))?;
        fs::write(&svg, self.chart.to_svg())?;
        Ok((csv, svg))
    }
}

fn xy(rows: &[Vec<f64>], col: usize) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r[0], r[col])).collect()
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

/// Overrides for a figure sweep; `None` fields take the figure defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FigureInput {
    pub instance: Option<Instance>,
    /// Used by the capacity-planning figure only.
    pub budget: Option<Budget>,
    pub n_h_grid: Option<Vec<f64>>,
}

pub fn emit_figure_series(id: FigureId, input: &FigureInput) -> Result<FigureSeries> {
    let base = input.instance.clone().unwrap_or_else(|| id.default_instance());
    base.validate()?;
    let sweep = input.n_h_grid.clone().unwrap_or_else(|| id.default_grid());
    if sweep.is_empty() {
        return Err(Error::Usage("empty n_h grid".into()));
    }
    match id {
        FigureId::Fig2a | FigureId::Fig2b => single_class_series(id, &base, &sweep),
        FigureId::Fig3 => two_class_series(&base, &sweep),
        FigureId::Fig4 => feedback_series(&base, &sweep),
        FigureId::Fig6 => {
            let budget = input.budget.unwrap_or_else(presets::two_class_budget);
            capacity_series(&base, &budget, &sweep)
        }
    }
}

fn single_class_series(id: FigureId, base: &Instance, sweep: &[f64]) -> Result<FigureSeries> {
    let c = &base.classes[0];
    let d = c.derived(0)?;
    let mut rows = Vec::with_capacity(sweep.len());
    let mut report0 = None;
    for &n_h in sweep {
        let inst = base.with_n_h(n_h);
        let r = single_class_phase(&inst)?;
        let lp = solve_steady_state(&inst)?;
        let free = solve_overloaded(&inst)?;
        let caps = NormalizedCapacities::new(c.mu_w, c.mu_j, c.mu_h, inst.n_w, inst.n_j, n_h);
        let l = &lp.classes[0];
        rows.push(vec![
            n_h,
            l.phi,
            r.phi_star.unwrap_or(f64::NAN),
            free.classes[0].phi,
            abundant_phi(&caps, d.p_pass),
            l.x,
            l.v,
            ratio(lp.worker_load(), inst.n_w),
            ratio(lp.judge_load(), inst.n_j),
            ratio(lp.human_load(), n_h),
            r.phase.map_or(f64::NAN, f64::from),
        ]);
        report0.get_or_insert(r);
    }
    let r = report0.ok_or_else(|| Error::Usage("empty n_h grid".into()))?;
    let title = match id {
        FigureId::Fig2a => "Single class: optimal judge routing",
        _ => "Single class, abundant workers",
    };
    let mut chart = Chart::new(title, "n_h", "phi* / utilization");
    chart.push(Series::line("phi* (LP)", xy(&rows, 1)));
    if id == FigureId::Fig2b {
        chart.push(Series::line("phi* (backlogged)", xy(&rows, 3)));
    }
    chart.push(Series::line("worker util", xy(&rows, 7)).dashed());
    chart.push(Series::line("judge util", xy(&rows, 8)).dashed());
    chart.push(Series::line("human util", xy(&rows, 9)).dashed());
    chart.vlines = match id {
        FigureId::Fig2a => vec![r.thresholds.t1, r.thresholds.t2, r.thresholds.t3],
        _ => vec![r.t_aw],
    };
    Ok(FigureSeries {
        id,
        columns: vec![
            "n_h",
            "phi_lp",
            "phi_closed",
            "phi_backlogged",
            "phi_abundant_formula",
            "x",
            "v",
            "util_worker",
            "util_judge",
            "util_human",
            "phase",
        ],
        rows,
        chart,
    })
}

fn two_class_series(base: &Instance, sweep: &[f64]) -> Result<FigureSeries> {
    if base.num_classes() != 2 {
        return Err(Error::Usage("figure 3 needs a 2-class instance".into()));
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for &n_h in sweep {
        let inst = base.with_n_h(n_h);
        let free = solve_overloaded(&inst)?;
        let lp = solve_steady_state(&inst)?;
        rows.push(vec![
            n_h,
            free.classes[0].v,
            free.classes[1].v,
            lp.classes[0].v,
            lp.classes[1].v,
            free.classes[0].phi,
            free.classes[1].phi,
        ]);
    }
    let mut chart = Chart::new("Two classes: judge allocation", "n_h", "v_i*");
    chart.push(Series::line("class 1", xy(&rows, 1)));
    chart.push(Series::line("class 2", xy(&rows, 2)));
    chart.push(Series::line("class 1 (arrival caps)", xy(&rows, 3)).dashed());
    chart.push(Series::line("class 2 (arrival caps)", xy(&rows, 4)).dashed());
    if let Ok(r) = two_class_report(base) {
        chart.vlines.push(r.lower_threshold);
        if let Some((a, b)) = r.complementarity_interval {
            chart.vlines.extend([a, b]);
        }
        chart.vlines.push(r.bypass_threshold);
    }
    Ok(FigureSeries {
        id: FigureId::Fig3,
        columns: vec!["n_h", "v1", "v2", "v1_capped", "v2_capped", "phi1", "phi2"],
        rows,
        chart,
    })
}

fn feedback_series(base: &Instance, sweep: &[f64]) -> Result<FigureSeries> {
    let mut rows = Vec::with_capacity(sweep.len());
    for &n_h in sweep {
        let inst = base.with_n_h(n_h);
        let sol = solve_feedback(&inst)?;
        let (mut jf, mut jb) = (0.0, 0.0);
        for (c, p) in sol.classes.iter().zip(&inst.classes) {
            jf += p.mu_w / p.mu_j * c.v;
            jb += p.mu_w / p.mu_j * c.v_fb;
        }
        let c = &sol.classes[0];
        rows.push(vec![
            n_h,
            c.phi,
            c.phi_fb,
            ratio(jf, inst.n_j),
            ratio(jb, inst.n_j),
            c.x,
            c.x_fb,
            c.v,
            c.v_fb,
            sol.objective,
        ]);
    }
    let mut chart = Chart::new("Rework model: routing and judge load", "n_h", "fraction");
    chart.push(Series::line("phi*", xy(&rows, 1)));
    chart.push(Series::line("phi_fb*", xy(&rows, 2)));
    chart.push(Series::line("judge util (fresh)", xy(&rows, 3)).dashed());
    chart.push(Series::line("judge util (feedback)", xy(&rows, 4)).dashed());
    Ok(FigureSeries {
        id: FigureId::Fig4,
        columns: vec![
            "n_h",
            "phi",
            "phi_fb",
            "judge_util_fresh",
            "judge_util_fb",
            "x",
            "x_fb",
            "v",
            "v_fb",
            "objective",
        ],
        rows,
        chart,
    })
}

/// Fixed `(n_w, n_j)` splits compared against planning.
pub const FIXED_SPLITS: [(f64, f64); 3] = [(5.0, 5.0), (7.0, 3.0), (10.0, 0.0)];

fn capacity_series(base: &Instance, budget: &Budget, sweep: &[f64]) -> Result<FigureSeries> {
    let mut rows = Vec::with_capacity(sweep.len());
    for &n_h in sweep {
        let inst = base.with_n_h(n_h);
        let plan = solve_capacity_plan(&inst, budget)?;
        let mut row = vec![n_h, plan.n_w, plan.n_j, plan.solution.objective];
        for (w, j) in FIXED_SPLITS {
            row.push(solve_steady_state(&inst.with_capacities(w, j, n_h))?.objective);
        }
        rows.push(row);
    }
    let mut chart = Chart::new("Capacity planning vs fixed splits", "n_h", "throughput");
    chart.push(Series::line("planned", xy(&rows, 3)));
    for (k, (w, j)) in FIXED_SPLITS.iter().enumerate() {
        chart.push(Series::line(format!("fixed ({w}, {j})"), xy(&rows, 4 + k)).dashed());
    }
    Ok(FigureSeries {
        id: FigureId::Fig6,
        columns: vec![
            "n_h",
            "plan_n_w",
            "plan_n_j",
            "plan_throughput",
            "fixed_5_5",
            "fixed_7_3",
            "fixed_10_0",
        ],
        rows,
        chart,
    })
}
