use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use judgeflow::experiments::{
    emit_figure_series, run_asymptotic_study, run_policy_comparison, AsymptoticConfig, FigureId, FigureInput,
    PolicyCompareConfig,
};
use judgeflow::fluid::{solve_capacity_plan, solve_feedback, solve_steady_state, FeedbackFluidSolution, FluidSolution};
use judgeflow::instance::{presets, InstanceFile, SimSettings};
use judgeflow::phases::{grid, single_class_phase, two_class_report, verify_phase_against_lp, PhaseReport, TwoClassReport};
use judgeflow::simulator::{detect_instability, integerized, run, SimConfig, Stability};
use judgeflow::{Error, Instance, PolicyKind, PolicySpec};

#[derive(Parser)]
#[command(name = "judgeflow", version, about = "Fluid models and simulation of worker/judge/human review pipelines")]
struct Cli {
    /// Master seed for anything random (default: the instance's [sim] seed, else 42).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct InstanceArgs {
    /// Instance TOML file.
    #[arg(long)]
    instance: PathBuf,

    /// Override the human capacity n_h.
    #[arg(long)]
    nh: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the steady-state fluid LP.
    Solve {
        #[command(flatten)]
        input: InstanceArgs,
        /// Solve the rework model instead (every class needs kappa).
        #[arg(long)]
        feedback: bool,
        /// Also write the solution as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Closed-form phase analysis for one or two classes.
    Phases {
        #[command(flatten)]
        input: InstanceArgs,
        /// Check the closed forms against the LP on `lo:hi:step` or `a,b,c`.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Simulate the stochastic system under a routing policy.
    Simulate {
        #[command(flatten)]
        input: InstanceArgs,
        /// fluid, greedy-optimal, always-judge or never-judge.
        #[arg(long, default_value = "fluid")]
        policy: String,
        #[arg(long)]
        feedback: bool,
        /// Scale n; capacities and arrival rates are multiplied by it.
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        warmup: Option<f64>,
    },
    /// Choose worker and judge capacity under the instance's budget.
    CapacityPlan {
        #[command(flatten)]
        input: InstanceArgs,
    },
    /// Multi-run simulation studies.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Write the CSV and SVG for one figure (2a, 2b, 3, 4 or 6).
    Figure {
        id: String,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        grid: Option<String>,
    },
}

#[derive(Subcommand)]
enum Experiment {
    /// Optimality gap of fluid tracking across scales on random instances.
    Asymptotic {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value = "1,2,5,10,20,50")]
        scales: String,
        #[arg(long, default_value_t = 5)]
        replications: usize,
        #[arg(long, default_value_t = 500.0)]
        horizon: f64,
        #[arg(long, default_value_t = 100.0)]
        warmup: f64,
    },
    /// Throughput and stability of each policy across human capacity.
    PolicyCompare {
        /// Two-class instance (default: the built-in reversal example).
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, default_value = "3:22:1")]
        grid: String,
        #[arg(long, default_value_t = 10)]
        scale: u32,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 250.0)]
        horizon: f64,
        #[arg(long, default_value_t = 50.0)]
        warmup: f64,
        /// Comma-separated policy names.
        #[arg(long, default_value = "fluid,greedy-optimal,always-judge,never-judge")]
        policies: String,
    },
}

/// A failure and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn domain(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = out.flush();
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut impl Write) -> CliResult {
    match &cli.command {
        Command::Solve { input, feedback, json } => {
            let (file, inst) = load(input)?;
            header(out, "solve", seed_of(cli, &file))?;
            cmd_solve(out, &inst, *feedback, json.as_deref())
        }
        Command::Phases { input, grid } => {
            let (file, inst) = load(input)?;
            header(out, "phases", seed_of(cli, &file))?;
            cmd_phases(out, &inst, grid.as_deref())
        }
        Command::Simulate {
            input,
            policy,
            feedback,
            scale,
            horizon,
            warmup,
        } => {
            let (file, inst) = load(input)?;
            let seed = seed_of(cli, &file);
            let mut settings = file.sim.unwrap_or_default();
            settings.seed = seed;
            settings.scale_n = scale.unwrap_or(settings.scale_n);
            settings.horizon_t = horizon.unwrap_or(settings.horizon_t);
            settings.warmup = warmup.unwrap_or(settings.warmup);
            header(out, "simulate", seed)?;
            cmd_simulate(out, inst, &settings, policy, *feedback, cli.out.as_deref())
        }
        Command::CapacityPlan { input } => {
            let (file, inst) = load(input)?;
            header(out, "capacity-plan", seed_of(cli, &file))?;
            let budget = file
                .budget
                .ok_or_else(|| domain(format!("{}: no [budget] section", input.instance.display())))?;
            cmd_capacity_plan(out, &inst, &budget)
        }
        Command::Experiment(Experiment::Asymptotic {
            instances,
            scales,
            replications,
            horizon,
            warmup,
        }) => {
            let seed = cli.seed.unwrap_or(42);
            header(out, "experiment asymptotic", seed)?;
            let scales = parse_list::<u32>(scales, "--scales")?;
            let cfg = AsymptoticConfig {
                instances: *instances,
                scales,
                replications: *replications,
                horizon_t: *horizon,
                warmup: *warmup,
                master_seed: seed,
                ..Default::default()
            };
            cmd_asymptotic(out, &cfg, &out_dir(cli))
        }
        Command::Experiment(Experiment::PolicyCompare {
            instance,
            grid,
            scale,
            seeds,
            horizon,
            warmup,
            policies,
        }) => {
            let seed = cli.seed.unwrap_or(42);
            header(out, "experiment policy-compare", seed)?;
            let inst = match instance {
                Some(p) => InstanceFile::load(p)?.instance()?,
                None => presets::two_class(14.0),
            };
            let policies = policies
                .split(',')
                .map(|p| p.trim().parse::<PolicyKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = PolicyCompareConfig {
                instance: inst,
                scale_n: *scale,
                n_h_grid: parse_grid(grid)?,
                policies,
                horizon_t: *horizon,
                warmup: *warmup,
                seeds: *seeds,
                master_seed: seed,
            };
            cmd_policy_compare(out, &cfg, &out_dir(cli))
        }
        Command::Figure { id, instance, grid } => {
            let id: FigureId = id.parse()?;
            let mut input = FigureInput::default();
            if let Some(p) = instance {
                let file = InstanceFile::load(p)?;
                input.instance = Some(file.instance()?);
                input.budget = file.budget;
            }
            if let Some(g) = grid {
                input.n_h_grid = Some(parse_grid(g)?);
            }
            header(out, &format!("figure {}", id.label()), cli.seed.unwrap_or(42))?;
            let series = emit_figure_series(id, &input)?;
            let dir = out_dir(cli);
            let (csv, svg) = series.write_to(&dir)?;
            writeln!(out, "rows: {}", series.rows.len())?;
            writeln!(out, "wrote {}", csv.display())?;
            writeln!(out, "wrote {}", svg.display())?;
            Ok(())
        }
    }
}

fn load(input: &InstanceArgs) -> CliResult<(InstanceFile, Instance)> {
    let file = InstanceFile::load(&input.instance)?;
    let mut inst = file.instance()?;
    if let Some(n_h) = input.nh {
        inst = inst.with_n_h(n_h);
        inst.validate()?;
    }
    Ok((file, inst))
}

fn seed_of(cli: &Cli, file: &InstanceFile) -> u64 {
    cli.seed.or(file.sim.map(|s| s.seed)).unwrap_or(42)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn header(out: &mut impl Write, command: &str, seed: u64) -> io::Result<()> {
    writeln!(out, "# judgeflow {} {command} seed {seed}", env!("CARGO_PKG_VERSION"))
}

/// Parses `lo:hi:step` (inclusive) or a comma-separated list.
fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v = parse_list::<f64>(&parts.join(","), "--grid")?;
        if !(v[2] > 0.0 && v[1] >= v[0]) {
            return Err(usage(format!("--grid `{s}`: need lo <= hi and step > 0")));
        }
        return Ok(grid(v[0], v[1], v[2]));
    }
    let v = parse_list::<f64>(s, "--grid")?;
    if v.is_empty() {
        return Err(usage("--grid is empty"));
    }
    Ok(v)
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("{flag}: cannot parse `{}`", p.trim())))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| domain(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_solve(out: &mut impl Write, inst: &Instance, feedback: bool, json: Option<&Path>) -> CliResult {
    writeln!(
        out,
        "capacities: n_w {:.6}  n_j {:.6}  n_h {:.6}",
        inst.n_w, inst.n_j, inst.n_h
    )?;
    if feedback {
        let sol = solve_feedback(inst)?;
        print_feedback(out, &sol)?;
        if let Some(p) = json {
            write_json(p, &sol)?;
        }
    } else {
        let sol = solve_steady_state(inst)?;
        print_fluid(out, &sol)?;
        if let Some(p) = json {
            write_json(p, &sol)?;
        }
    }
    Ok(())
}

fn print_fluid(out: &mut impl Write, sol: &FluidSolution) -> io::Result<()> {
    writeln!(out, "R* = {:.6}", sol.objective)?;
    writeln!(
        out,
        "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "class", "x", "v", "y", "z_d", "z_j", "q_w", "phi"
    )?;
    for (i, c) in sol.classes.iter().enumerate() {
        writeln!(
            out,
            "{:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            i + 1,
            c.x,
            c.v,
            c.y,
            c.z_d,
            c.z_j,
            c.q_w,
            c.phi
        )?;
    }
    let phi: Vec<String> = sol.classes.iter().map(|c| format!("{:.6}", c.phi)).collect();
    writeln!(out, "phi* = {}", phi.join(", "))?;
    let b = &sol.binding;
    writeln!(
        out,
        "binding: worker {}  judge {}  human {}",
        b.worker, b.judge, b.human
    )
}

fn print_feedback(out: &mut impl Write, sol: &FeedbackFluidSolution) -> io::Result<()> {
    writeln!(out, "R* = {:.6}", sol.objective)?;
    writeln!(
        out,
        "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "class", "x", "v", "x_fb", "v_fb", "phi", "phi_fb"
    )?;
    for (i, c) in sol.classes.iter().enumerate() {
        writeln!(
            out,
            "{:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            i + 1,
            c.x,
            c.v,
            c.x_fb,
            c.v_fb,
            c.phi,
            c.phi_fb
        )?;
    }
    let phi: Vec<String> = sol.classes.iter().map(|c| format!("{:.6}", c.phi)).collect();
    writeln!(out, "phi* = {}", phi.join(", "))
}

fn cmd_phases(out: &mut impl Write, inst: &Instance, grid: Option<&str>) -> CliResult {
    match inst.num_classes() {
        1 => print_single(out, &single_class_phase(inst)?)?,
        2 => print_two(out, &two_class_report(inst)?)?,
        _ => return Err(domain("closed-form analysis requires 1 or 2 classes")),
    }
    if let Some(g) = grid {
        let points = parse_grid(g)?;
        let checks = verify_phase_against_lp(inst, &points)?;
        writeln!(out, "{:>10}  {:<24}  {:<24}  match", "n_h", "closed_form", "lp")?;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
        for c in &checks {
            writeln!(
                out,
                "{:>10.4}  {:<24}  {:<24}  {}",
                c.n_h,
                join(&c.closed_form),
                join(&c.lp),
                if c.matches { "yes" } else { "NO" }
            )?;
        }
        let bad: Vec<String> = checks.iter().filter(|c| !c.matches).map(|c| format!("{:.4}", c.n_h)).collect();
        if bad.is_empty() {
            writeln!(out, "all {} points match", checks.len())?;
        } else {
            writeln!(out, "mismatch at n_h = {}", bad.join(", "))?;
        }
    }
    Ok(())
}

fn print_single(out: &mut impl Write, r: &PhaseReport) -> io::Result<()> {
    let t = &r.thresholds;
    writeln!(out, "verdict: {:?}", r.verdict)?;
    writeln!(out, "n_h = {:.6}", r.n_h)?;
    writeln!(out, "J_eff = {:.6}", r.capacities.j_eff)?;
    writeln!(out, "thresholds: t1 {:.6}  t2 {:.6}  t3 {:.6}  t_aw {:.6}", t.t1, t.t2, t.t3, r.t_aw)?;
    writeln!(out, "regime: {}", r.regime.map_or("-".into(), |g| format!("{g:?}")))?;
    writeln!(out, "phase: {}", r.phase.map_or("-".into(), |p| p.to_string()))?;
    writeln!(out, "x* = {}", fmt_opt(r.x_star))?;
    writeln!(out, "v* = {}", fmt_opt(r.v_star))?;
    writeln!(out, "phi* = {}", fmt_opt(r.phi_star))?;
    writeln!(out, "phi (LP) = {:.6}", r.phi_lp)?;
    if r.knife_edge {
        writeln!(out, "knife edge: judge neither helps nor hurts")?;
    }
    Ok(())
}

fn print_two(out: &mut impl Write, r: &TwoClassReport) -> io::Result<()> {
    writeln!(out, "n_h = {:.6}", r.n_h)?;
    writeln!(out, "overloaded: {:?}", r.overloaded)?;
    writeln!(out, "{:>5} {:>12} {:>12} {:>12} {:>12}", "class", "p_pass", "q_acc", "eta", "c")?;
    for i in 0..2 {
        writeln!(
            out,
            "{:>5} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            i + 1,
            r.p_pass[i],
            r.q_acc[i],
            r.eta[i],
            r.c[i]
        )?;
    }
    writeln!(out, "k_q = {}  k_eta = {}  k_c = {}", r.k_q, r.k_eta, r.k_c)?;
    writeln!(out, "lower threshold = {:.6}", r.lower_threshold)?;
    writeln!(out, "upper threshold = {:.6}", r.upper_threshold)?;
    writeln!(out, "worker-binding threshold = {:.6}", r.worker_binding_threshold)?;
    writeln!(out, "bypass threshold = {:.6}", r.bypass_threshold)?;
    match r.complementarity_interval {
        Some((a, b)) => writeln!(out, "complementarity interval = ({a:.6}, {b:.6})")?,
        None => writeln!(out, "complementarity interval = none")?,
    }
    writeln!(out, "worker binding: {}", r.worker_binding)?;
    if r.degenerate {
        writeln!(out, "degenerate: both indices rank the same class first")?;
    }
    if let Some((v1, v2)) = r.interior {
        writeln!(out, "interior allocation: v1 {v1:.6}  v2 {v2:.6}")?;
    }
    Ok(())
}

fn cmd_simulate(
    out: &mut impl Write,
    inst: Instance,
    settings: &SimSettings,
    policy: &str,
    feedback: bool,
    trajectory: Option<&Path>,
) -> CliResult {
    let mut kind: PolicyKind = policy.parse()?;
    if feedback && kind == PolicyKind::FluidTracking {
        kind = PolicyKind::FluidTrackingFeedback;
    }
    let mut cfg = SimConfig::new(inst, settings);
    cfg.feedback = feedback;
    cfg.record_classes = trajectory.is_some();
    cfg.validate()?;
    let planned = integerized(&cfg.instance, cfg.scale_n);
    let spec = PolicySpec::for_instance(kind, &planned, feedback)?;
    let r_star = if feedback {
        solve_feedback(&planned)?.objective
    } else {
        solve_steady_state(&planned)?.objective
    };
    let m = run(&cfg, &spec)?;
    writeln!(
        out,
        "policy {kind}  scale n {}  horizon {}  warmup {}",
        cfg.scale_n, cfg.horizon_t, cfg.warmup
    )?;
    writeln!(out, "events = {}", m.events)?;
    writeln!(out, "throughput = {:.6} (se {:.6})", m.throughput_rate, m.throughput_se)?;
    writeln!(out, "R* = {r_star:.6}")?;
    if r_star > 0.0 {
        writeln!(out, "gap = {:.6}%", (r_star - m.throughput_rate) / r_star * 100.0)?;
    }
    writeln!(
        out,
        "utilization: worker {:.6}  judge {:.6}  human {:.6}",
        m.utilization.worker, m.utilization.judge, m.utilization.human
    )?;
    writeln!(out, "abandonment = {:.6}", m.abandonment_fraction())?;
    writeln!(
        out,
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "class", "arrivals", "abandoned", "completed", "rework", "removed"
    )?;
    for (i, c) in m.classes.iter().enumerate() {
        writeln!(
            out,
            "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
            i + 1,
            c.arrivals,
            c.abandonments,
            c.completions,
            c.completions_fb,
            c.removed
        )?;
    }
    let st = detect_instability(&m.trajectory, cfg.horizon_t);
    for (name, q) in [("judge", &st.judge), ("human", &st.human)] {
        let verdict = match q.stability {
            Stability::Stable => "stable",
            Stability::Unstable => "UNSTABLE",
            Stability::Inconclusive => "inconclusive",
        };
        writeln!(out, "{name} queue: {verdict} (slope {:.6}, r2 {:.6})", q.slope, q.r_squared)?;
    }
    if let Some(p) = trajectory {
        let f = io::BufWriter::new(fs::File::create(p)?);
        m.write_trajectory_csv(f)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn cmd_capacity_plan(out: &mut impl Write, inst: &Instance, budget: &judgeflow::instance::Budget) -> CliResult {
    let plan = solve_capacity_plan(inst, budget)?;
    writeln!(
        out,
        "budget: B {:.6}  gamma_w {:.6}  gamma_j {:.6}",
        budget.b, budget.gamma_w, budget.gamma_j
    )?;
    writeln!(out, "n_w* = {:.6}", plan.n_w)?;
    writeln!(out, "n_j* = {:.6}", plan.n_j)?;
    print_fluid(out, &plan.solution)?;
    Ok(())
}

fn cmd_asymptotic(out: &mut impl Write, cfg: &AsymptoticConfig, dir: &Path) -> CliResult {
    let study = run_asymptotic_study(cfg)?;
    fs::create_dir_all(dir)?;
    study.write_gap_csv(io::BufWriter::new(fs::File::create(dir.join("gap.csv"))?))?;
    study.write_summary_csv(io::BufWriter::new(fs::File::create(dir.join("gap_summary.csv"))?))?;
    fs::write(dir.join("fig5.svg"), study.chart().to_svg())?;
    writeln!(out, "{:>6} {:>6} {:>12} {:>12} {:>12}", "n", "runs", "mean_gap%", "std_gap%", "se_gap%")?;
    for s in &study.summary {
        writeln!(
            out,
            "{:>6} {:>6} {:>12.6} {:>12.6} {:>12.6}",
            s.n, s.runs, s.mean_gap, s.std_gap, s.se_gap
        )?;
    }
    for f in &study.failures {
        writeln!(out, "failed: instance {} n {} seed {}: {}", f.instance, f.n, f.seed, f.error)?;
    }
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

fn cmd_policy_compare(out: &mut impl Write, cfg: &PolicyCompareConfig, dir: &Path) -> CliResult {
    let cmp = run_policy_comparison(cfg)?;
    fs::create_dir_all(dir)?;
    cmp.write_csv(io::BufWriter::new(fs::File::create(dir.join("policy_compare.csv"))?))?;
    fs::write(dir.join("fig7.svg"), cmp.chart().to_svg())?;
    writeln!(
        out,
        "{:<24} {:>8} {:>12} {:>10} {:>8}",
        "policy", "n_h", "throughput", "se", "stable"
    )?;
    for &kind in &cfg.policies {
        for &n_h in &cfg.n_h_grid {
            if let Some(p) = cmp.point(kind, n_h) {
                writeln!(
                    out,
                    "{:<24} {:>8.3} {:>12.6} {:>10.6} {:>8}",
                    kind.name(),
                    n_h,
                    p.mean_throughput,
                    p.se_throughput,
                    if p.stable { "yes" } else { "no" }
                )?;
            }
        }
    }
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}
