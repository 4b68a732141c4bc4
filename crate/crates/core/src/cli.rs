//! Command-line driver.
//!
//! Every command resolves its full configuration before touching the
//! filesystem, so usage and domain errors leave no partial output behind.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{formula_miet, interevent_histogram, verify, VerificationReport};
use crate::coordinator::{CoordinationMode, MessageStats};
use crate::dynamics::FlowKind;
use crate::error::{Error, Result};
use crate::integrator::Scheme;
use crate::io::{
    load_scenario, sha256_hex, write_compare_csv, write_events_csv, write_histogram_csv,
    write_json, write_trajectory_csv, ScenarioFile,
};
use crate::problem::{
    estimate_bounds, reference_optimizer, Domain, NetworkProblem, DEFAULT_INFLATION,
    DEFAULT_SAMPLES,
};
use crate::scenarios::{build_quadratic, PowerScenario};
use crate::simulator::{
    run, run_baseline, sweep, Disturbance, SimConfig, UniformBox, DEFAULT_STEP, DEFAULT_STOP_TOL,
};
use crate::trigger::{TriggerParams, DEFAULT_ZERO_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_SIGMA: f64 = 0.9;
pub const DEFAULT_HORIZON: f64 = 60.0;
pub const DEFAULT_COUNT: usize = 10;
pub const DEFAULT_BINS: usize = 20;
const ORACLE_TOL: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(
    name = "etcoord",
    version,
    about = "Event-triggered agent-supervisor coordination"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one run and audit it.
    Run(RunArgs),
    /// Simulate many runs from seeded initial states.
    Sweep(SweepArgs),
    /// Run an event-triggered flow next to its continuous baseline.
    Compare(RunArgs),
    /// Reproduce a previous command from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a built-in scenario file.
    Scenario {
        #[command(subcommand)]
        kind: ScenarioKind,
    },
}

#[derive(Subcommand, Debug)]
enum ScenarioKind {
    /// Five-generator dispatch case with default coefficients.
    Power {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded random convex quadratic.
    Quadratic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        boxes: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlowArg {
    EventUnconstrained,
    EventConstrained,
    ContinuousUnconstrained,
    ContinuousConstrained,
}

impl From<FlowArg> for FlowKind {
    fn from(f: FlowArg) -> Self {
        match f {
            FlowArg::EventUnconstrained => FlowKind::EventUnconstrained,
            FlowArg::EventConstrained => FlowKind::EventConstrained,
            FlowArg::ContinuousUnconstrained => FlowKind::ContinuousUnconstrained,
            FlowArg::ContinuousConstrained => FlowKind::ContinuousConstrained,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Sensing,
    Computation,
}

impl From<ModeArg> for CoordinationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sensing => CoordinationMode::SensingBased,
            ModeArg::Computation => CoordinationMode::ComputationBased,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Euler,
    Rk4,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    flow: Option<FlowArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Exit nonzero if any verification check fails.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: RunArgs,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Run,
    Sweep,
    Compare,
}

impl CommandKind {
    fn as_str(self) -> &'static str {
        match self {
            CommandKind::Run => "run",
            CommandKind::Sweep => "sweep",
            CommandKind::Compare => "compare",
        }
    }
}

/// Fully materialized settings of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub command: CommandKind,
    pub flow: FlowKind,
    pub lambda: f64,
    pub sigma: f64,
    pub step: f64,
    pub horizon: f64,
    pub mode: CoordinationMode,
    pub scheme: Scheme,
    pub stop_tol: f64,
    pub zero_tol: f64,
    pub lipschitz: f64,
    pub hessian_bound: f64,
    /// Where `lipschitz` and `hessian_bound` came from.
    pub bounds_source: String,
    pub initial_state: Vec<f64>,
    pub disturbances: Vec<Disturbance>,
    pub seed: u64,
    pub count: usize,
    pub jobs: usize,
    pub bins: usize,
    pub strict: bool,
}

impl ResolvedConfig {
    pub fn params(&self) -> Result<TriggerParams> {
        let p = TriggerParams {
            sigma: self.sigma,
            lambda: self.lambda,
            lipschitz: self.lipschitz,
            hessian_bound: self.hessian_bound,
            zero_tol: self.zero_tol,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            flow: self.flow,
            params: self.params()?,
            step: self.step,
            horizon: self.horizon,
            initial_state: self.initial_state.clone(),
            mode: self.mode,
            disturbances: self.disturbances.clone(),
            scheme: self.scheme,
            stop_tol: self.stop_tol,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario_path: String,
    pub scenario_sha256: String,
    pub scenario: ScenarioFile,
    pub config: ResolvedConfig,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    flow: FlowKind,
    stats: &'a MessageStats,
    formula_miet: Option<f64>,
    lipschitz: f64,
    hessian_bound: f64,
    final_time: f64,
    final_state: &'a [f64],
    optimizer: Option<&'a [f64]>,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct CompareSide<'a> {
    flow: FlowKind,
    final_state: &'a [f64],
    snapshot_updates: usize,
    all_feasible: bool,
    verification: &'a VerificationReport,
}

#[derive(Serialize)]
struct CompareReport<'a> {
    event: CompareSide<'a>,
    continuous: CompareSide<'a>,
    final_distance: f64,
    event_stats: &'a MessageStats,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Json(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::NoConvergence { .. } => EXIT_NUMERIC,
        _ => EXIT_DOMAIN,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Run(a) => fresh(CommandKind::Run, &a, None),
        Command::Compare(a) => fresh(CommandKind::Compare, &a, None),
        Command::Sweep(a) => {
            if a.count == Some(0) {
                return Err(Failure::Usage("--count must be at least 1".into()));
            }
            fresh(CommandKind::Sweep, &a.common, a.count)
        }
        Command::Rerun { manifest, out } => {
            let text = std::fs::read_to_string(&manifest).map_err(Error::from)?;
            let m: RunManifest = serde_json::from_str(&text).map_err(Error::from)?;
            let dir =
                out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("rerun"));
            Ok(execute(
                &m.scenario,
                &m.config,
                &m.scenario_path,
                &m.scenario_sha256,
                &dir,
            )?)
        }
        Command::Scenario { kind } => {
            let (file, out) = match kind {
                ScenarioKind::Power { out } => {
                    (ScenarioFile::from_power(&PowerScenario::default())?, out)
                }
                ScenarioKind::Quadratic {
                    n,
                    seed,
                    boxes,
                    out,
                } => (
                    ScenarioFile::from_quadratic(&build_quadratic(n, seed, boxes)?)?,
                    out,
                ),
            };
            let json = file.to_json()?;
            match out {
                Some(path) => std::fs::write(path, json).map_err(Error::from)?,
                None => print!("{json}"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn fresh(
    kind: CommandKind,
    a: &RunArgs,
    count: Option<usize>,
) -> std::result::Result<i32, Failure> {
    let (scenario, bytes) = load_scenario(&a.scenario).map_err(|e| match e {
        Error::Io(io) => Failure::Usage(format!("cannot read {}: {io}", a.scenario.display())),
        Error::Json(j) => Failure::Usage(format!("invalid scenario {}: {j}", a.scenario.display())),
        other => Failure::Lib(other),
    })?;
    let config = resolve(kind, a, count, &scenario)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os("ETCOORD_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("etcoord-out"));
            let stem = a
                .scenario
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            root.join(format!("{stem}-{}", kind.as_str()))
        }
    };
    let path = a.scenario.display().to_string();
    Ok(execute(
        &scenario,
        &config,
        &path,
        &sha256_hex(&bytes),
        &dir,
    )?)
}

fn resolve(
    kind: CommandKind,
    a: &RunArgs,
    count: Option<usize>,
    s: &ScenarioFile,
) -> Result<ResolvedConfig> {
    let problem = s.problem()?;
    let file = s.config.clone().unwrap_or_default();
    let flow = a
        .flow
        .map(FlowKind::from)
        .or(file.flow)
        .unwrap_or(if problem.boxes().is_some() {
            FlowKind::EventConstrained
        } else {
            FlowKind::EventUnconstrained
        });
    let initial_state = match &s.initial_state {
        Some(x) => x.clone(),
        None => match problem.boxes() {
            Some(b) => b.iter().map(|b| b.project(0.0)).collect(),
            None => vec![0.0; problem.n()],
        },
    };
    let (lipschitz, hessian_bound, bounds_source) = resolve_bounds(s, &problem)?;
    Ok(ResolvedConfig {
        command: kind,
        flow,
        lambda: a.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
        sigma: a.sigma.or(file.sigma).unwrap_or(DEFAULT_SIGMA),
        step: a.step.or(file.step).unwrap_or(DEFAULT_STEP),
        horizon: a.horizon.or(file.horizon).unwrap_or(DEFAULT_HORIZON),
        mode: a
            .mode
            .map(CoordinationMode::from)
            .or(file.mode)
            .unwrap_or_default(),
        scheme: match a.scheme {
            Some(SchemeArg::Rk4) => Scheme::Rk4,
            _ => Scheme::Euler,
        },
        stop_tol: DEFAULT_STOP_TOL,
        zero_tol: DEFAULT_ZERO_TOL,
        lipschitz,
        hessian_bound,
        bounds_source,
        initial_state,
        disturbances: s.disturbances.clone(),
        seed: a.seed.unwrap_or(0),
        count: count.unwrap_or(DEFAULT_COUNT),
        jobs: a.jobs.unwrap_or(1).max(1),
        bins: a.bins.unwrap_or(DEFAULT_BINS),
        strict: a.strict,
    })
}

/// `L_g` and `H` from the file, or computed over the domain, the boxes, or
/// (for all-quadratic problems, where they are global) a unit cube.
fn resolve_bounds(s: &ScenarioFile, p: &NetworkProblem) -> Result<(f64, f64, String)> {
    if let Some(b) = s.bounds {
        return Ok((b.lipschitz, b.hessian_bound, "file".into()));
    }
    let (domain, source) = if let Some(d) = &s.domain {
        (d.clone(), "estimated over domain")
    } else if let Some(b) = p.boxes() {
        (Domain(b.to_vec()), "estimated over boxes")
    } else if p.is_all_quadratic() && p.coupling().is_quadratic() {
        (Domain::cube(p.n(), 1.0)?, "closed form")
    } else {
        return Err(Error::EmptyDomain(
            "scenario needs bounds, a domain or boxes to size the trigger".into(),
        ));
    };
    let est = estimate_bounds(p, &domain, DEFAULT_SAMPLES, DEFAULT_INFLATION)?;
    Ok((est.lipschitz_grad_g, est.hessian_bound, source.into()))
}

fn execute(
    scenario: &ScenarioFile,
    config: &ResolvedConfig,
    scenario_path: &str,
    scenario_sha256: &str,
    dir: &Path,
) -> Result<i32> {
    let problem = scenario.problem()?;
    let cfg = config.sim_config()?;
    cfg.validate(&problem)?;
    let warnings = cfg.warnings();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut code = EXIT_OK;

    match config.command {
        CommandKind::Run => {
            let mut out = run(&problem, &cfg)?;
            let optimizer = reference_optimizer(&out.final_problem, ORACLE_TOL).ok();
            if let Some(xs) = &optimizer {
                out.trajectory.attach_lyapunov(&out.final_problem, xs)?;
            }
            let report = verify(
                &out.trajectory,
                &out.events,
                &out.final_problem,
                &cfg.params,
                optimizer.as_deref(),
            )?;
            print!("{}", report.summary());
            if config.strict && !report.passed() {
                code = EXIT_VERIFICATION;
            }
            let summary = RunSummary {
                flow: cfg.flow,
                stats: &out.stats,
                formula_miet: formula_miet(cfg.flow, &cfg.params).ok(),
                lipschitz: cfg.params.lipschitz,
                hessian_bound: cfg.params.hessian_bound,
                final_time: out.trajectory.times.last().copied().unwrap_or(0.0),
                final_state: out.trajectory.final_state(),
                optimizer: optimizer.as_deref(),
                warnings: &warnings,
            };
            files.push((
                "trajectory.csv".into(),
                render(|w| write_trajectory_csv(w, &out.trajectory))?,
            ));
            files.push((
                "events.csv".into(),
                render(|w| write_events_csv(w, &out.events))?,
            ));
            files.push((
                "events.json".into(),
                render(|w| write_json(w, &out.events))?,
            ));
            files.push(("stats.json".into(), render(|w| write_json(w, &summary))?));
            files.push((
                "verification.json".into(),
                render(|w| write_json(w, &report))?,
            ));
            let hist = interevent_histogram(&out.events, config.bins);
            files.push((
                "histogram.csv".into(),
                render(|w| write_histogram_csv(w, &hist))?,
            ));
        }
        CommandKind::Compare => {
            let event_flow = if cfg.flow.is_event() {
                cfg.flow
            } else if cfg.flow.is_constrained() {
                FlowKind::EventConstrained
            } else {
                FlowKind::EventUnconstrained
            };
            let ecfg = SimConfig {
                flow: event_flow,
                ..cfg.clone()
            };
            let ev = run(&problem, &ecfg)?;
            let base = run_baseline(&problem, &ecfg)?;
            let optimizer = reference_optimizer(&ev.final_problem, ORACLE_TOL).ok();
            let base_problem = if event_flow.is_constrained() {
                ev.final_problem.clone()
            } else {
                ev.final_problem.without_boxes()
            };
            let ev_report = verify(
                &ev.trajectory,
                &ev.events,
                &ev.final_problem,
                &cfg.params,
                optimizer.as_deref(),
            )?;
            let base_report = verify(&base, &[], &base_problem, &cfg.params, optimizer.as_deref())?;
            print!("event-triggered:\n{}", ev_report.summary());
            print!("continuous:\n{}", base_report.summary());
            if config.strict && !(ev_report.passed() && base_report.passed()) {
                code = EXIT_VERIFICATION;
            }
            let distance = ev
                .trajectory
                .final_state()
                .iter()
                .zip(base.final_state())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let report = CompareReport {
                event: CompareSide {
                    flow: event_flow,
                    final_state: ev.trajectory.final_state(),
                    snapshot_updates: ev.stats.total_events,
                    all_feasible: ev.trajectory.feasible.iter().all(|f| *f),
                    verification: &ev_report,
                },
                continuous: CompareSide {
                    flow: base.flow,
                    final_state: base.final_state(),
                    snapshot_updates: base.len(),
                    all_feasible: base.feasible.iter().all(|f| *f),
                    verification: &base_report,
                },
                final_distance: distance,
                event_stats: &ev.stats,
            };
            files.push((
                "compare.csv".into(),
                render(|w| write_compare_csv(w, &ev.trajectory, &base, &ev.events))?,
            ));
            files.push(("compare.json".into(), render(|w| write_json(w, &report))?));
        }
        CommandKind::Sweep => {
            let intervals: Vec<(f64, f64)> = match (&scenario.boxes, &scenario.domain) {
                (Some(b), _) => b.iter().map(|b| (b.lower(), b.upper())).collect(),
                (None, Some(d)) => d.0.iter().map(|b| (b.lower(), b.upper())).collect(),
                (None, None) => {
                    return Err(Error::EmptyDomain(
                        "sweeps sample initial states from the boxes or the domain".into(),
                    ))
                }
            };
            let sampler = UniformBox { intervals };
            let report = sweep(
                &problem,
                &cfg,
                &sampler,
                config.count,
                config.seed,
                config.jobs,
            )?;
            println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
            files.push(("sweep.json".into(), render(|w| write_json(w, &report))?));
        }
    }

    let mut outputs: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    outputs.push("manifest.json".into());
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario_path: scenario_path.into(),
        scenario_sha256: scenario_sha256.into(),
        scenario: scenario.clone(),
        config: config.clone(),
        outputs,
    };
    files.push((
        "manifest.json".into(),
        render(|w| write_json(w, &manifest))?,
    ));

    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &files {
        std::fs::write(dir.join(name), bytes)?;
    }
    eprintln!("wrote {} files to {}", files.len(), dir.display());
    Ok(code)
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
