mod output;
mod report;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use lineplan::cgn::build_cgn;
use lineplan::evaluate::{
    assign_logit, assign_shortest, metrics, rigid_benchmark, Assignment, LineConcept, Plan,
};
use lineplan::io::load_instance;
use lineplan::milp::{HighsBackend, LppSolution, ModelOptions, SolveOptions, SolveStatus, SolverBackend};
use lineplan::model::Instance;
use lineplan::paths::{generate_paths_with, PathMode, PathOptions, PathSet};
use lineplan::refinement::{run_with_paths, solve_direct, DfraOptions, Termination};

use output::Outputs;
use report::{Manifest, Timer};

/// Bad input: unreadable files, malformed tables, invalid parameters.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

macro_rules! input_error {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new(InputError(format!($($arg)*))))
    };
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_LIMIT: u8 = 4;
const EXIT_INPUT: u8 = 5;

#[derive(Parser)]
#[command(name = "lineplan", version, about = "Line planning with service-dependent demand")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate both path sets, export them and report counts.
    Paths(PathsArgs),
    /// Solve an instance by refinement or as one full model.
    Solve(SolveArgs),
    /// Evaluate a plan under model, logit and shortest-path assignment.
    Evaluate(EvaluateArgs),
    /// Compare fixed-demand and service-dependent plans.
    Benchmark(BenchmarkArgs),
    /// Solve over the cartesian product of parameter lists.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Dfra,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Service,
    Rigid,
}

impl From<Mode> for PathMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Service => PathMode::Service,
            Mode::Rigid => PathMode::Rigid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Solver {
    Highs,
}

#[derive(Args, Clone, Debug, Serialize)]
struct Io {
    /// Instance directory.
    instance: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
struct PathArgs {
    /// Path set the model routes passengers on.
    #[arg(long, value_enum, default_value_t = Mode::Service)]
    path_mode: Mode,
    /// Maximum routes per OD before generation fails.
    #[arg(long)]
    path_cap: Option<usize>,
    /// Extra in-vehicle minutes over the fastest route admitted by rigid sets.
    #[arg(long, default_value_t = 15.0)]
    rigid_tolerance: f64,
}

impl PathArgs {
    fn options(&self) -> PathOptions {
        let d = PathOptions::default();
        PathOptions {
            cap: self.path_cap.unwrap_or(d.cap),
            rigid_tolerance: self.rigid_tolerance,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
struct RunConfig {
    #[command(flatten)]
    paths: PathArgs,
    /// Weight of passenger cost; defaults to the instance value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Headway threshold for valid inequalities (0 disables them).
    #[arg(long = "h-t")]
    h_t: Option<f64>,
    /// Similar lines refined along with a violated one.
    #[arg(long, default_value_t = 0)]
    kappa: usize,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Maximum number of model solves.
    #[arg(long)]
    iteration_limit: Option<usize>,
    /// Relative MIP gap.
    #[arg(long, default_value_t = 1e-9)]
    gap: f64,
    /// Treat fleets as continuous.
    #[arg(long)]
    continuous_vehicles: bool,
    #[arg(long, value_enum, default_value_t = Solver::Highs)]
    solver: Solver,
    /// Seed passed to the MILP solver.
    #[arg(long, default_value_t = 0)]
    seed: u32,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                input_error!("--lambda must be positive, got {l}");
            }
        }
        if let Some(h) = self.h_t {
            if !(h.is_finite() && h >= 0.0) {
                input_error!("--h-t must be non-negative, got {h}");
            }
        }
        if let Some(t) = self.time_limit {
            if t.is_nan() || t <= 0.0 {
                input_error!("--time-limit must be positive, got {t}");
            }
        }
        if self.iteration_limit == Some(0) {
            input_error!("--iteration-limit must be positive");
        }
        if !(self.gap.is_finite() && self.gap >= 0.0) {
            input_error!("--gap must be non-negative, got {}", self.gap);
        }
        Ok(())
    }

    fn dfra(&self) -> DfraOptions {
        DfraOptions {
            mode: self.paths.path_mode.into(),
            h_t: self.h_t,
            kappa: self.kappa,
            time_limit: self.time_limit,
            iteration_limit: self.iteration_limit,
            model: ModelOptions {
                integer_vehicles: !self.continuous_vehicles,
                solve: SolveOptions {
                    gap: self.gap,
                    time_limit: self.time_limit,
                    seed: self.seed,
                },
                ..ModelOptions::default()
            },
            paths: self.paths.options(),
        }
    }

    fn backend(&self) -> Box<dyn SolverBackend + Sync> {
        match self.solver {
            Solver::Highs => Box::new(HighsBackend),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PathsArgs {
    #[command(flatten)]
    io: Io,
    #[command(flatten)]
    paths: PathArgs,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long, value_enum, default_value_t = Method::Dfra)]
    method: Method,
    /// Reuse a path listing written by `paths` instead of generating one.
    #[arg(long = "paths")]
    path_file: Option<PathBuf>,
    #[command(flatten)]
    config: RunConfig,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    io: Io,
    /// Plan file (`solution.json` from `solve`, or hand-written).
    #[arg(long)]
    plan: PathBuf,
    /// Logit scale parameter.
    #[arg(long, default_value_t = lineplan::evaluate::DEFAULT_THETA, allow_negative_numbers = true)]
    theta: f64,
    /// Also run the fixed-demand benchmark.
    #[arg(long)]
    benchmark: bool,
    #[command(flatten)]
    config: RunConfig,
}

#[derive(Args, Debug, Serialize)]
struct BenchmarkArgs {
    #[command(flatten)]
    io: Io,
    #[command(flatten)]
    config: RunConfig,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long, value_enum, default_value_t = Method::Dfra)]
    method: Method,
    /// λ values, comma separated.
    #[arg(long = "lambdas", value_delimiter = ',')]
    lambdas: Vec<f64>,
    /// h_T values, comma separated.
    #[arg(long = "h-ts", value_delimiter = ',')]
    h_ts: Vec<f64>,
    /// κ values, comma separated.
    #[arg(long = "kappas", value_delimiter = ',')]
    kappas: Vec<usize>,
    /// Parallel solves.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    config: RunConfig,
}

/// How a completed run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Solved,
    Infeasible,
    Limit,
}

impl Outcome {
    fn code(self) -> ExitCode {
        match self {
            Outcome::Solved => ExitCode::SUCCESS,
            Outcome::Infeasible => ExitCode::from(EXIT_INFEASIBLE),
            Outcome::Limit => ExitCode::from(EXIT_LIMIT),
        }
    }
}

fn failure_code(err: &anyhow::Error) -> u8 {
    use lineplan::Error as E;
    if err.downcast_ref::<InputError>().is_some() {
        return EXIT_INPUT;
    }
    match err.downcast_ref::<E>() {
        Some(E::Io { .. } | E::Parse { .. } | E::Config { .. } | E::Validation(_))
        | Some(E::Headway(_) | E::PathExplosion { .. } | E::Json(_)) => EXIT_INPUT,
        _ if err.downcast_ref::<std::io::Error>().is_some() => EXIT_INPUT,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Paths(a) => cmd_paths(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}

fn load(path: &Path, lambda: Option<f64>) -> Result<Instance> {
    let inst = load_instance(path)?;
    match lambda {
        Some(l) => Ok(inst.with_lambda(l)?),
        None => Ok(inst),
    }
}

fn generate(instance: &Instance, mode: PathMode, options: PathOptions) -> Result<PathSet> {
    let cgn = build_cgn(instance);
    Ok(generate_paths_with(instance, &cgn, mode, options)?)
}

fn read_paths(instance: &Instance, mode: PathMode, file: &Path) -> Result<PathSet> {
    let f = File::open(file).map_err(|e| InputError(format!("{}: {e}", file.display())))?;
    let cgn = build_cgn(instance);
    Ok(PathSet::read_csv(instance, &cgn, mode, BufReader::new(f))?)
}

fn cmd_paths(args: &PathsArgs) -> Result<Outcome> {
    let mut timer = Timer::start();
    let inst = load(&args.io.instance, None)?;
    timer.lap("load");
    let opts = args.paths.options();
    let service = generate(&inst, PathMode::Service, opts)?;
    timer.lap("service_paths");
    let rigid = generate(&inst, PathMode::Rigid, opts)?;
    timer.lap("rigid_paths");

    let mut out = Outputs::default();
    let stats = report::path_stats(&inst, &service, &rigid);
    info!(
        "{} signatures, {} service paths, {} rigid paths",
        stats.summary.signatures, stats.summary.service_paths, stats.summary.rigid_paths
    );
    out.json("path_stats.json", &stats.summary)?;
    out.csv("path_stats.csv", &stats.ods)?;
    for (name, set) in [("paths_service.csv", &service), ("paths_rigid.csv", &rigid)] {
        let mut buf = Vec::new();
        set.write_csv(&inst, &mut buf)?;
        out.raw(name, buf);
    }
    let manifest = Manifest::new("paths", args, &timer, None, &out);
    out.json("manifest.json", &manifest)?;
    out.commit(&args.io.out)?;
    Ok(Outcome::Solved)
}

/// A single solve and everything it reports.
struct SolveRun {
    solution: Option<LppSolution>,
    outcome: Outcome,
    termination: String,
    lower_bound: Option<f64>,
    iterations: Option<Vec<report::IterationRow>>,
    iteration_times: Vec<f64>,
}

fn solve_once(
    inst: &Instance,
    pathset: &PathSet,
    method: Method,
    options: &DfraOptions,
    backend: &dyn SolverBackend,
) -> Result<SolveRun> {
    match method {
        Method::Dfra => {
            let r = run_with_paths(inst, pathset, options, backend)?;
            let outcome = match (r.termination, &r.solution) {
                (Termination::Optimal, _) => Outcome::Solved,
                (Termination::Infeasible, _) => Outcome::Infeasible,
                (_, Some(_)) => Outcome::Solved,
                (_, None) => Outcome::Limit,
            };
            Ok(SolveRun {
                outcome,
                termination: report::snake(&r.termination),
                lower_bound: Some(r.lower_bound),
                iterations: Some(r.iterations.iter().map(|it| report::IterationRow::new(it, inst)).collect()),
                iteration_times: r.iterations.iter().map(|it| it.wall_time).collect(),
                solution: r.solution,
            })
        }
        Method::Direct => {
            let sol = solve_direct(inst, pathset, options.model, backend)?;
            let outcome = match sol.status {
                SolveStatus::Optimal | SolveStatus::Feasible => Outcome::Solved,
                SolveStatus::Infeasible => Outcome::Infeasible,
                SolveStatus::Limit => Outcome::Limit,
            };
            Ok(SolveRun {
                outcome,
                termination: report::snake(&sol.status),
                lower_bound: sol.has_incumbent().then_some(sol.bound),
                iterations: None,
                iteration_times: Vec::new(),
                solution: sol.has_incumbent().then_some(sol),
            })
        }
    }
}

/// Files describing one solve, rooted at `prefix`.
fn solve_outputs(
    out: &mut Outputs,
    prefix: &str,
    inst: &Instance,
    pathset: &PathSet,
    run: &SolveRun,
) -> Result<()> {
    if let Some(rows) = &run.iterations {
        out.csv(&format!("{prefix}iterations.csv"), rows)?;
    }
    let summary = report::SolveSummary::new(run.termination.clone(), run.lower_bound, run.solution.as_ref());
    out.json(&format!("{prefix}objective.json"), &summary)?;
    if let Some(sol) = &run.solution {
        out.json(&format!("{prefix}solution.json"), &Plan::from_solution(sol, inst, pathset))?;
        let concept = LineConcept::from_solution(sol);
        let m = metrics(&concept, &Assignment::from_solution(sol), inst, pathset);
        report::metrics_outputs(out, &format!("{prefix}model_"), &m)?;
    }
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<Outcome> {
    args.config.validate()?;
    let mut timer = Timer::start();
    let inst = load(&args.io.instance, args.config.lambda)?;
    timer.lap("load");
    let options = args.config.dfra();
    let pathset = match &args.path_file {
        Some(f) => read_paths(&inst, options.mode, f)?,
        None => generate(&inst, options.mode, options.paths)?,
    };
    timer.lap("paths");
    let backend = args.config.backend();
    let run = solve_once(&inst, &pathset, args.method, &options, backend.as_ref())?;
    timer.lap("solve");
    info!("{}: {:?}", run.termination, run.solution.as_ref().map(|s| s.breakdown.total()));

    let mut out = Outputs::default();
    solve_outputs(&mut out, "", &inst, &pathset, &run)?;
    let mut manifest = Manifest::new("solve", args, &timer, Some(backend.name()), &out);
    manifest.termination = Some(run.termination.clone());
    manifest.iteration_wall_times = run.iteration_times;
    out.json("manifest.json", &manifest)?;
    out.commit(&args.io.out)?;
    Ok(run.outcome)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<Outcome> {
    args.config.validate()?;
    let mut timer = Timer::start();
    let inst = load(&args.io.instance, args.config.lambda)?;
    let text = std::fs::read_to_string(&args.plan)
        .map_err(|e| InputError(format!("{}: {e}", args.plan.display())))?;
    let plan: Plan = serde_json::from_str(&text)
        .map_err(|e| InputError(format!("{}: {e}", args.plan.display())))?;
    let concept = plan.concept(&inst)?;
    timer.lap("load");

    let options = args.config.dfra();
    let service = generate(&inst, PathMode::Service, options.paths)?;
    let model_set = match options.mode {
        PathMode::Service => None,
        PathMode::Rigid => Some(generate(&inst, PathMode::Rigid, options.paths)?),
    };
    timer.lap("paths");

    let mut out = Outputs::default();
    let mut table = Vec::new();
    let set = model_set.as_ref().unwrap_or(&service);
    if let Some(a) = plan.assignment(&inst, set)? {
        let m = metrics(&concept, &a, &inst, set);
        table.push(report::MetricsRow::new("model", &m));
        report::metrics_outputs(&mut out, "model_", &m)?;
    }
    let logit = metrics(&concept, &assign_logit(&concept, &service, &inst, args.theta), &inst, &service);
    table.push(report::MetricsRow::new("logit", &logit));
    report::metrics_outputs(&mut out, "logit_", &logit)?;
    let shortest = metrics(&concept, &assign_shortest(&concept, &service, &inst), &inst, &service);
    table.push(report::MetricsRow::new("shortest", &shortest));
    report::metrics_outputs(&mut out, "shortest_", &shortest)?;
    out.csv("assignments.csv", &table)?;
    timer.lap("evaluate");

    let backend = args.config.backend();
    if args.benchmark {
        let rec = rigid_benchmark(&inst, &options, backend.as_ref())?;
        report::benchmark_outputs(&mut out, &inst, &rec)?;
        timer.lap("benchmark");
    }
    let manifest = Manifest::new("evaluate", args, &timer, Some(backend.name()), &out);
    out.json("manifest.json", &manifest)?;
    out.commit(&args.io.out)?;
    Ok(Outcome::Solved)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<Outcome> {
    args.config.validate()?;
    let mut timer = Timer::start();
    let inst = load(&args.io.instance, args.config.lambda)?;
    timer.lap("load");
    let backend = args.config.backend();
    let rec = rigid_benchmark(&inst, &args.config.dfra(), backend.as_ref())?;
    timer.lap("benchmark");
    let mut out = Outputs::default();
    report::benchmark_outputs(&mut out, &inst, &rec)?;
    let manifest = Manifest::new("benchmark", args, &timer, Some(backend.name()), &out);
    out.json("manifest.json", &manifest)?;
    out.commit(&args.io.out)?;
    Ok(Outcome::Solved)
}

#[derive(Debug, Clone, Copy, Serialize)]
struct SweepPoint {
    lambda: f64,
    h_t: Option<f64>,
    kappa: usize,
}

fn cmd_sweep(args: &SweepArgs) -> Result<Outcome> {
    args.config.validate()?;
    if args.jobs == 0 {
        input_error!("--jobs must be positive");
    }
    if args.lambdas.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        input_error!("--lambdas must all be positive");
    }
    if args.h_ts.iter().any(|&h| !(h.is_finite() && h >= 0.0)) {
        input_error!("--h-ts must all be non-negative");
    }
    let mut timer = Timer::start();
    let base = load(&args.io.instance, args.config.lambda)?;
    timer.lap("load");
    let options = args.config.dfra();
    // path sets do not depend on λ, h_T or κ: generate once
    let pathset = generate(&base, options.mode, options.paths)?;
    timer.lap("paths");

    let lambdas = if args.lambdas.is_empty() { vec![base.costs.lambda] } else { args.lambdas.clone() };
    let h_ts: Vec<Option<f64>> = if args.h_ts.is_empty() {
        vec![options.h_t]
    } else {
        args.h_ts.iter().map(|&h| Some(h)).collect()
    };
    let kappas = if args.kappas.is_empty() { vec![options.kappa] } else { args.kappas.clone() };
    let mut points = Vec::new();
    for &lambda in &lambdas {
        for &h_t in &h_ts {
            for &kappa in &kappas {
                points.push(SweepPoint { lambda, h_t, kappa });
            }
        }
    }

    let backend = args.config.backend();
    let next = AtomicUsize::new(0);
    type PointResult = Result<(SolveRun, Instance, f64)>;
    let results: Mutex<Vec<Option<PointResult>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = points.get(i) else { break };
                let started = Instant::now();
                let r = base.with_lambda(p.lambda).map_err(anyhow::Error::from).and_then(|inst| {
                    let o = DfraOptions { h_t: p.h_t, kappa: p.kappa, ..options };
                    let run = solve_once(&inst, &pathset, args.method, &o, backend.as_ref())?;
                    Ok((run, inst, started.elapsed().as_secs_f64()))
                });
                info!("sweep point {i} done");
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    timer.lap("solve");

    let mut out = Outputs::default();
    let mut rows = Vec::new();
    let mut run_times = Vec::new();
    for (i, (p, r)) in points.iter().zip(results.into_inner().unwrap()).enumerate() {
        let (run, inst, secs) = r.expect("every point is processed")?;
        let dir = format!("run-{i:03}/");
        solve_outputs(&mut out, &dir, &inst, &pathset, &run)?;
        rows.push(report::SweepRow::new(i, p.lambda, p.h_t, p.kappa, &run, &inst));
        run_times.push(secs);
    }
    out.csv("summary.csv", &rows)?;
    let mut manifest = Manifest::new("sweep", args, &timer, Some(backend.name()), &out);
    manifest.iteration_wall_times = run_times;
    out.json("manifest.json", &manifest)?;
    out.commit(&args.io.out)?;
    Ok(Outcome::Solved)
}
