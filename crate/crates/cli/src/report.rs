//! Flat, plot-ready records and the run manifest.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;

use lineplan::evaluate::{BenchmarkRecord, LineConcept, MetricsReport};
use lineplan::milp::{LppSolution, ObjectiveBreakdown};
use lineplan::model::Instance;
use lineplan::paths::PathSet;
use lineplan::refinement::IterationRecord;

use crate::output::Outputs;

/// Serde name of a unit enum variant.
pub fn snake(value: &impl Serialize) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

pub struct Timer {
    start: Instant,
    last: Instant,
    laps: Vec<Lap>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lap {
    pub stage: String,
    pub seconds: f64,
}

impl Timer {
    pub fn start() -> Self {
        let now = Instant::now();
        Timer {
            start: now,
            last: now,
            laps: Vec::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.laps.push(Lap {
            stage: stage.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Everything needed to reproduce a run; the only output holding timings.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub solver: Option<String>,
    pub started_unix: f64,
    pub wall_time: f64,
    pub stages: Vec<Lap>,
    pub termination: Option<String>,
    /// Per model solve (solve) or per run (sweep).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub iteration_wall_times: Vec<f64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &'static str,
        config: &impl Serialize,
        timer: &Timer,
        solver: Option<&str>,
        out: &Outputs,
    ) -> Self {
        let elapsed = timer.start.elapsed().as_secs_f64();
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        Manifest {
            tool: "lineplan",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            solver: solver.map(str::to_string),
            started_unix: now - elapsed,
            wall_time: elapsed,
            stages: timer.laps.clone(),
            termination: None,
            iteration_wall_times: Vec::new(),
            outputs: out.names().map(str::to_string).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PathSummary {
    pub ods: usize,
    pub signatures: usize,
    pub service_paths: usize,
    pub rigid_paths: usize,
    pub service_paths_per_od: f64,
    pub rigid_paths_per_od: f64,
}

#[derive(Debug, Serialize)]
pub struct OdPathRow {
    pub od: String,
    pub t_min: Option<f64>,
    pub threshold: f64,
    pub service_signatures: usize,
    pub service_paths: usize,
    pub rigid_signatures: usize,
    pub rigid_paths: usize,
}

pub struct PathStats {
    pub summary: PathSummary,
    pub ods: Vec<OdPathRow>,
}

/// Counts exclude the alternative mode.
pub fn path_stats(instance: &Instance, service: &PathSet, rigid: &PathSet) -> PathStats {
    let ptn = |set: &PathSet, od| set.od_paths(od).filter(|p| !p.alternative).count();
    let ods: Vec<OdPathRow> = instance
        .od_indices()
        .map(|od| OdPathRow {
            od: instance.od(od).id.clone(),
            t_min: service.od[od.0].t_min,
            threshold: service.od[od.0].threshold,
            service_signatures: service.signatures(od).len(),
            service_paths: ptn(service, od),
            rigid_signatures: rigid.signatures(od).len(),
            rigid_paths: ptn(rigid, od),
        })
        .collect();
    let n = ods.len().max(1) as f64;
    PathStats {
        summary: PathSummary {
            ods: ods.len(),
            signatures: service.signature_count(),
            service_paths: service.ptn_path_count(),
            rigid_paths: rigid.ptn_path_count(),
            service_paths_per_od: service.ptn_path_count() as f64 / n,
            rigid_paths_per_od: rigid.ptn_path_count() as f64 / n,
        },
        ods,
    }
}

fn concept_label(instance: &Instance, concept: &LineConcept) -> String {
    concept
        .lines
        .iter()
        .map(|c| format!("{}@{}x{}", instance.line(c.line).id, c.headway.minutes(), c.vehicles))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Serialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: Option<f64>,
    pub best_upper_bound: Option<f64>,
    pub represented: usize,
    pub paths: usize,
    pub violations: usize,
    /// `line@headway x vehicles` of the restricted solution.
    pub selected: String,
    /// `line:headway/bound` entries of the representation solved.
    pub representation: String,
}

impl IterationRow {
    pub fn new(it: &IterationRecord, instance: &Instance) -> Self {
        let selected = it
            .selected
            .iter()
            .map(|&(l, h, z)| format!("{}@{h}x{z}", instance.line(l).id))
            .collect::<Vec<_>>()
            .join(" ");
        let representation = it
            .representation
            .iter()
            .enumerate()
            .flat_map(|(l, entries)| {
                let id = &instance.lines[l].id;
                entries.iter().map(move |(h, b)| format!("{id}:{h}/{b}"))
            })
            .collect::<Vec<_>>()
            .join(" ");
        IterationRow {
            iteration: it.iteration,
            lower_bound: it.lower_bound,
            upper_bound: it.upper_bound,
            best_upper_bound: it.best_upper_bound,
            represented: it.represented,
            paths: it.paths,
            violations: it.violations.len(),
            selected,
            representation,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SolveSummary {
    pub termination: String,
    pub status: Option<String>,
    pub objective: Option<f64>,
    pub lower_bound: Option<f64>,
    pub breakdown: Option<ObjectiveBreakdown>,
    pub total: Option<f64>,
    pub operating_cost: Option<f64>,
}

impl SolveSummary {
    pub fn new(termination: String, lower_bound: Option<f64>, solution: Option<&LppSolution>) -> Self {
        SolveSummary {
            termination,
            status: solution.map(|s| snake(&s.status)),
            objective: solution.map(|s| s.objective),
            lower_bound,
            breakdown: solution.map(|s| s.breakdown),
            total: solution.map(|s| s.breakdown.total()),
            operating_cost: solution.map(|s| s.breakdown.operating_cost()),
        }
    }
}

/// One line per assignment rule or benchmark variant.
#[derive(Debug, Serialize)]
pub struct MetricsRow {
    pub name: String,
    pub objective: f64,
    pub passenger_cost: f64,
    pub weighted_travel_minutes: f64,
    pub operating_cost: f64,
    pub revenue: f64,
    pub captured_pct: f64,
    pub lost_demand: f64,
    pub avg_cost_per_served: f64,
    pub mean_utilization: f64,
    pub passenger_minute_utilization: f64,
    pub at_capacity_fraction: f64,
    pub over_capacity_segments: usize,
    pub split_od_fraction: f64,
    pub mean_extra_cost: f64,
}

impl MetricsRow {
    pub fn new(name: &str, m: &MetricsReport) -> Self {
        MetricsRow {
            name: name.into(),
            objective: m.objective,
            passenger_cost: m.passenger_cost,
            weighted_travel_minutes: m.weighted_travel_minutes,
            operating_cost: m.breakdown.operating_cost(),
            revenue: m.breakdown.revenue,
            captured_pct: m.captured_pct,
            lost_demand: m.lost_demand,
            avg_cost_per_served: m.avg_cost_per_served,
            mean_utilization: m.mean_utilization,
            passenger_minute_utilization: m.passenger_minute_utilization,
            at_capacity_fraction: m.at_capacity_fraction,
            over_capacity_segments: m.over_capacity_segments,
            split_od_fraction: m.split_od_fraction,
            mean_extra_cost: m.mean_extra_cost,
        }
    }
}

/// `<prefix>metrics.json`, `<prefix>loads.csv` and `<prefix>ods.csv`.
pub fn metrics_outputs(out: &mut Outputs, prefix: &str, m: &MetricsReport) -> Result<()> {
    out.json(&format!("{prefix}metrics.json"), m)?;
    out.csv(&format!("{prefix}loads.csv"), &m.loads)?;
    out.csv(&format!("{prefix}ods.csv"), &m.ods)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchmarkEntry<'a> {
    name: &'a str,
    status: String,
    proven_optimal: bool,
    objective: f64,
    lines: String,
    metrics: &'a MetricsReport,
}

pub fn benchmark_outputs(out: &mut Outputs, instance: &Instance, rec: &BenchmarkRecord) -> Result<()> {
    let entries: Vec<BenchmarkEntry> = rec
        .variants
        .iter()
        .map(|v| BenchmarkEntry {
            name: &v.name,
            status: snake(&v.status),
            proven_optimal: v.proven_optimal,
            objective: v.objective,
            lines: concept_label(instance, &v.concept),
            metrics: &v.metrics,
        })
        .collect();
    out.json(
        "benchmark.json",
        &serde_json::json!({ "budget": rec.budget, "variants": entries }),
    )?;
    // csv cannot flatten nested structs, so the table is built by hand
    let mut w = csv::WriterBuilder::new().delimiter(b';').from_writer(Vec::new());
    w.write_record([
        "variant",
        "status",
        "proven_optimal",
        "budget",
        "lines",
        "objective",
        "passenger_cost",
        "operating_cost",
        "captured_pct",
        "mean_utilization",
        "passenger_minute_utilization",
        "split_od_fraction",
    ])?;
    for v in &rec.variants {
        let m = MetricsRow::new(&v.name, &v.metrics);
        w.write_record([
            v.name.clone(),
            snake(&v.status),
            v.proven_optimal.to_string(),
            rec.budget.to_string(),
            concept_label(instance, &v.concept),
            m.objective.to_string(),
            m.passenger_cost.to_string(),
            m.operating_cost.to_string(),
            m.captured_pct.to_string(),
            m.mean_utilization.to_string(),
            m.passenger_minute_utilization.to_string(),
            m.split_od_fraction.to_string(),
        ])?;
    }
    out.raw("benchmark.csv", w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub run: String,
    pub lambda: f64,
    pub h_t: Option<f64>,
    pub kappa: usize,
    pub termination: String,
    pub objective: Option<f64>,
    pub lower_bound: Option<f64>,
    pub solves: Option<usize>,
    pub passenger_cost: Option<f64>,
    pub operating_cost: Option<f64>,
    pub lines: String,
}

impl SweepRow {
    pub fn new(index: usize, lambda: f64, h_t: Option<f64>, kappa: usize, run: &crate::SolveRun, instance: &Instance) -> Self {
        let sol = run.solution.as_ref();
        SweepRow {
            run: format!("run-{index:03}"),
            lambda,
            h_t,
            kappa,
            termination: run.termination.clone(),
            objective: sol.map(|s| s.breakdown.total()),
            lower_bound: run.lower_bound,
            solves: run.iterations.as_ref().map(Vec::len),
            passenger_cost: sol.map(|s| s.breakdown.passenger_raw),
            operating_cost: sol.map(|s| s.breakdown.operating_cost()),
            lines: sol.map_or_else(String::new, |s| concept_label(instance, &LineConcept::from_solution(s))),
        }
    }
}
