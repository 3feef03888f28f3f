//! The line planning MILP for a headway representation and a path set.
//!
//! Variables: `y[l,h]` opens line `l` at headway `h`, `x[p]` is the share of
//! an OD's demand on path `p`, `z[l,v]` counts vehicles of type `v` on `l`.
//! The model is assembled into a solver-neutral [`MilpProblem`] and handed
//! to a [`SolverBackend`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::cgn::Direction;
use crate::error::{Error, Result};
use crate::model::{Headway, Instance, LineIdx, OdIdx};
use crate::paths::{PathId, PathSet, Signature};
use crate::refinement::{HeadwayRepresentation, ValidInequalityTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    pub integer: bool,
}

/// Which model equation a row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RowTag {
    Assignment,
    Capacity,
    Linking,
    OneFrequency,
    Vehicles,
    Budget,
    SignatureUse,
    SignatureVehicles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub name: String,
    pub tag: RowTag,
    pub terms: Vec<(VarId, f64)>,
    pub lower: f64,
    pub upper: f64,
}

/// A minimization problem with linear rows `lower <= a·x <= upper`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MilpProblem {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl MilpProblem {
    pub fn add_var(&mut self, name: String, bounds: (f64, f64), objective: f64, integer: bool) -> VarId {
        self.variables.push(Variable {
            name,
            lower: bounds.0,
            upper: bounds.1,
            objective,
            integer,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_row(&mut self, name: String, tag: RowTag, terms: Vec<(VarId, f64)>, bounds: (f64, f64)) {
        self.constraints.push(Constraint {
            name,
            tag,
            terms,
            lower: bounds.0,
            upper: bounds.1,
        });
    }

    pub fn rows_tagged(&self, tag: RowTag) -> usize {
        self.constraints.iter().filter(|c| c.tag == tag).count()
    }

    pub fn objective_at(&self, values: &[f64]) -> f64 {
        self.variables
            .iter()
            .zip(values)
            .map(|(v, x)| v.objective * x)
            .sum()
    }

    /// Largest bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &x) in self.variables.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
            if v.integer {
                worst = worst.max((x - x.round()).abs());
            }
        }
        for c in &self.constraints {
            let a: f64 = c.terms.iter().map(|&(v, k)| k * values[v.0]).sum();
            worst = worst.max(c.lower - a).max(a - c.upper);
        }
        worst
    }

    /// CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        fn term(out: &mut String, k: f64, name: &str, first: bool) {
            if k < 0.0 {
                let _ = write!(out, " - {} {name}", -k);
            } else if first {
                let _ = write!(out, " {k} {name}");
            } else {
                let _ = write!(out, " + {k} {name}");
            }
        }
        let mut out = String::from("Minimize\n obj:");
        let mut first = true;
        for v in self.variables.iter().filter(|v| v.objective != 0.0) {
            term(&mut out, v.objective, &v.name, first);
            first = false;
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            let mut lhs = String::new();
            for (i, &(v, k)) in c.terms.iter().enumerate() {
                term(&mut lhs, k, &self.variables[v.0].name, i == 0);
            }
            if lhs.is_empty() {
                lhs.push_str(" 0 dummy");
            }
            if c.lower == c.upper {
                let _ = writeln!(out, " {}:{lhs} = {}", c.name, c.upper);
            } else {
                if c.lower.is_finite() {
                    let _ = writeln!(out, " {}_lo:{lhs} >= {}", c.name, c.lower);
                }
                if c.upper.is_finite() {
                    let _ = writeln!(out, " {}_up:{lhs} <= {}", c.name, c.upper);
                }
            }
        }
        out.push_str("Bounds\n");
        for v in &self.variables {
            let hi = if v.upper.is_finite() {
                v.upper.to_string()
            } else {
                "+inf".into()
            };
            let _ = writeln!(out, " {} <= {} <= {hi}", v.lower, v.name);
        }
        let ints: Vec<&str> = self
            .variables
            .iter()
            .filter(|v| v.integer)
            .map(|v| v.name.as_str())
            .collect();
        if !ints.is_empty() {
            out.push_str("General\n");
            for name in ints {
                let _ = writeln!(out, " {name}");
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Stopped early with an incumbent.
    Feasible,
    Infeasible,
    /// Stopped early without an incumbent.
    Limit,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative MIP gap at which the solver may stop.
    pub gap: f64,
    pub time_limit: Option<f64>,
    /// Seed for the solver's internal randomization.
    pub seed: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap: 1e-9,
            time_limit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    pub values: Vec<f64>,
}

/// Minimal interface a MILP engine must offer.
pub trait SolverBackend {
    fn name(&self) -> &str;
    fn supports_integers(&self) -> bool;
    fn solve(&self, problem: &MilpProblem, options: &SolveOptions) -> Result<RawSolution>;
}

/// HiGHS, through its C API.
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

impl SolverBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn supports_integers(&self) -> bool {
        true
    }

    fn solve(&self, problem: &MilpProblem, options: &SolveOptions) -> Result<RawSolution> {
        use highs::{HighsModelStatus as S, RowProblem, Sense};

        let mut pb = RowProblem::default();
        let cols: Vec<highs::Col> = problem
            .variables
            .iter()
            .map(|v| {
                let range = v.lower..=v.upper;
                if v.integer {
                    pb.add_integer_column(v.objective, range)
                } else {
                    pb.add_column(v.objective, range)
                }
            })
            .collect();
        for c in &problem.constraints {
            let terms: Vec<(highs::Col, f64)> = c.terms.iter().map(|&(v, k)| (cols[v.0], k)).collect();
            pb.add_row(c.lower..=c.upper, terms);
        }
        let mut model = pb.optimise(Sense::Minimise);
        model.make_quiet();
        model.set_option("mip_rel_gap", options.gap);
        model.set_option("mip_abs_gap", 1e-9);
        model.set_option("random_seed", options.seed.min(i32::MAX as u32) as i32);
        if let Some(t) = options.time_limit {
            model.set_option("time_limit", t.max(0.0));
        }
        let solved = model
            .try_solve()
            .map_err(|s| Error::Solver(format!("HiGHS run failed: {s:?}")))?;
        let has_integers = problem.variables.iter().any(|v| v.integer);
        let values = solved.get_solution().columns().to_vec();
        let objective = solved.objective_value();
        let bound = if has_integers {
            solved
                .double_info_value(c"mip_dual_bound")
                .unwrap_or(f64::NEG_INFINITY)
        } else {
            objective
        };
        let status = match solved.status() {
            S::Optimal => SolveStatus::Optimal,
            S::ModelEmpty => {
                return Ok(RawSolution {
                    status: SolveStatus::Optimal,
                    objective: 0.0,
                    bound: 0.0,
                    values: vec![0.0; problem.variables.len()],
                })
            }
            S::Infeasible => SolveStatus::Infeasible,
            S::ReachedTimeLimit
            | S::ReachedIterationLimit
            | S::ReachedSolutionLimit
            | S::ReachedInterrupt
            | S::ReachedMemoryLimit => {
                if values.len() == problem.variables.len()
                    && problem.max_violation(&values) <= 1e-6
                {
                    SolveStatus::Feasible
                } else {
                    SolveStatus::Limit
                }
            }
            other => return Err(Error::Solver(format!("HiGHS returned status {other:?}"))),
        };
        Ok(RawSolution {
            status,
            objective,
            bound: bound.min(objective),
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Weighted passenger cost plus operating cost minus fare revenue.
    Full,
    /// The passenger term alone.
    PassengerOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOptions {
    pub integer_vehicles: bool,
    pub objective: ObjectiveKind,
    pub solve: SolveOptions,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            integer_vehicles: true,
            objective: ObjectiveKind::Full,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LppModel {
    pub problem: MilpProblem,
    pub y: BTreeMap<(LineIdx, Headway), VarId>,
    pub x: Vec<(PathId, VarId)>,
    /// Per line, one variable per vehicle type.
    pub z: Vec<Vec<VarId>>,
    pub delta: Vec<((OdIdx, Signature), VarId)>,
    pub options: ModelOptions,
}

/// Objective components under the full objective, whatever was optimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    /// `λ · Σ c_p w_d x_p`.
    pub passenger: f64,
    /// `Σ c_p w_d x_p`, comparable across weights.
    pub passenger_raw: f64,
    pub vehicles: f64,
    pub lines: f64,
    pub revenue: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.passenger + self.vehicles + self.lines - self.revenue
    }

    pub fn operating_cost(&self) -> f64 {
        self.vehicles + self.lines
    }

    /// Total with the passenger term re-weighted to `lambda`.
    pub fn normalized_total(&self, lambda: f64) -> f64 {
        lambda * self.passenger_raw + self.vehicles + self.lines - self.revenue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenLine {
    pub line: LineIdx,
    pub headway: Headway,
    /// Total vehicles over all types.
    pub vehicles: f64,
    pub by_type: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LppSolution {
    pub status: SolveStatus,
    /// Value of the optimized objective.
    pub objective: f64,
    pub bound: f64,
    pub open_lines: Vec<OpenLine>,
    /// Lines with vehicles but no headway selected, per vehicle type.
    pub idle_vehicles: Vec<(LineIdx, Vec<f64>)>,
    pub flows: Vec<(PathId, f64)>,
    pub breakdown: ObjectiveBreakdown,
    pub wall_time: f64,
}

impl LppSolution {
    pub fn open_line(&self, line: LineIdx) -> Option<&OpenLine> {
        self.open_lines.iter().find(|o| o.line == line)
    }

    pub fn flow(&self, path: PathId) -> f64 {
        self.flows
            .iter()
            .find(|f| f.0 == path)
            .map_or(0.0, |f| f.1)
    }

    pub fn has_incumbent(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

/// Full-objective components of a given plan and flow.
pub fn objective_components(
    instance: &Instance,
    pathset: &PathSet,
    open_lines: &[OpenLine],
    flows: &[(PathId, f64)],
) -> ObjectiveBreakdown {
    let costs = &instance.costs;
    let mut b = ObjectiveBreakdown::default();
    for &(pid, share) in flows {
        let p = pathset.path(pid);
        let w = instance.od(p.od).demand;
        b.passenger_raw += p.cost * w * share;
        if !p.alternative {
            b.revenue += costs.fare * w * share;
        }
    }
    b.passenger = costs.lambda * b.passenger_raw;
    for o in open_lines {
        b.lines += costs.line_fixed_cost;
        b.vehicles += o
            .by_type
            .iter()
            .zip(&instance.vehicle_types)
            .map(|(z, v)| z * v.cost)
            .sum::<f64>();
    }
    b
}

pub fn build_model(
    instance: &Instance,
    representation: &HeadwayRepresentation,
    pathset: &PathSet,
    targets: &[ValidInequalityTarget],
    options: ModelOptions,
) -> LppModel {
    let costs = &instance.costs;
    let full = options.objective == ObjectiveKind::Full;
    let mut pb = MilpProblem::default();

    let mut y = BTreeMap::new();
    for l in instance.line_indices() {
        for &(h, _) in representation.entries(l) {
            let obj = if full { costs.line_fixed_cost } else { 0.0 };
            let name = format!("y_{}_{}", l.0, h);
            y.insert((l, h), pb.add_var(name, (0.0, 1.0), obj, true));
        }
    }
    let z: Vec<Vec<VarId>> = instance
        .line_indices()
        .map(|l| {
            instance
                .vehicle_types
                .iter()
                .enumerate()
                .map(|(v, vt)| {
                    let obj = if full { vt.cost } else { 0.0 };
                    pb.add_var(
                        format!("z_{}_{v}", l.0),
                        (0.0, f64::INFINITY),
                        obj,
                        options.integer_vehicles,
                    )
                })
                .collect()
        })
        .collect();

    let mut x = Vec::new();
    let mut x_of = HashMap::new();
    for od in instance.od_indices() {
        let w = instance.od(od).demand;
        for p in pathset.model_paths(od) {
            let mut obj = costs.lambda * p.cost * w;
            if full && !p.alternative {
                obj -= costs.fare * w;
            }
            let var = pb.add_var(format!("x_{}", p.id.0), (0.0, 1.0), obj, false);
            x.push((p.id, var));
            x_of.insert(p.id, var);
        }
    }

    for od in instance.od_indices() {
        let terms = pathset.model_paths(od).map(|p| (x_of[&p.id], 1.0)).collect();
        pb.add_row(format!("assign_{}", od.0), RowTag::Assignment, terms, (1.0, 1.0));
    }

    // One capacity row per directed line segment that carries demand.
    let mut segment_users: BTreeMap<(LineIdx, usize, Direction), Vec<(VarId, f64)>> = BTreeMap::new();
    for od in instance.od_indices() {
        let w = instance.od(od).demand;
        if w <= 0.0 {
            continue;
        }
        for p in pathset.model_paths(od) {
            for leg in &p.signature {
                for (seg, dir) in leg.segments() {
                    segment_users
                        .entry((leg.line, seg, dir))
                        .or_default()
                        .push((x_of[&p.id], w));
                }
            }
        }
    }
    for ((line, seg, dir), mut terms) in segment_users {
        for (v, vt) in instance.vehicle_types.iter().enumerate() {
            terms.push((z[line.0][v], -vt.capacity));
        }
        let d = if dir == Direction::Forward { "f" } else { "b" };
        pb.add_row(
            format!("cap_{}_{seg}{d}", line.0),
            RowTag::Capacity,
            terms,
            (f64::NEG_INFINITY, 0.0),
        );
    }

    for od in instance.od_indices() {
        let mut groups: BTreeMap<(LineIdx, Headway), Vec<VarId>> = BTreeMap::new();
        for p in pathset.model_paths(od).filter(|p| !p.alternative) {
            for &u in &p.usages {
                groups.entry(u).or_default().push(x_of[&p.id]);
            }
        }
        for ((l, h), vars) in groups {
            let yv = y[&(l, h)];
            let mut terms: Vec<(VarId, f64)> = vars.into_iter().map(|v| (v, 1.0)).collect();
            terms.push((yv, -1.0));
            pb.add_row(
                format!("link_{}_{}_{}", od.0, l.0, h),
                RowTag::Linking,
                terms,
                (f64::NEG_INFINITY, 0.0),
            );
        }
    }

    for l in instance.line_indices() {
        let ys: Vec<(VarId, f64)> = representation
            .entries(l)
            .iter()
            .map(|&(h, _)| (y[&(l, h)], 1.0))
            .collect();
        if ys.len() > 1 {
            pb.add_row(format!("one_{}", l.0), RowTag::OneFrequency, ys, (f64::NEG_INFINITY, 1.0));
        }
        for &(h, bound) in representation.entries(l) {
            let mut terms: Vec<(VarId, f64)> = z[l.0].iter().map(|&v| (v, 1.0)).collect();
            terms.push((y[&(l, h)], -f64::from(bound)));
            pb.add_row(
                format!("veh_{}_{}", l.0, h),
                RowTag::Vehicles,
                terms,
                (0.0, f64::INFINITY),
            );
        }
    }

    if let Some(budget) = costs.budget.filter(|b| b.is_finite()) {
        let mut terms = Vec::new();
        for l in instance.line_indices() {
            for (v, vt) in instance.vehicle_types.iter().enumerate() {
                terms.push((z[l.0][v], vt.cost));
            }
            for &(h, _) in representation.entries(l) {
                terms.push((y[&(l, h)], costs.line_fixed_cost));
            }
        }
        pb.add_row("budget".into(), RowTag::Budget, terms, (f64::NEG_INFINITY, budget));
    }

    let mut delta = Vec::new();
    for t in targets.iter().filter(|t| t.is_active()) {
        let users: Vec<(VarId, f64)> = pathset
            .model_paths(t.od)
            .filter(|p| !p.alternative && p.signature == t.signature)
            .map(|p| (x_of[&p.id], 1.0))
            .collect();
        if users.is_empty() {
            continue;
        }
        let k = delta.len();
        let d = pb.add_var(format!("delta_{k}"), (0.0, 1.0), 0.0, true);
        let mut terms = users;
        terms.push((d, -1.0));
        pb.add_row(format!("siguse_{k}"), RowTag::SignatureUse, terms, (f64::NEG_INFINITY, 0.0));
        for lt in t.lines.iter().filter(|lt| lt.active) {
            let mut terms: Vec<(VarId, f64)> = vec![(d, f64::from(lt.vehicles))];
            terms.extend(z[lt.line.0].iter().map(|&v| (v, -1.0)));
            pb.add_row(
                format!("sigveh_{k}_{}", lt.line.0),
                RowTag::SignatureVehicles,
                terms,
                (f64::NEG_INFINITY, 0.0),
            );
        }
        delta.push(((t.od, t.signature.clone()), d));
    }

    LppModel {
        problem: pb,
        y,
        x,
        z,
        delta,
        options,
    }
}

impl LppModel {
    pub fn solve(
        &self,
        instance: &Instance,
        pathset: &PathSet,
        backend: &dyn SolverBackend,
    ) -> Result<LppSolution> {
        if !backend.supports_integers()
            && self.problem.variables.iter().any(|v| v.integer)
        {
            return Err(Error::Solver(format!(
                "backend {} cannot handle integer variables",
                backend.name()
            )));
        }
        let start = Instant::now();
        let raw = backend.solve(&self.problem, &self.options.solve)?;
        let wall_time = start.elapsed().as_secs_f64();
        if !matches!(raw.status, SolveStatus::Optimal | SolveStatus::Feasible) {
            return Ok(LppSolution {
                status: raw.status,
                objective: f64::NAN,
                bound: raw.bound,
                open_lines: Vec::new(),
                idle_vehicles: Vec::new(),
                flows: Vec::new(),
                breakdown: ObjectiveBreakdown::default(),
                wall_time,
            });
        }
        let vals = &raw.values;
        let round = |v: f64| if self.options.integer_vehicles { v.round() } else { v };
        let mut open_lines = Vec::new();
        let mut idle_vehicles = Vec::new();
        for l in instance.line_indices() {
            let by_type: Vec<f64> = self.z[l.0].iter().map(|v| round(vals[v.0]).max(0.0)).collect();
            let vehicles: f64 = by_type.iter().sum();
            let selected = self
                .y
                .iter()
                .find(|((line, _), v)| *line == l && vals[v.0] > 0.5)
                .map(|((_, h), _)| *h);
            match selected {
                Some(headway) => open_lines.push(OpenLine {
                    line: l,
                    headway,
                    vehicles,
                    by_type,
                }),
                None if vehicles > 1e-9 => idle_vehicles.push((l, by_type)),
                None => {}
            }
        }
        let flows: Vec<(PathId, f64)> = self
            .x
            .iter()
            .map(|&(p, v)| (p, vals[v.0].clamp(0.0, 1.0)))
            .filter(|f| f.1 > 1e-9)
            .collect();
        let mut breakdown = objective_components(instance, pathset, &open_lines, &flows);
        for (_, by_type) in &idle_vehicles {
            breakdown.vehicles += by_type
                .iter()
                .zip(&instance.vehicle_types)
                .map(|(z, v)| z * v.cost)
                .sum::<f64>();
        }
        Ok(LppSolution {
            status: raw.status,
            objective: raw.objective,
            bound: raw.bound,
            open_lines,
            idle_vehicles,
            flows,
            breakdown,
            wall_time,
        })
    }
}

/// Builds and solves in one step.
pub fn solve_lpp(
    instance: &Instance,
    representation: &HeadwayRepresentation,
    pathset: &PathSet,
    targets: &[ValidInequalityTarget],
    options: ModelOptions,
    backend: &dyn SolverBackend,
) -> Result<LppSolution> {
    build_model(instance, representation, pathset, targets, options).solve(instance, pathset, backend)
}
