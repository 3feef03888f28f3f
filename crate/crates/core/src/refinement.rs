//! Dynamic frequency refinement.
//!
//! Each line starts from a single optimistic entry: its best headway paired
//! with the fleet of its worst one. The restricted model is therefore a
//! relaxation and its optimum a lower bound. Whenever a solution promises a
//! headway it cannot staff, the line's representation is refined: the
//! promised headway gets a tighter fleet bound and the headway the fleet can
//! actually run is added. The first solution that staffs every opened line
//! is optimal for the full problem.

use std::time::Instant;

use serde::Serialize;

use crate::cgn::build_cgn;
use crate::error::{Error, Result};
use crate::milp::{
    objective_components, solve_lpp, LppSolution, ModelOptions, ObjectiveKind, OpenLine, SolveStatus,
    SolverBackend,
};
use crate::model::{Headway, Instance, Line, LineIdx, OdIdx};
use crate::paths::{
    generate_paths_with, signature_cost, PathId, PathMode, PathOptions, PathSet, Signature,
    COST_EPS,
};

/// Per line, the represented headways with a lower bound on the vehicles
/// each needs. Entries are sorted by headway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeadwayRepresentation {
    pub iteration: usize,
    lines: Vec<Vec<(Headway, u32)>>,
}

impl HeadwayRepresentation {
    /// One ideal point per line: `(h_min, v_min)`.
    pub fn initialize(instance: &Instance) -> Self {
        HeadwayRepresentation {
            iteration: 0,
            lines: instance
                .lines
                .iter()
                .map(|l| vec![(l.profile.h_min(), l.profile.v_min())])
                .collect(),
        }
    }

    /// Every operable headway with its true fleet requirement.
    pub fn complete(instance: &Instance) -> Self {
        HeadwayRepresentation {
            iteration: 0,
            lines: instance
                .lines
                .iter()
                .map(|l| l.profile.entries().iter().map(|e| (e.headway, e.vehicles)).collect())
                .collect(),
        }
    }

    pub fn from_entries(lines: Vec<Vec<(Headway, u32)>>) -> Self {
        let mut lines = lines;
        for l in &mut lines {
            l.sort();
        }
        HeadwayRepresentation {
            iteration: 0,
            lines,
        }
    }

    pub fn empty(instance: &Instance) -> Self {
        HeadwayRepresentation {
            iteration: 0,
            lines: vec![Vec::new(); instance.lines.len()],
        }
    }

    pub fn entries(&self, line: LineIdx) -> &[(Headway, u32)] {
        &self.lines[line.0]
    }

    pub fn bound(&self, line: LineIdx, headway: Headway) -> Option<u32> {
        self.lines[line.0]
            .iter()
            .find(|e| e.0 == headway)
            .map(|e| e.1)
    }

    pub fn contains(&self, line: LineIdx, headway: Headway) -> bool {
        self.bound(line, headway).is_some()
    }

    /// Total number of represented (line, headway) pairs.
    pub fn size(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }

    /// Plain `(minutes, bound)` pairs per line, for logs and comparisons.
    pub fn snapshot(&self) -> Vec<Vec<(f64, u32)>> {
        self.lines
            .iter()
            .map(|l| l.iter().map(|&(h, v)| (h.minutes(), v)).collect())
            .collect()
    }

    /// Restricts a path set to the represented headways.
    pub fn restrict(&self, pathset: &PathSet) -> PathSet {
        pathset.restrict(|l, h| self.contains(l, h))
    }
}

/// An opened line whose fleet cannot run the selected headway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub line: LineIdx,
    pub headway: Headway,
    pub vehicles: u32,
    pub required: u32,
}

fn whole_vehicles(v: f64) -> u32 {
    (v + 1e-6).floor().max(0.0) as u32
}

pub fn check_feasibility(solution: &LppSolution, instance: &Instance) -> Vec<Violation> {
    solution
        .open_lines
        .iter()
        .filter_map(|o| {
            let line = instance.line(o.line);
            let required = line.vehicles_for(o.headway);
            let vehicles = whole_vehicles(o.vehicles);
            (vehicles < required).then_some(Violation {
                line: o.line,
                headway: o.headway,
                vehicles,
                required,
            })
        })
        .collect()
}

/// Applies one refinement step to a line: `headway` was selected with only
/// `vehicles` vehicles.
fn refine_line(
    entries: &mut Vec<(Headway, u32)>,
    line: &Line,
    headway: Headway,
    vehicles: u32,
) -> Result<()> {
    let contradiction = |msg: String| Error::Refinement(format!("line {}: {msg}", line.id));
    let pos = entries
        .iter()
        .position(|e| e.0 == headway)
        .ok_or_else(|| contradiction(format!("headway {headway} is not represented")))?;
    let operable = line.f_h(vehicles.max(1))?;
    if !operable.sufficient {
        return Err(contradiction(format!(
            "{vehicles} vehicles cannot run any headway, yet the bound allowed it"
        )));
    }
    let h_true = operable.headway;
    if h_true <= headway {
        return Err(contradiction(format!(
            "{vehicles} vehicles already run headway {headway}"
        )));
    }
    let below = line
        .next_smaller_headway(h_true)?
        .expect("a headway above another has a predecessor");
    let tightened = line.vehicles_for(below);
    if tightened <= entries[pos].1 {
        return Err(contradiction(format!(
            "bound at headway {headway} cannot tighten beyond {}",
            entries[pos].1
        )));
    }
    if entries.iter().any(|e| e.0 == h_true) {
        return Err(contradiction(format!("headway {h_true} is already represented")));
    }
    let v_min = line.profile.v_min();
    let inserted = match entries.get(pos + 1) {
        Some(&(h_next, _)) => {
            let prev = line
                .next_smaller_headway(h_next)?
                .expect("represented successor has a predecessor");
            v_min.max(line.vehicles_for(prev))
        }
        None => v_min,
    };
    entries[pos].1 = tightened;
    entries.insert(pos + 1, (h_true, inserted));
    Ok(())
}

/// Lines sharing the most PTN edges with `line`, best first; ties by id.
pub fn similar_lines(instance: &Instance, line: LineIdx, kappa: usize) -> Vec<LineIdx> {
    let own = &instance.line(line).edges;
    let mut scored: Vec<(usize, &str, LineIdx)> = instance
        .line_indices()
        .filter(|&l| l != line)
        .map(|l| {
            let other = instance.line(l);
            let shared = other.edges.iter().filter(|e| own.contains(e)).count();
            (shared, other.id.as_str(), l)
        })
        .filter(|s| s.0 > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(kappa).map(|s| s.2).collect()
}

/// Refines every violated line and, with `kappa > 0`, excludes the same
/// understaffed headway on the lines most similar to each violated one.
pub fn refine(
    representation: &HeadwayRepresentation,
    violations: &[Violation],
    instance: &Instance,
    kappa: usize,
) -> Result<HeadwayRepresentation> {
    if violations.is_empty() {
        return Err(Error::Refinement("refine called without violations".into()));
    }
    let mut next = representation.clone();
    next.iteration += 1;
    let mut touched = vec![false; instance.lines.len()];
    for v in violations {
        refine_line(&mut next.lines[v.line.0], instance.line(v.line), v.headway, v.vehicles)?;
        touched[v.line.0] = true;
    }
    if kappa > 0 {
        for v in violations {
            for other in similar_lines(instance, v.line, kappa) {
                if touched[other.0] {
                    continue;
                }
                let line = instance.line(other);
                let Some(bound) = next.bound(other, v.headway) else {
                    continue;
                };
                if bound < line.vehicles_for(v.headway) {
                    refine_line(&mut next.lines[other.0], line, v.headway, bound)?;
                    touched[other.0] = true;
                }
            }
        }
    }
    Ok(next)
}

/// Cut data for one line of one geographic route: using the route at all
/// requires at least `vehicles` on `line`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineTarget {
    pub line: LineIdx,
    /// Largest headway at which the route stays acceptable, other lines at
    /// their best headway.
    pub threshold_headway: Headway,
    pub vehicles: u32,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidInequalityTarget {
    pub od: OdIdx,
    pub signature: Signature,
    pub lines: Vec<LineTarget>,
}

impl ValidInequalityTarget {
    pub fn is_active(&self) -> bool {
        self.lines.iter().any(|t| t.active)
    }
}

pub fn default_threshold_headway(instance: &Instance) -> f64 {
    instance.max_headway().minutes() / 2.0
}

/// Targets for every route in `pathset`; a line target is active when its
/// threshold headway is at most `h_t`. Redundant ones (threshold needing no
/// more than the minimum fleet) are left out.
pub fn valid_inequality_targets(
    pathset: &PathSet,
    instance: &Instance,
    h_t: f64,
) -> Vec<ValidInequalityTarget> {
    let mut out = Vec::new();
    for od in instance.od_indices() {
        let limit = pathset.od[od.0].threshold;
        for sig in pathset.signatures(od) {
            let mut lines = Vec::new();
            for (i, leg) in sig.iter().enumerate() {
                let line = instance.line(leg.line);
                let mut hw: Vec<Headway> = sig
                    .iter()
                    .map(|l| instance.line(l.line).profile.h_min())
                    .collect();
                let accepted = line.profile.headways().rev().find(|&h| {
                    hw[i] = h;
                    signature_cost(instance, sig, &hw) <= limit + COST_EPS
                });
                let Some(h_star) = accepted else {
                    continue;
                };
                let vehicles = line.vehicles_for(h_star);
                if vehicles <= line.profile.v_min() {
                    continue;
                }
                lines.push(LineTarget {
                    line: leg.line,
                    threshold_headway: h_star,
                    vehicles,
                    active: h_star.minutes() <= h_t + 1e-9,
                });
            }
            if !lines.is_empty() {
                out.push(ValidInequalityTarget {
                    od,
                    signature: sig.clone(),
                    lines,
                });
            }
        }
    }
    out
}

/// Turns any restricted solution into a plan that is feasible for the full
/// problem: understaffed lines run the headway their fleet allows, and each
/// flow moves to the same route at the true headways (or to the alternative
/// mode when that variant is not an admissible path). Vehicles and line
/// openings are unchanged, so capacity and budget still hold.
pub fn repair(
    solution: &LppSolution,
    instance: &Instance,
    pathset: &PathSet,
    objective: ObjectiveKind,
) -> (LppSolution, f64) {
    let open_lines: Vec<OpenLine> = solution
        .open_lines
        .iter()
        .map(|o| {
            let line = instance.line(o.line);
            let headway = if whole_vehicles(o.vehicles) < line.vehicles_for(o.headway) {
                line.headway_for_fleet(o.vehicles).headway
            } else {
                o.headway
            };
            OpenLine { headway, ..o.clone() }
        })
        .collect();
    let true_headway = |l: LineIdx| {
        open_lines
            .iter()
            .find(|o| o.line == l)
            .map(|o| o.headway)
            .expect("used paths only ride opened lines")
    };
    let mut merged: std::collections::BTreeMap<PathId, f64> = std::collections::BTreeMap::new();
    for &(pid, share) in &solution.flows {
        let p = pathset.path(pid);
        let target = if p.alternative {
            pid
        } else {
            let hw: Vec<Headway> = p.lines().map(true_headway).collect();
            pathset
                .variant(p.od, &p.signature, &hw)
                .unwrap_or(pathset.od[p.od.0].alternative)
        };
        *merged.entry(target).or_insert(0.0) += share;
    }
    let flows: Vec<(PathId, f64)> = merged.into_iter().collect();
    let mut breakdown = objective_components(instance, pathset, &open_lines, &flows);
    for (_, by_type) in &solution.idle_vehicles {
        breakdown.vehicles += by_type
            .iter()
            .zip(&instance.vehicle_types)
            .map(|(z, v)| z * v.cost)
            .sum::<f64>();
    }
    let value = match objective {
        ObjectiveKind::Full => breakdown.total(),
        ObjectiveKind::PassengerOnly => breakdown.passenger,
    };
    let repaired = LppSolution {
        status: SolveStatus::Feasible,
        objective: value,
        bound: solution.bound,
        open_lines,
        idle_vehicles: solution.idle_vehicles.clone(),
        flows,
        breakdown,
        wall_time: 0.0,
    };
    (repaired, value)
}

#[derive(Debug, Clone, Copy)]
pub struct DfraOptions {
    pub mode: PathMode,
    /// Headway threshold for valid inequalities; `None` uses half the
    /// largest candidate headway, `Some(0.0)` disables them.
    pub h_t: Option<f64>,
    pub kappa: usize,
    pub time_limit: Option<f64>,
    /// Maximum number of model solves; `None` uses Σ_l |F_l|.
    pub iteration_limit: Option<usize>,
    pub model: ModelOptions,
    pub paths: PathOptions,
}

impl Default for DfraOptions {
    fn default() -> Self {
        DfraOptions {
            mode: PathMode::Service,
            h_t: None,
            kappa: 0,
            time_limit: None,
            iteration_limit: None,
            model: ModelOptions::default(),
            paths: PathOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Optimal,
    Infeasible,
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lower_bound: f64,
    /// Repaired objective of this iteration's solution.
    pub upper_bound: Option<f64>,
    pub best_upper_bound: Option<f64>,
    pub represented: usize,
    pub violations: Vec<Violation>,
    pub paths: usize,
    pub wall_time: f64,
    pub representation: Vec<Vec<(f64, u32)>>,
    /// `(line, headway, vehicles)` of the restricted solution.
    pub selected: Vec<(LineIdx, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DfraResult {
    pub solution: Option<LppSolution>,
    pub proven_optimal: bool,
    pub termination: Termination,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_representation: HeadwayRepresentation,
}

impl DfraResult {
    pub fn solves(&self) -> usize {
        self.iterations.len()
    }
}

/// Builds the network and path set, then runs [`run_with_paths`].
pub fn run(instance: &Instance, options: &DfraOptions, backend: &dyn SolverBackend) -> Result<DfraResult> {
    let cgn = build_cgn(instance);
    let pathset = generate_paths_with(instance, &cgn, options.mode, options.paths)?;
    run_with_paths(instance, &pathset, options, backend)
}

pub fn run_with_paths(
    instance: &Instance,
    pathset: &PathSet,
    options: &DfraOptions,
    backend: &dyn SolverBackend,
) -> Result<DfraResult> {
    let start = Instant::now();
    let iteration_limit = options
        .iteration_limit
        .unwrap_or_else(|| instance.total_frequencies());
    let targets = if options.mode == PathMode::Service {
        let h_t = options.h_t.unwrap_or_else(|| default_threshold_headway(instance));
        let mut t = valid_inequality_targets(pathset, instance, h_t);
        t.retain(ValidInequalityTarget::is_active);
        t
    } else {
        Vec::new()
    };
    log::debug!("{} active valid-inequality targets", targets.len());

    let mut rep = HeadwayRepresentation::initialize(instance);
    let mut records = Vec::new();
    let mut best: Option<(LppSolution, f64)> = None;
    let mut lower_bound = f64::NEG_INFINITY;

    let finish = |termination, best: Option<(LppSolution, f64)>, lb: f64, records, rep| {
        let ub = best.as_ref().map_or(f64::INFINITY, |b: &(LppSolution, f64)| b.1);
        DfraResult {
            solution: best.map(|b| b.0),
            proven_optimal: termination == Termination::Optimal,
            termination,
            lower_bound: lb,
            upper_bound: ub,
            iterations: records,
            final_representation: rep,
        }
    };

    loop {
        if records.len() >= iteration_limit {
            return Ok(finish(Termination::IterationLimit, best, lower_bound, records, rep));
        }
        let mut model_opts = options.model;
        if let Some(limit) = options.time_limit {
            let left = limit - start.elapsed().as_secs_f64();
            if left <= 0.0 {
                return Ok(finish(Termination::TimeLimit, best, lower_bound, records, rep));
            }
            model_opts.solve.time_limit = Some(left);
        }
        let iter_start = Instant::now();
        let restricted = rep.restrict(pathset);
        let solution = solve_lpp(instance, &rep, &restricted, &targets, model_opts, backend)?;
        match solution.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Ok(finish(Termination::Infeasible, best, lower_bound, records, rep));
            }
            SolveStatus::Feasible | SolveStatus::Limit => {
                // Without a proven optimum the iteration gives no bound;
                // keep a repaired incumbent if there is one.
                if solution.has_incumbent() {
                    let (fixed, ub) = repair(&solution, instance, pathset, options.model.objective);
                    if best.as_ref().is_none_or(|b| ub < b.1) {
                        best = Some((fixed, ub));
                    }
                }
                return Ok(finish(Termination::TimeLimit, best, lower_bound, records, rep));
            }
        }
        // The solver's proven bound is the safe lower bound; the incumbent
        // value is what the log reports when the gap is closed.
        let lb = if (solution.objective - solution.bound).abs() <= 1e-9 * solution.objective.abs().max(1.0) {
            solution.objective
        } else {
            solution.bound
        };
        lower_bound = lower_bound.max(lb);
        let violations = check_feasibility(&solution, instance);
        let (iter_ub, done) = if violations.is_empty() {
            (solution.objective, true)
        } else {
            let (fixed, ub) = repair(&solution, instance, pathset, options.model.objective);
            if best.as_ref().is_none_or(|b| ub < b.1) {
                best = Some((fixed, ub));
            }
            (ub, false)
        };
        if done && best.as_ref().is_none_or(|b| iter_ub <= b.1) {
            best = Some((solution.clone(), iter_ub));
        }
        records.push(IterationRecord {
            iteration: rep.iteration,
            lower_bound: lb,
            upper_bound: Some(iter_ub),
            best_upper_bound: best.as_ref().map(|b| b.1),
            represented: rep.size(),
            violations: violations.clone(),
            paths: restricted.len(),
            wall_time: iter_start.elapsed().as_secs_f64(),
            representation: rep.snapshot(),
            selected: solution
                .open_lines
                .iter()
                .map(|o| (o.line, o.headway.minutes(), o.vehicles))
                .collect(),
        });
        log::info!(
            "iteration {}: lb {:.6} ub {:.6} violations {}",
            rep.iteration,
            lb,
            iter_ub,
            violations.len()
        );
        if done {
            // A staffed restricted optimum is optimal for the full problem.
            let result_solution = solution;
            let mut result = finish(
                Termination::Optimal,
                Some((result_solution, iter_ub)),
                lower_bound,
                records,
                rep,
            );
            result.upper_bound = iter_ub;
            return Ok(result);
        }
        rep = refine(&rep, &violations, instance, options.kappa)?;
    }
}

/// Solves the full model (every operable headway with its true fleet).
pub fn solve_direct(
    instance: &Instance,
    pathset: &PathSet,
    options: ModelOptions,
    backend: &dyn SolverBackend,
) -> Result<LppSolution> {
    let rep = HeadwayRepresentation::complete(instance);
    solve_lpp(instance, &rep, pathset, &[], options, backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    fn h(m: f64) -> Headway {
        Headway::new(m).unwrap()
    }

    #[test]
    fn initialization_is_ideal_point() {
        let inst = samples::worked_example(1.0);
        let rep = HeadwayRepresentation::initialize(&inst);
        assert_eq!(rep.snapshot(), vec![vec![(5.0, 2)]]);
    }

    #[test]
    fn refinement_steps_follow_worked_example() {
        let inst = samples::worked_example(1.0);
        let rep = HeadwayRepresentation::initialize(&inst);
        let v = |z| Violation {
            line: LineIdx(0),
            headway: h(5.0),
            vehicles: z,
            required: 12,
        };
        let r1 = refine(&rep, &[v(3)], &inst, 0).unwrap();
        assert_eq!(r1.snapshot(), vec![vec![(5.0, 4), (20.0, 2)]]);
        let r2 = refine(&r1, &[v(4)], &inst, 0).unwrap();
        assert_eq!(r2.snapshot(), vec![vec![(5.0, 6), (15.0, 4), (20.0, 2)]]);
        assert_eq!(r2.iteration, 2);
    }

    #[test]
    fn refinement_rejects_non_violations() {
        let inst = samples::worked_example(1.0);
        let rep = HeadwayRepresentation::complete(&inst);
        let v = Violation {
            line: LineIdx(0),
            headway: h(20.0),
            vehicles: 3,
            required: 3,
        };
        assert!(matches!(refine(&rep, &[v], &inst, 0), Err(Error::Refinement(_))));
        assert!(refine(&rep, &[], &inst, 0).is_err());
    }

    #[test]
    fn feasibility_check_flags_understaffed_lines() {
        let inst = samples::worked_example(1.0);
        let sol = |hw: f64, z: f64| LppSolution {
            status: SolveStatus::Optimal,
            objective: 0.0,
            bound: 0.0,
            open_lines: vec![OpenLine {
                line: LineIdx(0),
                headway: h(hw),
                vehicles: z,
                by_type: vec![z],
            }],
            idle_vehicles: Vec::new(),
            flows: Vec::new(),
            breakdown: Default::default(),
            wall_time: 0.0,
        };
        let v = check_feasibility(&sol(5.0, 3.0), &inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].required, 12);
        assert!(check_feasibility(&sol(20.0, 3.0), &inst).is_empty());
        let mut empty = sol(5.0, 0.0);
        empty.open_lines.clear();
        assert!(check_feasibility(&empty, &inst).is_empty());
    }
}
