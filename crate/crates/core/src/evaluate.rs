//! Service metrics for a line concept under different passenger
//! assignments, and the fixed-demand versus service-dependent comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cgn::{build_cgn, Direction};
use crate::error::{Error, Result};
use crate::milp::{
    objective_components, LppSolution, ModelOptions, ObjectiveBreakdown, ObjectiveKind, OpenLine,
    SolveStatus, SolverBackend,
};
use crate::model::{Headway, Instance, LineIdx, OdIdx};
use crate::paths::{
    format_signature, generate_paths_with, parse_signature, PassengerPath, PathId, PathMode,
    PathOptions, PathSet, ALTERNATIVE_LABEL,
};
use crate::refinement::{run_with_paths, DfraOptions, DfraResult};

pub const DEFAULT_THETA: f64 = -0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptLine {
    pub line: LineIdx,
    pub headway: Headway,
    pub vehicles: f64,
}

/// Opened lines with their headways and fleets.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LineConcept {
    pub lines: Vec<ConceptLine>,
}

impl LineConcept {
    pub fn from_solution(solution: &LppSolution) -> Self {
        LineConcept {
            lines: solution
                .open_lines
                .iter()
                .map(|o| ConceptLine {
                    line: o.line,
                    headway: o.headway,
                    vehicles: o.vehicles,
                })
                .collect(),
        }
    }

    /// Every line runs an operable headway with enough vehicles.
    pub fn validate(&self, instance: &Instance) -> Result<()> {
        let mut seen = vec![false; instance.lines.len()];
        for c in &self.lines {
            let line = instance
                .lines
                .get(c.line.0)
                .ok_or_else(|| Error::Validation(format!("unknown line #{}", c.line.0)))?;
            if std::mem::replace(&mut seen[c.line.0], true) {
                return Err(Error::Validation(format!("line {} opened twice", line.id)));
            }
            if !line.profile.contains(c.headway) {
                return Err(Error::Validation(format!(
                    "headway {} is not operable on line {}",
                    c.headway, line.id
                )));
            }
            let need = line.vehicles_for(c.headway);
            if c.vehicles + 1e-6 < f64::from(need) {
                return Err(Error::Validation(format!(
                    "line {} needs {need} vehicles for headway {}, has {}",
                    line.id, c.headway, c.vehicles
                )));
            }
        }
        Ok(())
    }

    pub fn headway_of(&self, line: LineIdx) -> Option<Headway> {
        self.lines.iter().find(|c| c.line == line).map(|c| c.headway)
    }

    fn open_lines(&self) -> Vec<OpenLine> {
        self.lines
            .iter()
            .map(|c| OpenLine {
                line: c.line,
                headway: c.headway,
                vehicles: c.vehicles,
                by_type: vec![c.vehicles],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLine {
    pub line: String,
    pub headway: f64,
    /// Defaults to the fleet the headway needs.
    #[serde(default)]
    pub vehicles: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFlow {
    pub od: String,
    /// Route as `line:board>alight|...`, or `alternative`.
    pub route: String,
    #[serde(default)]
    pub headways: Vec<f64>,
    pub share: f64,
}

/// Line concept and optional flows keyed by external ids; the exchange
/// format between solving and evaluating.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub lines: Vec<PlanLine>,
    #[serde(default)]
    pub flows: Vec<PlanFlow>,
}

impl Plan {
    pub fn from_solution(solution: &LppSolution, instance: &Instance, pathset: &PathSet) -> Self {
        let lines = solution
            .open_lines
            .iter()
            .map(|o| PlanLine {
                line: instance.line(o.line).id.clone(),
                headway: o.headway.minutes(),
                vehicles: Some(o.vehicles),
            })
            .collect();
        let flows = solution
            .flows
            .iter()
            .map(|&(pid, share)| {
                let p = pathset.path(pid);
                PlanFlow {
                    od: instance.od(p.od).id.clone(),
                    route: format_signature(instance, &p.signature, p.alternative),
                    headways: p.headways().iter().map(|h| h.minutes()).collect(),
                    share,
                }
            })
            .collect();
        Plan { lines, flows }
    }

    pub fn concept(&self, instance: &Instance) -> Result<LineConcept> {
        let mut lines = Vec::with_capacity(self.lines.len());
        for pl in &self.lines {
            let idx = instance
                .line_idx(&pl.line)
                .ok_or_else(|| Error::Validation(format!("unknown line {:?}", pl.line)))?;
            let headway = Headway::new(pl.headway)?;
            let line = instance.line(idx);
            if !line.profile.contains(headway) {
                return Err(Error::Validation(format!(
                    "headway {headway} is not operable on line {}",
                    line.id
                )));
            }
            let vehicles = pl
                .vehicles
                .unwrap_or_else(|| f64::from(line.vehicles_for(headway)));
            lines.push(ConceptLine {
                line: idx,
                headway,
                vehicles,
            });
        }
        let concept = LineConcept { lines };
        concept.validate(instance)?;
        Ok(concept)
    }

    /// Flows mapped onto `pathset`; `None` when the plan carries none.
    pub fn assignment(&self, instance: &Instance, pathset: &PathSet) -> Result<Option<Assignment>> {
        if self.flows.is_empty() {
            return Ok(None);
        }
        let mut flows = Vec::with_capacity(self.flows.len());
        for f in &self.flows {
            let od = instance
                .od_idx(&f.od)
                .ok_or_else(|| Error::Validation(format!("unknown OD {:?}", f.od)))?;
            let pid = if f.route == ALTERNATIVE_LABEL {
                pathset.od[od.0].alternative
            } else {
                let sig = parse_signature(instance, &f.route).map_err(Error::Validation)?;
                let hws = f
                    .headways
                    .iter()
                    .map(|&h| Headway::new(h))
                    .collect::<Result<Vec<_>>>()?;
                pathset.variant(od, &sig, &hws).ok_or_else(|| {
                    Error::Validation(format!("route {} of OD {} is not in the path set", f.route, f.od))
                })?
            };
            flows.push((pid, f.share));
        }
        Ok(Some(Assignment { flows }))
    }
}

/// Share of each OD's demand per path.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Assignment {
    pub flows: Vec<(PathId, f64)>,
}

impl Assignment {
    pub fn from_solution(solution: &LppSolution) -> Self {
        Assignment {
            flows: solution.flows.clone(),
        }
    }

    pub fn share(&self, path: PathId) -> f64 {
        self.flows.iter().filter(|f| f.0 == path).map(|f| f.1).sum()
    }
}

/// Paths of `od` the concept operates exactly, followed by the alternative.
pub fn available_paths<'a>(
    concept: &LineConcept,
    pathset: &'a PathSet,
    od: OdIdx,
) -> Vec<&'a PassengerPath> {
    let mut out: Vec<&PassengerPath> = pathset
        .od_paths(od)
        .filter(|p| {
            !p.alternative
                && p
                    .usages
                    .iter()
                    .all(|&(l, h)| concept.headway_of(l) == Some(h))
        })
        .collect();
    out.push(pathset.alternative(od));
    out
}

/// Multinomial logit over the available paths; capacity is ignored.
pub fn assign_logit(concept: &LineConcept, pathset: &PathSet, instance: &Instance, theta: f64) -> Assignment {
    let mut flows = Vec::new();
    for od in instance.od_indices() {
        let avail = available_paths(concept, pathset, od);
        let costs: Vec<f64> = avail.iter().map(|p| p.cost).collect();
        for (p, share) in avail.iter().zip(logit_shares(&costs, theta)) {
            if share > 0.0 {
                flows.push((p.id, share));
            }
        }
    }
    Assignment { flows }
}

/// `exp(θ c_i) / Σ_j exp(θ c_j)`, shifted for numerical stability.
pub fn logit_shares(costs: &[f64], theta: f64) -> Vec<f64> {
    let Some(pivot) = costs
        .iter()
        .map(|&c| theta * c)
        .max_by(f64::total_cmp)
    else {
        return Vec::new();
    };
    let weights: Vec<f64> = costs.iter().map(|&c| (theta * c - pivot).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// All of each OD on its cheapest available path (ties: smallest route).
pub fn assign_shortest(concept: &LineConcept, pathset: &PathSet, instance: &Instance) -> Assignment {
    let flows = instance
        .od_indices()
        .map(|od| {
            let best = available_paths(concept, pathset, od)
                .into_iter()
                .min_by(|a, b| {
                    a.cost
                        .total_cmp(&b.cost)
                        .then_with(|| a.signature.cmp(&b.signature))
                        .then_with(|| a.headways().cmp(&b.headways()))
                })
                .expect("the alternative is always available");
            (best.id, 1.0)
        })
        .collect();
    Assignment { flows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentLoad {
    pub line: String,
    pub from: String,
    pub to: String,
    pub travel_time: f64,
    pub flow: f64,
    pub capacity: f64,
    pub utilization: f64,
    pub over_capacity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdOutcome {
    pub od: String,
    pub demand: f64,
    pub captured: f64,
    pub paths_used: usize,
    /// Demand-weighted cost above the cheapest available path.
    pub mean_extra_cost: f64,
    pub max_extra_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub total_demand: f64,
    pub captured_demand: f64,
    pub lost_demand: f64,
    pub captured_pct: f64,
    pub avg_cost_per_served: f64,
    /// Unweighted passenger cost, comparable across λ.
    pub passenger_cost: f64,
    /// Passenger cost divided by the in-vehicle rate per minute; a
    /// reporting convention, not a model quantity.
    pub weighted_travel_minutes: f64,
    pub breakdown: ObjectiveBreakdown,
    pub objective: f64,
    pub loads: Vec<SegmentLoad>,
    pub mean_utilization: f64,
    pub passenger_minute_utilization: f64,
    pub at_capacity_fraction: f64,
    pub over_capacity_segments: usize,
    pub split_od_fraction: f64,
    pub mean_extra_cost: f64,
    pub ods: Vec<OdOutcome>,
}

pub fn metrics(
    concept: &LineConcept,
    assignment: &Assignment,
    instance: &Instance,
    pathset: &PathSet,
) -> MetricsReport {
    let net = &instance.network;
    let costs = &instance.costs;
    let capacity_per_vehicle = instance.vehicle_types[0].capacity;

    let mut seg_flow: BTreeMap<(LineIdx, usize, Direction), f64> = BTreeMap::new();
    let mut per_od: Vec<Vec<(&PassengerPath, f64)>> = vec![Vec::new(); instance.od.len()];
    for &(pid, share) in &assignment.flows {
        let p = pathset.path(pid);
        let w = instance.od(p.od).demand;
        per_od[p.od.0].push((p, share));
        for leg in &p.signature {
            for (s, dir) in leg.segments() {
                *seg_flow.entry((leg.line, s, dir)).or_insert(0.0) += w * share;
            }
        }
    }

    let mut loads = Vec::new();
    for c in &concept.lines {
        let line = instance.line(c.line);
        let capacity = c.vehicles * capacity_per_vehicle;
        for s in 0..line.edges.len() {
            for dir in [Direction::Forward, Direction::Backward] {
                let flow = seg_flow.get(&(c.line, s, dir)).copied().unwrap_or(0.0);
                let (a, b) = match dir {
                    Direction::Forward => (line.stops[s], line.stops[s + 1]),
                    Direction::Backward => (line.stops[s + 1], line.stops[s]),
                };
                let utilization = if capacity > 0.0 { flow / capacity } else { 0.0 };
                loads.push(SegmentLoad {
                    line: line.id.clone(),
                    from: net.stop(a).id.clone(),
                    to: net.stop(b).id.clone(),
                    travel_time: net.edge(line.edges[s]).travel_time,
                    flow,
                    capacity,
                    utilization,
                    over_capacity: flow > capacity + 1e-6,
                });
            }
        }
    }
    let n = loads.len() as f64;
    let mean_utilization = if loads.is_empty() {
        0.0
    } else {
        loads.iter().map(|l| l.utilization.min(1.0)).sum::<f64>() / n
    };
    let pax_minutes: f64 = loads.iter().map(|l| l.flow * l.travel_time).sum();
    let passenger_minute_utilization = if pax_minutes > 0.0 {
        loads
            .iter()
            .map(|l| l.flow * l.travel_time * l.utilization)
            .sum::<f64>()
            / pax_minutes
    } else {
        0.0
    };
    let at_capacity_fraction = if loads.is_empty() {
        0.0
    } else {
        loads.iter().filter(|l| l.utilization >= 1.0 - 1e-6).count() as f64 / n
    };

    let mut ods = Vec::with_capacity(instance.od.len());
    let mut captured_total = 0.0;
    let mut served_cost = 0.0;
    let mut extra_total = 0.0;
    let mut split = 0usize;
    let mut with_demand = 0usize;
    for od in instance.od_indices() {
        let d = instance.od(od);
        let cheapest = available_paths(concept, pathset, od)
            .iter()
            .map(|p| p.cost)
            .fold(f64::INFINITY, f64::min);
        let used = &per_od[od.0];
        let captured: f64 = used
            .iter()
            .filter(|(p, _)| !p.alternative)
            .map(|(_, s)| s * d.demand)
            .sum();
        served_cost += used
            .iter()
            .filter(|(p, _)| !p.alternative)
            .map(|(p, s)| p.cost * s * d.demand)
            .sum::<f64>();
        let paths_used = used.iter().filter(|(_, s)| *s > 1e-9).count();
        let extras: Vec<(f64, f64)> = used
            .iter()
            .map(|(p, s)| ((p.cost - cheapest).max(0.0), *s))
            .collect();
        let share_sum: f64 = extras.iter().map(|e| e.1).sum();
        let mean_extra = if share_sum > 0.0 {
            extras.iter().map(|e| e.0 * e.1).sum::<f64>() / share_sum
        } else {
            0.0
        };
        let max_extra = extras
            .iter()
            .filter(|e| e.1 > 1e-9)
            .map(|e| e.0)
            .fold(0.0, f64::max);
        extra_total += mean_extra * d.demand;
        captured_total += captured;
        if d.demand > 0.0 {
            with_demand += 1;
            if paths_used > 1 {
                split += 1;
            }
        }
        ods.push(OdOutcome {
            od: d.id.clone(),
            demand: d.demand,
            captured,
            paths_used,
            mean_extra_cost: mean_extra,
            max_extra_cost: max_extra,
        });
    }

    let total_demand = instance.total_demand();
    let breakdown = objective_components(instance, pathset, &concept.open_lines(), &assignment.flows);
    MetricsReport {
        total_demand,
        captured_demand: captured_total,
        lost_demand: total_demand - captured_total,
        captured_pct: if total_demand > 0.0 {
            100.0 * captured_total / total_demand
        } else {
            0.0
        },
        avg_cost_per_served: if captured_total > 0.0 {
            served_cost / captured_total
        } else {
            0.0
        },
        passenger_cost: breakdown.passenger_raw,
        weighted_travel_minutes: if costs.ivt_rate > 0.0 {
            breakdown.passenger_raw / (costs.ivt_rate / 60.0)
        } else {
            0.0
        },
        objective: breakdown.total(),
        breakdown,
        over_capacity_segments: loads.iter().filter(|l| l.over_capacity).count(),
        loads,
        mean_utilization,
        passenger_minute_utilization,
        at_capacity_fraction,
        split_od_fraction: if with_demand > 0 {
            split as f64 / with_demand as f64
        } else {
            0.0
        },
        mean_extra_cost: if total_demand > 0.0 {
            extra_total / total_demand
        } else {
            0.0
        },
        ods,
    }
}

/// Rigid-set flows re-judged under service-dependent acceptance: flows on
/// routes costlier than the OD's service threshold are lost.
pub fn post_process_rigid(
    solution: &LppSolution,
    rigid: &PathSet,
    service: &PathSet,
) -> (PathSet, Assignment) {
    let eval_set = rigid.with_alternatives_from(service);
    let mut merged: BTreeMap<PathId, f64> = BTreeMap::new();
    for &(pid, share) in &solution.flows {
        let p = eval_set.path(pid);
        let limit = eval_set.od[p.od.0].threshold;
        let target = if p.alternative || p.cost > limit + crate::paths::COST_EPS {
            eval_set.od[p.od.0].alternative
        } else {
            pid
        };
        *merged.entry(target).or_insert(0.0) += share;
    }
    (
        eval_set,
        Assignment {
            flows: merged.into_iter().collect(),
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkVariant {
    pub name: String,
    pub status: SolveStatus,
    pub proven_optimal: bool,
    pub objective: f64,
    pub concept: LineConcept,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRecord {
    pub budget: f64,
    pub variants: Vec<BenchmarkVariant>,
}

impl BenchmarkRecord {
    pub fn variant(&self, name: &str) -> Option<&BenchmarkVariant> {
        self.variants.iter().find(|v| v.name == name)
    }
}

fn solved(result: &DfraResult, what: &str) -> Result<LppSolution> {
    result
        .solution
        .clone()
        .ok_or_else(|| Error::Solver(format!("{what}: no solution ({:?})", result.termination)))
}

/// Fixed-demand plan, its operating cost as budget, and the
/// service-dependent plans under that budget.
///
/// Variants: `R` (rigid paths, no budget), `R,T` (the rigid plan judged by
/// service thresholds), `T` (service paths) and `T,P` (service paths,
/// passenger objective only).
pub fn rigid_benchmark(
    instance: &Instance,
    options: &DfraOptions,
    backend: &dyn SolverBackend,
) -> Result<BenchmarkRecord> {
    let cgn = build_cgn(instance);
    let paths: PathOptions = options.paths;
    let rigid = generate_paths_with(instance, &cgn, PathMode::Rigid, paths)?;
    let service = generate_paths_with(instance, &cgn, PathMode::Service, paths)?;

    let unbounded = instance.with_budget(None);
    let r_opts = DfraOptions {
        mode: PathMode::Rigid,
        ..*options
    };
    let r_result = run_with_paths(&unbounded, &rigid, &r_opts, backend)?;
    let r = solved(&r_result, "fixed-demand plan")?;
    let budget = r.breakdown.operating_cost();
    let r_concept = LineConcept::from_solution(&r);
    let r_metrics = metrics(&r_concept, &Assignment::from_solution(&r), &unbounded, &rigid);

    let (eval_set, rt_assign) = post_process_rigid(&r, &rigid, &service);
    let rt_metrics = metrics(&r_concept, &rt_assign, instance, &eval_set);

    let budgeted = instance.with_budget(Some(budget));
    let t_opts = DfraOptions {
        mode: PathMode::Service,
        ..*options
    };
    let t_result = run_with_paths(&budgeted, &service, &t_opts, backend)?;
    let t = solved(&t_result, "service-dependent plan")?;
    let t_concept = LineConcept::from_solution(&t);
    let t_metrics = metrics(&t_concept, &Assignment::from_solution(&t), instance, &service);

    let tp_opts = DfraOptions {
        model: ModelOptions {
            objective: ObjectiveKind::PassengerOnly,
            ..t_opts.model
        },
        ..t_opts
    };
    let tp_result = run_with_paths(&budgeted, &service, &tp_opts, backend)?;
    let tp = solved(&tp_result, "passenger-objective plan")?;
    let tp_concept = LineConcept::from_solution(&tp);
    let tp_metrics = metrics(&tp_concept, &Assignment::from_solution(&tp), instance, &service);

    let variant = |name: &str, result: &DfraResult, concept: LineConcept, metrics: MetricsReport| {
        BenchmarkVariant {
            name: name.into(),
            status: result.solution.as_ref().map_or(SolveStatus::Limit, |s| s.status),
            proven_optimal: result.proven_optimal,
            objective: metrics.objective,
            concept,
            metrics,
        }
    };
    Ok(BenchmarkRecord {
        budget,
        variants: vec![
            variant("R", &r_result, r_concept.clone(), r_metrics),
            variant("R,T", &r_result, r_concept, rt_metrics),
            variant("T", &t_result, t_concept, t_metrics),
            variant("T,P", &tp_result, tp_concept, tp_metrics),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_closed_form() {
        let s = logit_shares(&[10.0, 20.0], -0.2);
        let a = (-2.0f64).exp();
        let b = (-4.0f64).exp();
        assert!((s[0] - a / (a + b)).abs() < 1e-12);
        assert!((s[0] - 0.880_797_077_977_882_3).abs() < 1e-9);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logit_symmetric_and_degenerate() {
        assert_eq!(logit_shares(&[7.0, 7.0], -0.2), vec![0.5, 0.5]);
        assert_eq!(logit_shares(&[3.0], -0.2), vec![1.0]);
        assert!(logit_shares(&[], -0.2).is_empty());
    }

    #[test]
    fn logit_survives_large_costs() {
        let s = logit_shares(&[10_000.0, 10_010.0], -0.2);
        assert!(s.iter().all(|x| x.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
