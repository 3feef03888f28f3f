//! Random instances and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use lineplan::model::{CostParameters, Instance, LineIdx, OdIdx};
use lineplan::paths::PathSet;
use lineplan::samples::InstanceBuilder;
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HEADWAY_POOL: [f64; 8] = [3.0, 5.0, 6.0, 10.0, 12.0, 15.0, 20.0, 30.0];

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub max_lines: usize,
    pub max_headways: usize,
    pub max_ods: usize,
    /// Edges per line.
    pub max_line_edges: usize,
    /// Probability of a finite operating budget.
    pub budget_probability: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_lines: 3,
            max_headways: 4,
            max_ods: 5,
            max_line_edges: 3,
            budget_probability: 0.25,
        }
    }
}

pub fn random_costs(rng: &mut impl Rng) -> CostParameters {
    CostParameters {
        ivt_rate: rng.gen_range(30..=150) as f64,
        perceived_wait_rate: rng.gen_range(60..=250) as f64,
        hidden_wait_rate: rng.gen_range(30..=150) as f64,
        perceived_wait_cap: rng.gen_range(3..=10) as f64,
        transfer_wait_rate: rng.gen_range(0..=200) as f64,
        transfer_penalty: rng.gen_range(0..=30) as f64,
        vehicle_cost: rng.gen_range(100..=1500) as f64,
        line_fixed_cost: rng.gen_range(0..=800) as f64,
        vehicle_capacity: rng.gen_range(20..=80) as f64,
        fare: rng.gen_range(0..=40) as f64,
        lambda: 1.0,
        budget: None,
    }
}

/// A small tree-like network with up to three lines over it.
pub fn random_instance(seed: u64, opts: &GenOptions) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=6usize);
    let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut adj: Vec<Vec<(usize, String)>> = vec![Vec::new(); n];
    let mut b = InstanceBuilder::new().stops(names.iter().map(String::as_str));
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((j, i));
    }
    if rng.gen_bool(0.5) {
        let (a, c) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != c && !edges.iter().any(|&(x, y)| (x, y) == (a, c) || (x, y) == (c, a)) {
            edges.push((a, c));
        }
    }
    for (k, &(a, c)) in edges.iter().enumerate() {
        let id = format!("e{k}");
        let t = rng.gen_range(2..=12) as f64;
        b = b.edge(&id, &names[a], &names[c], t);
        adj[a].push((c, id.clone()));
        adj[c].push((a, id));
    }

    let n_lines = rng.gen_range(1..=opts.max_lines);
    let mut served = vec![false; n];
    for l in 0..n_lines {
        let want = rng.gen_range(1..=opts.max_line_edges);
        let mut at = rng.gen_range(0..n);
        let mut seen = vec![at];
        let mut route = Vec::new();
        while route.len() < want {
            let options: Vec<&(usize, String)> =
                adj[at].iter().filter(|(s, _)| !seen.contains(s)).collect();
            let Some(&(next_stop, e)) = options.choose(&mut rng) else {
                break;
            };
            route.push(e.clone());
            seen.push(*next_stop);
            at = *next_stop;
        }
        if route.is_empty() {
            let (next_stop, e) = adj[at][0].clone();
            route.push(e);
            seen.push(next_stop);
        }
        for s in seen {
            served[s] = true;
        }
        let k = rng.gen_range(1..=opts.max_headways);
        let mut hw: Vec<f64> = HEADWAY_POOL.choose_multiple(&mut rng, k).copied().collect();
        hw.sort_by(f64::total_cmp);
        let route: Vec<&str> = route.iter().map(String::as_str).collect();
        b = b.line_with(&format!("L{l}"), &route, &hw, 0.0);
    }

    let n_od = rng.gen_range(1..=opts.max_ods);
    let mut pairs = Vec::new();
    let on_lines: Vec<usize> = (0..n).filter(|&s| served[s]).collect();
    while pairs.len() < n_od {
        // mostly between served stops, so that routes exist
        let (o, d) = if rng.gen_bool(0.8) {
            (*on_lines.choose(&mut rng).unwrap(), *on_lines.choose(&mut rng).unwrap())
        } else {
            (rng.gen_range(0..n), rng.gen_range(0..n))
        };
        if o != d && !pairs.contains(&(o, d)) {
            pairs.push((o, d));
        }
    }
    for (o, d) in pairs {
        b = b.od(&names[o], &names[d], rng.gen_range(5..=120) as f64);
    }

    let mut costs = random_costs(&mut rng);
    if rng.gen_bool(opts.budget_probability) {
        let scale = rng.gen_range(1..=6) as f64;
        costs.budget = Some(scale * costs.vehicle_cost + costs.line_fixed_cost);
    }
    b.costs(costs).build().expect("generated instance is valid")
}

fn access(c: &CostParameters, h: f64) -> f64 {
    let wait = h / 2.0;
    wait.min(c.perceived_wait_cap) * c.perceived_wait_rate / 60.0
        + (wait - c.perceived_wait_cap).max(0.0) * c.hidden_wait_rate / 60.0
}

fn transfer(c: &CostParameters, h: f64) -> f64 {
    c.transfer_penalty + h / 2.0 * c.transfer_wait_rate / 60.0
}

/// All-pairs shortest travel times by Floyd–Warshall.
pub fn shortest_times(instance: &Instance) -> Vec<Vec<f64>> {
    let n = instance.network.stops.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in &instance.network.edges {
        let (a, b) = (e.from.0, e.to.0);
        d[a][b] = d[a][b].min(e.travel_time);
        d[b][a] = d[b][a].min(e.travel_time);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Operable headways of a line: the smallest headway for each distinct
/// fleet size.
pub fn operable_headways(instance: &Instance, line: LineIdx) -> Vec<(f64, u32)> {
    let l = instance.line(line);
    let mut hs: Vec<f64> = l.candidate_headways.iter().map(|h| h.minutes()).collect();
    hs.sort_by(f64::total_cmp);
    let t: f64 = l
        .edges
        .iter()
        .map(|&e| instance.network.edge(e).travel_time)
        .sum::<f64>()
        * 2.0
        + l.turnaround;
    let mut out: Vec<(f64, u32)> = Vec::new();
    for h in hs {
        let v = ((t / h) - 1e-9).ceil().max(1.0) as u32;
        if out.last().is_some_and(|&(_, pv)| pv == v) {
            continue;
        }
        out.push((h, v));
    }
    out
}

pub fn oracle_threshold(instance: &Instance, od: OdIdx) -> f64 {
    if let Some(t) = instance.threshold_override {
        return t;
    }
    let c = &instance.costs;
    let d = instance.od(od);
    let t = shortest_times(instance)[d.origin.0][d.destination.0];
    let t = if t.is_finite() { t } else { 0.0 };
    let h_max = instance
        .line_indices()
        .flat_map(|l| operable_headways(instance, l))
        .map(|e| e.0)
        .fold(0.0, f64::max);
    let big_c = t * c.ivt_rate / 60.0;
    (3.0 * big_c).min(1.25 * big_c + access(c, h_max) + transfer(c, h_max))
}

/// (line, board position, alight position) per leg.
pub type OracleLeg = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub od: usize,
    pub legs: Vec<OracleLeg>,
    pub headways: Vec<f64>,
    pub cost: f64,
}

fn ride_minutes(instance: &Instance, line: usize, from: usize, to: usize) -> f64 {
    let l = &instance.lines[line];
    let (a, b) = (from.min(to), from.max(to));
    l.edges[a..b]
        .iter()
        .map(|&e| instance.network.edge(e).travel_time)
        .sum()
}

fn position(instance: &Instance, line: usize, stop: usize) -> Option<usize> {
    instance.lines[line].stops.iter().position(|s| s.0 == stop)
}

/// Every direct and one-transfer route of `od` at every operable headway
/// combination, before any filtering.
pub fn enumerate_routes(instance: &Instance, od: OdIdx) -> Vec<OraclePath> {
    let c = &instance.costs;
    let d = instance.od(od);
    let (o, t) = (d.origin.0, d.destination.0);
    let ivt = |line, a, b| ride_minutes(instance, line, a, b) * c.ivt_rate / 60.0;
    let mut out = Vec::new();
    let nl = instance.lines.len();
    for l in 0..nl {
        let (Some(a), Some(b)) = (position(instance, l, o), position(instance, l, t)) else {
            continue;
        };
        for (h, _) in operable_headways(instance, LineIdx(l)) {
            out.push(OraclePath {
                od: od.0,
                legs: vec![(l, a, b)],
                headways: vec![h],
                cost: access(c, h) + ivt(l, a, b),
            });
        }
    }
    for l1 in 0..nl {
        let Some(a1) = position(instance, l1, o) else { continue };
        for l2 in 0..nl {
            if l2 == l1 {
                continue;
            }
            let Some(b2) = position(instance, l2, t) else { continue };
            for s in 0..instance.network.stops.len() {
                if s == o || s == t {
                    continue;
                }
                let (Some(b1), Some(a2)) = (position(instance, l1, s), position(instance, l2, s)) else {
                    continue;
                };
                for (h1, _) in operable_headways(instance, LineIdx(l1)) {
                    for (h2, _) in operable_headways(instance, LineIdx(l2)) {
                        out.push(OraclePath {
                            od: od.0,
                            legs: vec![(l1, a1, b1), (l2, a2, b2)],
                            headways: vec![h1, h2],
                            cost: access(c, h1) + ivt(l1, a1, b1) + transfer(c, h2) + ivt(l2, a2, b2),
                        });
                    }
                }
            }
        }
    }
    out
}

fn oracle_dominates(p: &OraclePath, q: &OraclePath) -> bool {
    p.cost <= q.cost + 1e-9
        && p.legs.iter().zip(&p.headways).all(|(leg, h)| {
            q.legs
                .iter()
                .zip(&q.headways)
                .any(|(ql, qh)| ql.0 == leg.0 && qh == h)
        })
}

/// Service-dependent path set by enumeration, threshold and dominance.
pub fn oracle_service_paths(instance: &Instance) -> Vec<OraclePath> {
    let mut out = Vec::new();
    for od in instance.od_indices() {
        let limit = oracle_threshold(instance, od);
        let mut cands: Vec<OraclePath> = enumerate_routes(instance, od)
            .into_iter()
            .filter(|p| p.cost <= limit + 1e-9)
            .collect();
        // ties within rounding noise fall through to the structural order
        let bucket = |c: f64| (c * 1e6).round() as i64;
        cands.sort_by(|a, b| {
            bucket(a.cost)
                .cmp(&bucket(b.cost))
                .then(a.legs.len().cmp(&b.legs.len()))
                .then(a.legs.cmp(&b.legs))
                .then(a.headways.partial_cmp(&b.headways).unwrap())
        });
        for (i, p) in cands.iter().enumerate() {
            if !cands[..i].iter().any(|q| oracle_dominates(q, p)) {
                out.push(p.clone());
            }
        }
    }
    out
}

/// Non-alternative paths of a produced set in oracle form.
pub fn as_oracle(pathset: &PathSet) -> Vec<OraclePath> {
    pathset
        .paths()
        .iter()
        .filter(|p| !p.alternative)
        .map(|p| OraclePath {
            od: p.od.0,
            legs: p.signature.iter().map(|l| (l.line.0, l.board, l.alight)).collect(),
            headways: p.headways().iter().map(|h| h.minutes()).collect(),
            cost: p.cost,
        })
        .collect()
}

/// Sorted for set comparison; costs compared separately with a tolerance.
pub fn canonical(mut v: Vec<OraclePath>) -> Vec<OraclePath> {
    v.sort_by(|a, b| {
        (a.od, &a.legs)
            .cmp(&(b.od, &b.legs))
            .then(a.headways.partial_cmp(&b.headways).unwrap())
    });
    v
}

pub fn same_paths(a: Vec<OraclePath>, b: Vec<OraclePath>) -> Result<(), String> {
    let (a, b) = (canonical(a), canonical(b));
    if a.len() != b.len() {
        return Err(format!("{} paths vs {} paths:\n{a:?}\n{b:?}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(&b) {
        if x.od != y.od || x.legs != y.legs || x.headways != y.headways {
            return Err(format!("path mismatch {x:?} vs {y:?}"));
        }
        if (x.cost - y.cost).abs() > 1e-9 * x.cost.abs().max(1.0) {
            return Err(format!("cost mismatch {x:?} vs {y:?}"));
        }
    }
    Ok(())
}

/// Which of the full model's objectives the oracle minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleObjective {
    Full,
    Passenger,
}

/// Optimum of the line planning model by enumerating every line concept
/// (each line closed or at one operable headway) and solving the remaining
/// flow/fleet problem exactly. `None` when no concept is feasible.
pub fn oracle_optimum(instance: &Instance, pathset: &PathSet, objective: OracleObjective) -> Option<f64> {
    let lines: Vec<Vec<(f64, u32)>> = instance
        .line_indices()
        .map(|l| operable_headways(instance, l))
        .collect();
    let mut choice = vec![0usize; lines.len()];
    let mut best: Option<f64> = None;
    loop {
        let concept: Vec<Option<(f64, u32)>> = choice
            .iter()
            .zip(&lines)
            .map(|(&c, hs)| if c == 0 { None } else { Some(hs[c - 1]) })
            .collect();
        if let Some(v) = concept_optimum(instance, pathset, &concept, objective) {
            if best.is_none_or(|b| v < b) {
                best = Some(v);
            }
        }
        let mut k = 0;
        loop {
            if k == choice.len() {
                return best;
            }
            choice[k] += 1;
            if choice[k] <= lines[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

fn concept_optimum(
    instance: &Instance,
    pathset: &PathSet,
    concept: &[Option<(f64, u32)>],
    objective: OracleObjective,
) -> Option<f64> {
    let c = &instance.costs;
    let full = objective == OracleObjective::Full;
    let opened = concept.iter().filter(|x| x.is_some()).count() as f64;
    let mut constant = if full { opened * c.line_fixed_cost } else { 0.0 };
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let total_demand: f64 = instance.od.iter().map(|d| d.demand).sum();
    let extra = (total_demand / c.vehicle_capacity).ceil() as i32 + 1;
    let mut z = HashMap::new();
    for (l, x) in concept.iter().enumerate() {
        if let Some((_, v)) = x {
            let cost = if full { c.vehicle_cost } else { 0.0 };
            z.insert(l, pb.add_integer_var(cost, (*v as i32, *v as i32 + extra)));
        }
    }
    let mut load: BTreeMap<(usize, usize, bool), Vec<(microlp::Variable, f64)>> = BTreeMap::new();
    for od in instance.od_indices() {
        let w = instance.od(od).demand;
        let info = &pathset.od[od.0];
        let mut row = Vec::new();
        for p in pathset.od_paths(od) {
            let ok = if p.alternative {
                info.alternative_in_model
            } else {
                p.usages
                    .iter()
                    .all(|(l, h)| concept[l.0].is_some_and(|(ch, _)| ch == h.minutes()))
            };
            if !ok {
                continue;
            }
            let mut obj = c.lambda * p.cost * w;
            if full && !p.alternative {
                obj -= c.fare * w;
            }
            let x = pb.add_var(obj, (0.0, 1.0));
            row.push((x, 1.0));
            if w > 0.0 {
                for leg in &p.signature {
                    let (lo, hi) = (leg.board.min(leg.alight), leg.board.max(leg.alight));
                    for s in lo..hi {
                        load.entry((leg.line.0, s, leg.alight > leg.board))
                            .or_default()
                            .push((x, w));
                    }
                }
            }
        }
        if row.is_empty() {
            return None;
        }
        pb.add_constraint(row.as_slice(), ComparisonOp::Eq, 1.0);
    }
    for ((l, _, _), mut terms) in load {
        terms.push((z[&l], -c.vehicle_capacity));
        pb.add_constraint(terms.as_slice(), ComparisonOp::Le, 0.0);
    }
    if let Some(budget) = c.budget {
        let terms: Vec<_> = z.values().map(|&v| (v, c.vehicle_cost)).collect();
        let rhs = budget - opened * c.line_fixed_cost;
        if terms.is_empty() {
            if rhs < -1e-9 {
                return None;
            }
        } else {
            pb.add_constraint(terms.as_slice(), ComparisonOp::Le, rhs);
        }
    }
    match pb.solve() {
        Ok(outcome) => {
            let sol = outcome.into_solution().ok()?;
            constant += sol.objective();
            Some(constant)
        }
        Err(microlp::Error::Infeasible) => None,
        Err(e) => panic!("oracle solve failed: {e:?}"),
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
