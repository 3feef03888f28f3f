//! Candidate passenger paths per OD pair.
//!
//! Service-dependent sets contain every frequency-specific path whose cost
//! stays within the OD's acceptance threshold, thinned by dominance. Rigid
//! sets admit geographic routes by travel time alone and expand each to
//! every headway combination. Both carry one alternative-mode path per OD.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::Serialize;

use crate::cgn::{ArcId, ArcKind, ChangeAndGoNetwork, Direction, NodeKind};
use crate::error::{Error, Result};
use crate::model::{Headway, Instance, LineIdx, OdIdx, StopIdx};

/// Tolerance for cost comparisons (thresholds and dominance).
pub const COST_EPS: f64 = 1e-9;

pub const DEFAULT_PATH_CAP: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PathId(pub usize);

/// One ride on a line, between two positions of its stop sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Leg {
    pub line: LineIdx,
    pub board: usize,
    pub alight: usize,
}

impl Leg {
    /// Line segments ridden, as (index of the segment's lower stop position,
    /// direction). Segment `i` joins positions `i` and `i + 1`.
    pub fn segments(&self) -> impl Iterator<Item = (usize, Direction)> {
        let dir = self.direction();
        let (lo, hi) = (self.board.min(self.alight), self.board.max(self.alight));
        (lo..hi).map(move |s| (s, dir))
    }

    pub fn direction(&self) -> Direction {
        if self.alight > self.board {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// The geographic route of a path, independent of headways.
pub type Signature = Vec<Leg>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassengerPath {
    pub id: PathId,
    pub od: OdIdx,
    pub arcs: Vec<ArcId>,
    pub cost: f64,
    /// (line, headway) per leg, in travel order.
    pub usages: Vec<(LineIdx, Headway)>,
    pub signature: Signature,
    pub alternative: bool,
}

impl PassengerPath {
    pub fn headways(&self) -> Vec<Headway> {
        self.usages.iter().map(|u| u.1).collect()
    }

    pub fn lines(&self) -> impl Iterator<Item = LineIdx> + '_ {
        self.usages.iter().map(|u| u.0)
    }

    pub fn headway_on(&self, line: LineIdx) -> Option<Headway> {
        self.usages.iter().find(|u| u.0 == line).map(|u| u.1)
    }

    pub fn transfers(&self) -> usize {
        self.usages.len().saturating_sub(1)
    }

    fn order_key(&self) -> (usize, &Signature, Vec<Headway>) {
        (self.usages.len(), &self.signature, self.headways())
    }
}

/// `p1` dominates `p2` when it is no more expensive, uses a subset of its
/// lines, and matches its headway on every shared line.
pub fn dominates(p1: &PassengerPath, p2: &PassengerPath) -> bool {
    p1.cost <= p2.cost + COST_EPS
        && p1
            .usages
            .iter()
            .all(|&(l, h)| p2.headway_on(l) == Some(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathMode {
    Service,
    Rigid,
}

impl fmt::Display for PathMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathMode::Service => f.write_str("service"),
            PathMode::Rigid => f.write_str("rigid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdPaths {
    pub threshold: f64,
    /// Shortest PTN travel time; `None` when the OD is disconnected.
    pub t_min: Option<f64>,
    pub alternative: PathId,
    /// Rigid sets offer the alternative mode only to unconnected ODs.
    pub alternative_in_model: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PathOptions {
    pub cap: usize,
    /// Extra in-vehicle minutes over the shortest route admitted by rigid sets.
    pub rigid_tolerance: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            cap: DEFAULT_PATH_CAP,
            rigid_tolerance: 15.0,
        }
    }
}

type VariantKey = (OdIdx, Signature, Vec<Headway>);

#[derive(Debug, Clone)]
pub struct PathSet {
    pub mode: PathMode,
    paths: Vec<PassengerPath>,
    position: HashMap<PathId, usize>,
    by_od: Vec<Vec<PathId>>,
    pub od: Vec<OdPaths>,
    by_arc: HashMap<ArcId, Vec<PathId>>,
    by_line_headway: HashMap<(LineIdx, Headway), Vec<PathId>>,
    variants: HashMap<VariantKey, PathId>,
}

impl PathSet {
    fn from_parts(mode: PathMode, paths: Vec<PassengerPath>, od: Vec<OdPaths>) -> Self {
        let mut position = HashMap::with_capacity(paths.len());
        let mut by_od = vec![Vec::new(); od.len()];
        let mut by_arc: HashMap<ArcId, Vec<PathId>> = HashMap::new();
        let mut by_line_headway: HashMap<(LineIdx, Headway), Vec<PathId>> = HashMap::new();
        let mut variants = HashMap::new();
        for (i, p) in paths.iter().enumerate() {
            position.insert(p.id, i);
            by_od[p.od.0].push(p.id);
            if p.alternative {
                continue;
            }
            for &a in &p.arcs {
                by_arc.entry(a).or_default().push(p.id);
            }
            for &u in &p.usages {
                by_line_headway.entry(u).or_default().push(p.id);
            }
            variants.insert((p.od, p.signature.clone(), p.headways()), p.id);
        }
        PathSet {
            mode,
            paths,
            position,
            by_od,
            od,
            by_arc,
            by_line_headway,
            variants,
        }
    }

    pub fn paths(&self) -> &[PassengerPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn get(&self, id: PathId) -> Option<&PassengerPath> {
        self.position.get(&id).map(|&i| &self.paths[i])
    }

    pub fn path(&self, id: PathId) -> &PassengerPath {
        self.get(id).expect("path id belongs to this set")
    }

    pub fn od_paths(&self, od: OdIdx) -> impl Iterator<Item = &PassengerPath> + '_ {
        self.by_od[od.0].iter().map(|&id| self.path(id))
    }

    /// Paths that may carry flow in an optimization model for `od`.
    pub fn model_paths(&self, od: OdIdx) -> impl Iterator<Item = &PassengerPath> + '_ {
        let alt_ok = self.od[od.0].alternative_in_model;
        self.od_paths(od).filter(move |p| !p.alternative || alt_ok)
    }

    pub fn alternative(&self, od: OdIdx) -> &PassengerPath {
        self.path(self.od[od.0].alternative)
    }

    pub fn paths_through(&self, arc: ArcId) -> &[PathId] {
        self.by_arc.get(&arc).map_or(&[], Vec::as_slice)
    }

    pub fn paths_using(&self, line: LineIdx, headway: Headway) -> &[PathId] {
        self.by_line_headway
            .get(&(line, headway))
            .map_or(&[], Vec::as_slice)
    }

    /// The path of `od` following `signature` at `headways`, if retained.
    pub fn variant(&self, od: OdIdx, signature: &Signature, headways: &[Headway]) -> Option<PathId> {
        self.variants
            .get(&(od, signature.clone(), headways.to_vec()))
            .copied()
    }

    pub fn signatures(&self, od: OdIdx) -> BTreeSet<&Signature> {
        self.od_paths(od)
            .filter(|p| !p.alternative)
            .map(|p| &p.signature)
            .collect()
    }

    pub fn signature_count(&self) -> usize {
        (0..self.od.len())
            .map(|d| self.signatures(OdIdx(d)).len())
            .sum()
    }

    pub fn ptn_path_count(&self) -> usize {
        self.paths.iter().filter(|p| !p.alternative).count()
    }

    /// Paths whose every (line, headway) usage passes `keep`, plus all
    /// alternative-mode paths. Path ids are preserved.
    pub fn restrict(&self, keep: impl Fn(LineIdx, Headway) -> bool) -> PathSet {
        let paths = self
            .paths
            .iter()
            .filter(|p| p.alternative || p.usages.iter().all(|&(l, h)| keep(l, h)))
            .cloned()
            .collect();
        PathSet::from_parts(self.mode, paths, self.od.clone())
    }

    /// Copy whose alternative paths and thresholds are taken from `other`
    /// (same instance, same ODs); alternatives become available to every OD.
    pub fn with_alternatives_from(&self, other: &PathSet) -> PathSet {
        let mut paths = self.paths.clone();
        let mut od = self.od.clone();
        for (d, info) in od.iter_mut().enumerate() {
            let src = &other.od[d];
            let pos = self.position[&info.alternative];
            paths[pos].cost = other.path(src.alternative).cost;
            info.threshold = src.threshold;
            info.alternative_in_model = true;
        }
        PathSet::from_parts(other.mode, paths, od)
    }

    /// Semicolon-separated listing: `od;signature;headways;cost`.
    pub fn write_csv(&self, instance: &Instance, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<path export>", e);
        writeln!(w, "od;signature;headways;cost").map_err(io)?;
        for p in &self.paths {
            let hw: Vec<String> = p.usages.iter().map(|u| u.1.to_string()).collect();
            writeln!(
                w,
                "{};{};{};{}",
                instance.od(p.od).id,
                format_signature(instance, &p.signature, p.alternative),
                hw.join(","),
                p.cost
            )
            .map_err(io)?;
        }
        Ok(())
    }

    /// Reads a listing produced by [`PathSet::write_csv`], rebuilding arcs
    /// and costs from the network.
    pub fn read_csv(
        instance: &Instance,
        cgn: &ChangeAndGoNetwork,
        mode: PathMode,
        reader: impl BufRead,
    ) -> Result<PathSet> {
        const FILE: &str = "paths.csv";
        let perr = |line: usize, message: String| Error::Parse {
            file: FILE.into(),
            line: line as u64,
            message,
        };
        let od_ids: HashMap<&str, OdIdx> = instance
            .od
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), OdIdx(i)))
            .collect();
        let t_min = shortest_ptn_times(instance);
        let mut od_info: Vec<Option<OdPaths>> = vec![None; instance.od.len()];
        let mut paths = Vec::new();
        for (n, line) in reader.lines().enumerate().skip(1) {
            let line = line.map_err(|e| Error::io(FILE, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(';').collect();
            if cols.len() != 4 {
                return Err(perr(n + 1, format!("expected 4 columns, found {}", cols.len())));
            }
            let od = *od_ids
                .get(cols[0])
                .ok_or_else(|| perr(n + 1, format!("unknown OD {:?}", cols[0])))?;
            let cost: f64 = cols[3]
                .parse()
                .map_err(|_| perr(n + 1, format!("bad cost {:?}", cols[3])))?;
            let id = PathId(paths.len());
            if cols[1] == ALTERNATIVE_LABEL {
                let alt = alternative_path(cgn, id, od, cost);
                od_info[od.0] = Some(OdPaths {
                    threshold: cost,
                    t_min: t_min[od.0],
                    alternative: id,
                    // settled below once all routes are read
                    alternative_in_model: true,
                });
                paths.push(alt);
                continue;
            }
            let signature = parse_signature(instance, cols[1])
                .map_err(|m| perr(n + 1, m))?;
            let headways = cols[2]
                .split(',')
                .map(|h| {
                    h.parse::<f64>()
                        .ok()
                        .and_then(|h| Headway::new(h).ok())
                        .ok_or_else(|| perr(n + 1, format!("bad headway {h:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let path = build_variant(instance, cgn, id, od, &signature, &headways)
                .ok_or_else(|| perr(n + 1, "path does not exist in the network".into()))?;
            paths.push(path);
        }
        let mut routes = vec![0usize; instance.od.len()];
        for p in paths.iter().filter(|p| !p.alternative) {
            routes[p.od.0] += 1;
        }
        let od_info = od_info
            .into_iter()
            .enumerate()
            .map(|(d, info)| {
                let mut info = info.ok_or_else(|| {
                    Error::Validation(format!("path file lacks the alternative for OD {}", instance.od[d].id))
                })?;
                info.alternative_in_model = mode == PathMode::Service || routes[d] == 0;
                Ok(info)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PathSet::from_parts(mode, paths, od_info))
    }
}

pub const ALTERNATIVE_LABEL: &str = "alternative";

/// `line:board>alight` legs joined by `|`.
pub fn format_signature(instance: &Instance, sig: &Signature, alternative: bool) -> String {
    if alternative {
        return ALTERNATIVE_LABEL.to_string();
    }
    sig.iter()
        .map(|leg| format!("{}:{}>{}", instance.line(leg.line).id, leg.board, leg.alight))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn parse_signature(instance: &Instance, text: &str) -> std::result::Result<Signature, String> {
    text.split('|')
        .map(|leg| {
            let (line, span) = leg
                .rsplit_once(':')
                .ok_or_else(|| format!("malformed leg {leg:?}"))?;
            let (b, a) = span
                .split_once('>')
                .ok_or_else(|| format!("malformed leg {leg:?}"))?;
            let line = instance
                .line_idx(line)
                .ok_or_else(|| format!("unknown line {line:?}"))?;
            let board = b.parse().map_err(|_| format!("bad position {b:?}"))?;
            let alight = a.parse().map_err(|_| format!("bad position {a:?}"))?;
            Ok(Leg {
                line,
                board,
                alight,
            })
        })
        .collect()
}

/// Shortest PTN travel time for every OD (edge times only).
pub fn shortest_ptn_times(instance: &Instance) -> Vec<Option<f64>> {
    let net = &instance.network;
    let mut g: UnGraph<(), f64> = UnGraph::with_capacity(net.stops.len(), net.edges.len());
    for _ in &net.stops {
        g.add_node(());
    }
    for e in &net.edges {
        g.add_edge(NodeIndex::new(e.from.0), NodeIndex::new(e.to.0), e.travel_time);
    }
    let mut from_origin: HashMap<StopIdx, HashMap<NodeIndex, f64>> = HashMap::new();
    instance
        .od
        .iter()
        .map(|d| {
            let dist = from_origin
                .entry(d.origin)
                .or_insert_with(|| dijkstra(&g, NodeIndex::new(d.origin.0), None, |e| *e.weight()));
            dist.get(&NodeIndex::new(d.destination.0)).copied()
        })
        .collect()
}

pub fn shortest_ptn_time(instance: &Instance, od: OdIdx) -> Option<f64> {
    shortest_ptn_times(instance)[od.0]
}

/// Acceptance threshold `min(3C, 1.25C + τ)`, where `C` prices the shortest
/// travel time in-vehicle and `τ` is one initial wait plus one transfer at
/// the least frequent service. Disconnected ODs use `C = 0`.
pub fn threshold(instance: &Instance, t_min: Option<f64>) -> f64 {
    if let Some(t) = instance.threshold_override {
        return t;
    }
    let costs = &instance.costs;
    let c_min = costs.in_vehicle_cost(t_min.unwrap_or(0.0));
    let h_max = instance.max_headway();
    let tau = costs.access_cost(h_max) + costs.transfer_cost(h_max);
    (3.0 * c_min).min(1.25 * c_min + tau)
}

/// Budget of cost a rigid route may spend: the shortest in-vehicle time plus
/// the tolerance, one initial wait and one transfer at the best service.
pub fn rigid_threshold(instance: &Instance, t_min: Option<f64>, tolerance: f64) -> f64 {
    let costs = &instance.costs;
    let h_min = instance.min_headway();
    costs.in_vehicle_cost(t_min.unwrap_or(0.0) + tolerance)
        + costs.access_cost(h_min)
        + costs.transfer_cost(h_min)
}

/// Cost of riding `signature` at `headways`, summed in travel order exactly
/// as the arcs of the corresponding network path are.
pub fn signature_cost(instance: &Instance, signature: &Signature, headways: &[Headway]) -> f64 {
    let costs = &instance.costs;
    let net = &instance.network;
    let mut total = 0.0;
    for (i, (leg, &h)) in signature.iter().zip(headways).enumerate() {
        total += if i == 0 {
            costs.access_cost(h)
        } else {
            costs.transfer_cost(h)
        };
        let line = instance.line(leg.line);
        let segs: Vec<usize> = leg.segments().map(|s| s.0).collect();
        let ordered: Box<dyn Iterator<Item = &usize>> = match leg.direction() {
            Direction::Forward => Box::new(segs.iter()),
            Direction::Backward => Box::new(segs.iter().rev()),
        };
        for &s in ordered {
            total += costs.in_vehicle_cost(net.edge(line.edges[s]).travel_time);
        }
    }
    total
}

fn alternative_path(cgn: &ChangeAndGoNetwork, id: PathId, od: OdIdx, cost: f64) -> PassengerPath {
    PassengerPath {
        id,
        od,
        arcs: vec![cgn.alternative_arc(od)],
        cost,
        usages: Vec::new(),
        signature: Vec::new(),
        alternative: true,
    }
}

/// Arc sequence and cost of `signature` ridden at `headways`, or `None`
/// when the combination is not part of the network.
pub fn build_variant(
    instance: &Instance,
    cgn: &ChangeAndGoNetwork,
    id: PathId,
    od: OdIdx,
    signature: &Signature,
    headways: &[Headway],
) -> Option<PassengerPath> {
    if signature.is_empty() || signature.len() > 2 || signature.len() != headways.len() {
        return None;
    }
    let d = instance.od(od);
    let mut arcs = Vec::new();
    let mut prev: Option<(LineIdx, StopIdx, Headway)> = None;
    for (leg, &h) in signature.iter().zip(headways) {
        let line = instance.lines.get(leg.line.0)?;
        if leg.board == leg.alight || leg.board >= line.stops.len() || leg.alight >= line.stops.len()
        {
            return None;
        }
        let board_stop = line.stops[leg.board];
        let ls = cgn.line_stop_node(leg.line, board_stop)?;
        match prev {
            None => {
                if board_stop != d.origin {
                    return None;
                }
                arcs.push(cgn.frequency_arc(cgn.access_node(d.origin)?, ls, h)?);
            }
            Some((pl, ps, ph)) => {
                if ps != board_stop || pl == leg.line {
                    return None;
                }
                let tr = cgn.transfer_node(ps)?;
                arcs.push(cgn.frequency_arc(cgn.line_stop_node(pl, ps)?, tr, ph)?);
                arcs.push(cgn.frequency_arc(tr, ls, h)?);
            }
        }
        let dir = leg.direction();
        let mut pos = leg.board;
        while pos != leg.alight {
            arcs.push(cgn.ivt_arc(leg.line, pos, dir));
            pos = match dir {
                Direction::Forward => pos + 1,
                Direction::Backward => pos - 1,
            };
        }
        prev = Some((leg.line, line.stops[leg.alight], h));
    }
    let (last_line, last_stop, last_h) = prev?;
    if last_stop != d.destination {
        return None;
    }
    arcs.push(cgn.frequency_arc(
        cgn.line_stop_node(last_line, last_stop)?,
        cgn.egress_node(d.destination)?,
        last_h,
    )?);
    let cost = arcs.iter().map(|&a| cgn.arc(a).cost).sum();
    Some(PassengerPath {
        id,
        od,
        arcs,
        cost,
        usages: signature.iter().map(|l| l.line).zip(headways.iter().copied()).collect(),
        signature: signature.clone(),
        alternative: false,
    })
}

struct Search<'a> {
    instance: &'a Instance,
    cgn: &'a ChangeAndGoNetwork,
    od: OdIdx,
    target: crate::cgn::NodeId,
    limit: f64,
    cap: usize,
    visited: Vec<bool>,
    arcs: Vec<ArcId>,
    found: Vec<(Vec<ArcId>, f64)>,
}

#[derive(Clone, Copy)]
struct LegState {
    headway: Headway,
    rides: usize,
}

impl Search<'_> {
    fn run(&mut self) -> Result<()> {
        let d = self.instance.od(self.od);
        let Some(start) = self.cgn.access_node(d.origin) else {
            return Ok(());
        };
        self.visited[start.0] = true;
        for &a in self.cgn.out_arcs(start) {
            let arc = self.cgn.arc(a);
            if arc.kind != ArcKind::Access {
                continue;
            }
            let leg = LegState {
                headway: arc.headway.expect("access arcs carry a headway"),
                rides: 0,
            };
            self.step(a, arc.cost, leg, 0)?;
        }
        Ok(())
    }

    /// Extends the partial path by arc `a`, whose head becomes current.
    fn step(&mut self, a: ArcId, cost: f64, leg: LegState, transfers: usize) -> Result<()> {
        if cost > self.limit + COST_EPS {
            return Ok(());
        }
        let head = self.cgn.arc(a).head;
        if self.visited[head.0] {
            return Ok(());
        }
        self.arcs.push(a);
        if head == self.target {
            self.found.push((self.arcs.clone(), cost));
            if self.found.len() > self.cap {
                return Err(Error::PathExplosion {
                    od: self.instance.od(self.od).id.clone(),
                    cap: self.cap,
                });
            }
            self.arcs.pop();
            return Ok(());
        }
        self.visited[head.0] = true;
        let node = *self.cgn.node(head);
        for &next in self.cgn.out_arcs(head) {
            let arc = self.cgn.arc(next);
            let c = cost + arc.cost;
            match (node.kind, arc.kind) {
                (NodeKind::LineStop(_), ArcKind::InVehicle) => {
                    let leg = LegState {
                        rides: leg.rides + 1,
                        ..leg
                    };
                    self.step(next, c, leg, transfers)?;
                }
                (NodeKind::LineStop(_), ArcKind::Egress) => {
                    if leg.rides > 0 && arc.headway == Some(leg.headway) && arc.head == self.target {
                        self.step(next, c, leg, transfers)?;
                    }
                }
                (NodeKind::LineStop(_), ArcKind::Transfer) => {
                    if leg.rides > 0 && transfers == 0 && arc.headway == Some(leg.headway) {
                        self.step(next, c, leg, transfers + 1)?;
                    }
                }
                (NodeKind::Transfer, ArcKind::Transfer) => {
                    let leg = LegState {
                        headway: arc.headway.expect("transfer arcs carry a headway"),
                        rides: 0,
                    };
                    self.step(next, c, leg, transfers)?;
                }
                _ => {}
            }
        }
        self.visited[head.0] = false;
        self.arcs.pop();
        Ok(())
    }
}

/// Recovers legs and usages from an arc sequence produced by the search.
fn describe(
    instance: &Instance,
    cgn: &ChangeAndGoNetwork,
    arcs: &[ArcId],
) -> (Signature, Vec<(LineIdx, Headway)>) {
    let mut legs: Signature = Vec::new();
    let mut usages = Vec::new();
    for &a in arcs {
        let arc = cgn.arc(a);
        let head = cgn.node(arc.head);
        if let NodeKind::LineStop(l) = head.kind {
            if arc.kind != ArcKind::InVehicle {
                let pos = instance.line(l).position_of(head.stop).expect("line serves stop");
                legs.push(Leg {
                    line: l,
                    board: pos,
                    alight: pos,
                });
                usages.push((l, arc.headway.expect("boarding arcs carry a headway")));
            } else {
                let pos = instance.line(l).position_of(head.stop).expect("line serves stop");
                legs.last_mut().expect("ride after boarding").alight = pos;
            }
        }
    }
    (legs, usages)
}

/// Drops transfer paths that could instead stay on one of their lines at
/// the same headway for no more cost.
fn remove_same_line_transfers(paths: &mut Vec<PassengerPath>) {
    let direct: HashMap<(LineIdx, Headway), f64> = paths
        .iter()
        .filter(|p| p.usages.len() == 1)
        .map(|p| (p.usages[0], p.cost))
        .collect();
    paths.retain(|p| {
        p.usages.len() < 2
            || !p
                .usages
                .iter()
                .any(|u| direct.get(u).is_some_and(|&c| c <= p.cost + COST_EPS))
    });
}

/// Cost rounded to a 1e-6 grid, so that equal costs reached by different
/// summation orders sort as ties.
pub fn cost_bucket(cost: f64) -> i64 {
    (cost * 1e6).round() as i64
}

/// Greedy dominance filter: paths are visited by ascending cost (ties by
/// fewer lines, then signature) and kept unless a kept path dominates them.
pub fn prune_dominated(mut paths: Vec<PassengerPath>) -> Vec<PassengerPath> {
    paths.sort_by(|a, b| {
        cost_bucket(a.cost)
            .cmp(&cost_bucket(b.cost))
            .then_with(|| a.order_key().cmp(&b.order_key()))
    });
    let mut kept: Vec<PassengerPath> = Vec::with_capacity(paths.len());
    for p in paths {
        if !kept.iter().any(|k| dominates(k, &p)) {
            kept.push(p);
        }
    }
    kept
}

/// All geographic routes of an OD with at most one transfer.
pub fn enumerate_signatures(instance: &Instance, od: OdIdx) -> Vec<Signature> {
    let d = instance.od(od);
    let mut out = Vec::new();
    for (l1, line1) in instance.lines.iter().enumerate() {
        let Some(p_o) = line1.position_of(d.origin) else {
            continue;
        };
        if let Some(p_t) = line1.position_of(d.destination) {
            out.push(vec![Leg {
                line: LineIdx(l1),
                board: p_o,
                alight: p_t,
            }]);
        }
        for (l2, line2) in instance.lines.iter().enumerate() {
            if l1 == l2 {
                continue;
            }
            let Some(q_t) = line2.position_of(d.destination) else {
                continue;
            };
            for (p_s, &s) in line1.stops.iter().enumerate() {
                if p_s == p_o {
                    continue;
                }
                let Some(q_s) = line2.position_of(s) else {
                    continue;
                };
                if q_s == q_t {
                    continue;
                }
                out.push(vec![
                    Leg {
                        line: LineIdx(l1),
                        board: p_o,
                        alight: p_s,
                    },
                    Leg {
                        line: LineIdx(l2),
                        board: q_s,
                        alight: q_t,
                    },
                ]);
            }
        }
    }
    out.sort();
    out
}

/// Every headway combination of a signature's lines.
pub fn headway_combinations(instance: &Instance, signature: &Signature) -> Vec<Vec<Headway>> {
    let mut combos = vec![Vec::new()];
    for leg in signature {
        let hs: Vec<Headway> = instance.line(leg.line).profile.headways().collect();
        combos = combos
            .into_iter()
            .flat_map(|c| {
                hs.iter().map(move |&h| {
                    let mut c = c.clone();
                    c.push(h);
                    c
                })
            })
            .collect();
    }
    combos
}

fn service_paths_for(
    instance: &Instance,
    cgn: &ChangeAndGoNetwork,
    od: OdIdx,
    limit: f64,
    cap: usize,
) -> Result<Vec<PassengerPath>> {
    let d = instance.od(od);
    let Some(target) = cgn.egress_node(d.destination) else {
        return Ok(Vec::new());
    };
    let mut search = Search {
        instance,
        cgn,
        od,
        target,
        limit,
        cap,
        visited: vec![false; cgn.nodes.len()],
        arcs: Vec::new(),
        found: Vec::new(),
    };
    search.run()?;
    let mut paths: Vec<PassengerPath> = search
        .found
        .into_iter()
        .map(|(arcs, _)| {
            let (signature, usages) = describe(instance, cgn, &arcs);
            // Re-sum in path order so costs do not depend on search order.
            let cost = arcs.iter().map(|&a| cgn.arc(a).cost).sum();
            PassengerPath {
                id: PathId(0),
                od,
                arcs,
                cost,
                usages,
                signature,
                alternative: false,
            }
        })
        .collect();
    remove_same_line_transfers(&mut paths);
    Ok(prune_dominated(paths))
}

pub fn generate_paths(
    instance: &Instance,
    cgn: &ChangeAndGoNetwork,
    mode: PathMode,
) -> Result<PathSet> {
    generate_paths_with(instance, cgn, mode, PathOptions::default())
}

pub fn generate_paths_with(
    instance: &Instance,
    cgn: &ChangeAndGoNetwork,
    mode: PathMode,
    options: PathOptions,
) -> Result<PathSet> {
    let t_min = shortest_ptn_times(instance);
    let mut paths = Vec::new();
    let mut info = Vec::with_capacity(instance.od.len());
    for od in instance.od_indices() {
        let t = t_min[od.0];
        let service_limit = threshold(instance, t);
        let service = if t.is_some() {
            service_paths_for(instance, cgn, od, service_limit, options.cap)?
        } else {
            Vec::new()
        };
        let (ptn, alt_cost, alt_in_model) = match mode {
            PathMode::Service => (service, service_limit, true),
            PathMode::Rigid => {
                let limit = rigid_threshold(instance, t, options.rigid_tolerance);
                let accepted_by_service: HashSet<Signature> =
                    service.into_iter().map(|p| p.signature).collect();
                let mut out = Vec::new();
                for sig in enumerate_signatures(instance, od) {
                    let best: Vec<Headway> = sig
                        .iter()
                        .map(|leg| instance.line(leg.line).profile.h_min())
                        .collect();
                    let best_cost = build_variant(instance, cgn, PathId(0), od, &sig, &best)
                        .map_or(f64::INFINITY, |p| p.cost);
                    if best_cost > limit + COST_EPS && !accepted_by_service.contains(&sig) {
                        continue;
                    }
                    for hw in headway_combinations(instance, &sig) {
                        let p = build_variant(instance, cgn, PathId(0), od, &sig, &hw)
                            .expect("enumerated signatures exist in the network");
                        out.push(p);
                        if out.len() > options.cap {
                            return Err(Error::PathExplosion {
                                od: instance.od(od).id.clone(),
                                cap: options.cap,
                            });
                        }
                    }
                }
                let connected = !out.is_empty();
                (out, limit, !connected)
            }
        };
        for mut p in ptn {
            p.id = PathId(paths.len());
            paths.push(p);
        }
        let alt_id = PathId(paths.len());
        paths.push(alternative_path(cgn, alt_id, od, alt_cost));
        info.push(OdPaths {
            threshold: alt_cost,
            t_min: t,
            alternative: alt_id,
            alternative_in_model: alt_in_model,
        });
    }
    Ok(PathSet::from_parts(mode, paths, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgn::build_cgn;
    use crate::samples;

    #[test]
    fn worked_example_has_one_path_per_headway() {
        let inst = samples::worked_example(1.0);
        let cgn = build_cgn(&inst);
        let ps = generate_paths(&inst, &cgn, PathMode::Service).unwrap();
        assert_eq!(ps.ptn_path_count(), 5);
        assert_eq!(ps.len(), 6);
        let mut costs: Vec<f64> = ps.paths().iter().filter(|p| !p.alternative).map(|p| p.cost).collect();
        costs.sort_by(f64::total_cmp);
        for (c, want) in costs.iter().zip([35.0, 40.0, 45.0, 50.0, 55.0]) {
            assert!((c - want).abs() < 1e-9, "{c} vs {want}");
        }
        assert_eq!(ps.signature_count(), 1);
    }

    #[test]
    fn shortest_time_on_chain() {
        let inst = samples::worked_example(1.0);
        assert_eq!(shortest_ptn_time(&inst, OdIdx(0)), Some(30.0));
    }

    #[test]
    fn threshold_with_table_rates() {
        let inst = samples::InstanceBuilder::new()
            .stops(["a", "b"])
            .edge("e", "a", "b", 10.0)
            .line("L", &["e"])
            .od("a", "b", 1.0)
            .build()
            .unwrap();
        let tau = 27.75 + 12.0 + 10.0 * 179.0 / 60.0;
        // C = 100 means 100 / 119 hours of riding.
        let t = 100.0 * 60.0 / 119.0;
        let c = threshold(&inst, Some(t));
        assert!((c - (125.0 + tau)).abs() < 1e-9);
        assert!((tau - 69.583_333_333).abs() < 1e-6);
    }

    #[test]
    fn transfer_example_paths_use_both_lines() {
        let inst = samples::two_line_transfer();
        let cgn = build_cgn(&inst);
        let ps = generate_paths(&inst, &cgn, PathMode::Service).unwrap();
        assert!(ps.ptn_path_count() > 0);
        for p in ps.paths().iter().filter(|p| !p.alternative) {
            let lines: Vec<_> = p.lines().collect();
            assert_eq!(lines, vec![LineIdx(0), LineIdx(1)]);
            assert_eq!(p.transfers(), 1);
            let at = inst.line(LineIdx(0)).stops[p.signature[0].alight];
            assert_eq!(inst.network.stop(at).id, "3");
        }
    }

    #[test]
    fn restriction_keeps_ids() {
        let inst = samples::worked_example(1.0);
        let cgn = build_cgn(&inst);
        let ps = generate_paths(&inst, &cgn, PathMode::Service).unwrap();
        let h5 = Headway::new(5.0).unwrap();
        let r = ps.restrict(|_, h| h == h5);
        assert_eq!(r.len(), 2);
        let p = r.paths().iter().find(|p| !p.alternative).unwrap();
        assert_eq!(ps.path(p.id), p);
        assert_eq!(ps.restrict(|_, _| false).len(), 1);
        assert_eq!(ps.restrict(|_, _| true).len(), ps.len());
    }

    #[test]
    fn export_round_trip() {
        let inst = samples::two_line_transfer();
        let cgn = build_cgn(&inst);
        let ps = generate_paths(&inst, &cgn, PathMode::Service).unwrap();
        let mut buf = Vec::new();
        ps.write_csv(&inst, &mut buf).unwrap();
        let back = PathSet::read_csv(&inst, &cgn, PathMode::Service, buf.as_slice()).unwrap();
        assert_eq!(back.paths(), ps.paths());
        assert_eq!(back.od, ps.od);
    }

    #[test]
    fn explosion_guard() {
        let inst = samples::two_line_transfer();
        let cgn = build_cgn(&inst);
        let opts = PathOptions {
            cap: 1,
            ..PathOptions::default()
        };
        let err = generate_paths_with(&inst, &cgn, PathMode::Service, opts).unwrap_err();
        assert!(matches!(err, Error::PathExplosion { ref od, .. } if od == "1-5"));
    }
}
