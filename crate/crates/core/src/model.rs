//! Problem input: network, line pool, demand, cost parameters, and the
//! headway ⇄ vehicle arithmetic shared by every later stage.
//!
//! All types here are immutable once an [`Instance`] has been validated.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! index_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }
    };
}

index_type!(
    /// Position of a stop in [`PublicTransportNetwork::stops`].
    StopIdx
);
index_type!(EdgeIdx);
index_type!(LineIdx);
index_type!(OdIdx);

/// Minutes between two consecutive services of a line.
///
/// Ordered and hashed by value so it can key maps. Frequencies are the
/// image `60 / h`; the crate works in headway space throughout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Headway(f64);

impl Headway {
    pub fn new(minutes: f64) -> Result<Self> {
        if minutes.is_finite() && minutes > 0.0 {
            Ok(Headway(minutes))
        } else {
            Err(Error::Headway(format!(
                "headway must be a positive number of minutes, got {minutes}"
            )))
        }
    }

    pub fn minutes(self) -> f64 {
        self.0
    }

    pub fn frequency_per_hour(self) -> f64 {
        60.0 / self.0
    }

    /// Expected wait for a randomly arriving passenger.
    pub fn expected_wait(self) -> f64 {
        self.0 / 2.0
    }
}

impl PartialEq for Headway {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Headway {}

impl PartialOrd for Headway {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Headway {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Hash for Headway {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl fmt::Display for Headway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub id: String,
    pub name: String,
    pub coords: Option<(f64, f64)>,
}

/// Undirected PTN edge; travel time is symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: StopIdx,
    pub to: StopIdx,
    pub travel_time: f64,
}

impl Edge {
    pub fn other_end(&self, stop: StopIdx) -> Option<StopIdx> {
        if stop == self.from {
            Some(self.to)
        } else if stop == self.to {
            Some(self.from)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublicTransportNetwork {
    pub stops: Vec<Stop>,
    pub edges: Vec<Edge>,
    stop_index: HashMap<String, StopIdx>,
    edge_index: HashMap<String, EdgeIdx>,
}

impl PublicTransportNetwork {
    pub fn new(stops: Vec<Stop>, edges: Vec<Edge>) -> Result<Self> {
        let mut stop_index = HashMap::with_capacity(stops.len());
        for (i, stop) in stops.iter().enumerate() {
            if stop_index.insert(stop.id.clone(), StopIdx(i)).is_some() {
                return Err(Error::Validation(format!("duplicate stop id {}", stop.id)));
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        for (i, edge) in edges.iter().enumerate() {
            if edge_index.insert(edge.id.clone(), EdgeIdx(i)).is_some() {
                return Err(Error::Validation(format!("duplicate edge id {}", edge.id)));
            }
            if edge.from.0 >= stops.len() || edge.to.0 >= stops.len() {
                return Err(Error::Validation(format!(
                    "edge {} references a missing stop",
                    edge.id
                )));
            }
            if edge.from == edge.to {
                return Err(Error::Validation(format!("edge {} is a self-loop", edge.id)));
            }
            if !(edge.travel_time.is_finite() && edge.travel_time > 0.0) {
                return Err(Error::Validation(format!(
                    "edge {} has non-positive travel time {}",
                    edge.id, edge.travel_time
                )));
            }
        }
        Ok(PublicTransportNetwork {
            stops,
            edges,
            stop_index,
            edge_index,
        })
    }

    pub fn stop_idx(&self, id: &str) -> Option<StopIdx> {
        self.stop_index.get(id).copied()
    }

    pub fn edge_idx(&self, id: &str) -> Option<EdgeIdx> {
        self.edge_index.get(id).copied()
    }

    pub fn stop(&self, idx: StopIdx) -> &Stop {
        &self.stops[idx.0]
    }

    pub fn edge(&self, idx: EdgeIdx) -> &Edge {
        &self.edges[idx.0]
    }

    /// Number of connected components, counting isolated stops.
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.stops.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.from.0), find(&mut parent, e.to.0));
            if a != b {
                parent[a] = b;
            }
        }
        (0..self.stops.len())
            .filter(|&i| find(&mut parent, i) == i)
            .count()
    }
}

/// One (headway, required vehicles) step of a line's trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub headway: Headway,
    pub vehicles: u32,
}

/// The operable headways of a line, each with a unique vehicle requirement.
///
/// Entries are sorted by ascending headway, so vehicle counts are strictly
/// descending. When several candidates need the same fleet only the
/// smallest headway is kept: the others offer worse service at equal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadwayProfile {
    entries: Vec<ProfileEntry>,
}

impl HeadwayProfile {
    pub fn build(roundtrip_time: f64, candidates: &[Headway]) -> Self {
        let mut sorted = candidates.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut entries: Vec<ProfileEntry> = Vec::with_capacity(sorted.len());
        for h in sorted {
            let vehicles = vehicles_for(roundtrip_time, h);
            if entries.last().is_some_and(|e| e.vehicles == vehicles) {
                continue;
            }
            entries.push(ProfileEntry {
                headway: h,
                vehicles,
            });
        }
        HeadwayProfile { entries }
    }

    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }

    pub fn headways(&self) -> impl DoubleEndedIterator<Item = Headway> + '_ {
        self.entries.iter().map(|e| e.headway)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn h_min(&self) -> Headway {
        self.entries[0].headway
    }

    pub fn h_max(&self) -> Headway {
        self.entries[self.entries.len() - 1].headway
    }

    /// Fleet needed for the least frequent service.
    pub fn v_min(&self) -> u32 {
        self.entries[self.entries.len() - 1].vehicles
    }

    pub fn contains(&self, h: Headway) -> bool {
        self.position(h).is_some()
    }

    pub fn vehicles(&self, h: Headway) -> Option<u32> {
        self.position(h).map(|i| self.entries[i].vehicles)
    }

    fn position(&self, h: Headway) -> Option<usize> {
        self.entries.binary_search_by(|e| e.headway.cmp(&h)).ok()
    }
}

fn vehicles_for(roundtrip_time: f64, headway: Headway) -> u32 {
    // Tolerance keeps exact ratios such as 60/20 from rounding up.
    let ratio = roundtrip_time / headway.minutes();
    (ratio - 1e-9).ceil().max(1.0) as u32
}

/// Result of [`Line::f_h`]: the best headway a fleet can operate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperableHeadway {
    pub headway: Headway,
    /// False when the fleet cannot run even the least frequent service;
    /// `headway` is then `h_max`.
    pub sufficient: bool,
}

/// A candidate line: a simple path through the PTN served in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: String,
    pub edges: Vec<EdgeIdx>,
    pub stops: Vec<StopIdx>,
    pub turnaround: f64,
    pub roundtrip_time: f64,
    /// Headways as configured, before collapsing duplicates.
    pub candidate_headways: Vec<Headway>,
    pub profile: HeadwayProfile,
}

impl Line {
    pub fn new(
        id: impl Into<String>,
        edges: Vec<EdgeIdx>,
        network: &PublicTransportNetwork,
        mut candidate_headways: Vec<Headway>,
        turnaround: f64,
    ) -> Result<Self> {
        let id = id.into();
        if edges.is_empty() {
            return Err(Error::Validation(format!("line {id} has no edges")));
        }
        if let Some(e) = edges.iter().find(|e| e.0 >= network.edges.len()) {
            return Err(Error::Validation(format!(
                "line {id} references unknown edge #{}",
                e.0
            )));
        }
        if !(turnaround.is_finite() && turnaround >= 0.0) {
            return Err(Error::Validation(format!(
                "line {id} has invalid turnaround buffer {turnaround}"
            )));
        }
        let stops = stop_sequence(&id, &edges, network)?;
        candidate_headways.sort();
        candidate_headways.dedup();
        if candidate_headways.is_empty() {
            return Err(Error::Validation(format!("line {id} has no candidate headways")));
        }
        let one_way: f64 = edges.iter().map(|&e| network.edge(e).travel_time).sum();
        let roundtrip_time = 2.0 * one_way + turnaround;
        let profile = HeadwayProfile::build(roundtrip_time, &candidate_headways);
        Ok(Line {
            id,
            edges,
            stops,
            turnaround,
            roundtrip_time,
            candidate_headways,
            profile,
        })
    }

    /// Vehicles needed to run the line at `headway`: `ceil(roundtrip / h)`.
    pub fn f_v(&self, headway: f64) -> Result<u32> {
        let h = Headway::new(headway)?;
        Ok(vehicles_for(self.roundtrip_time, h))
    }

    /// Vehicle requirement of a headway known to be valid.
    pub fn vehicles_for(&self, headway: Headway) -> u32 {
        vehicles_for(self.roundtrip_time, headway)
    }

    /// Smallest candidate headway operable with `vehicles`.
    pub fn f_h(&self, vehicles: u32) -> Result<OperableHeadway> {
        if vehicles < 1 {
            return Err(Error::Headway(format!(
                "line {}: vehicle count must be at least 1",
                self.id
            )));
        }
        Ok(self.operable_headway(vehicles))
    }

    fn operable_headway(&self, vehicles: u32) -> OperableHeadway {
        match self.profile.entries.iter().find(|e| e.vehicles <= vehicles) {
            Some(e) => OperableHeadway {
                headway: e.headway,
                sufficient: true,
            },
            None => OperableHeadway {
                headway: self.profile.h_max(),
                sufficient: false,
            },
        }
    }

    /// [`Line::f_h`] for a possibly fractional fleet (continuous `z`).
    pub fn headway_for_fleet(&self, fleet: f64) -> OperableHeadway {
        let whole = (fleet + 1e-6).floor().max(0.0) as u32;
        self.operable_headway(whole)
    }

    /// Largest candidate headway strictly below `headway`.
    pub fn next_smaller_headway(&self, headway: Headway) -> Result<Option<Headway>> {
        let pos = self.profile.position(headway).ok_or_else(|| {
            Error::Headway(format!(
                "headway {headway} is not a candidate of line {}",
                self.id
            ))
        })?;
        Ok(pos.checked_sub(1).map(|p| self.profile.entries[p].headway))
    }

    pub fn serves(&self, stop: StopIdx) -> bool {
        self.stops.contains(&stop)
    }

    pub fn position_of(&self, stop: StopIdx) -> Option<usize> {
        self.stops.iter().position(|&s| s == stop)
    }

    /// Travel time between two positions along the line.
    pub fn ride_time(&self, network: &PublicTransportNetwork, from: usize, to: usize) -> f64 {
        let (lo, hi) = if from <= to { (from, to) } else { (to, from) };
        self.edges[lo..hi]
            .iter()
            .map(|&e| network.edge(e).travel_time)
            .sum()
    }
}

fn stop_sequence(
    line_id: &str,
    edges: &[EdgeIdx],
    network: &PublicTransportNetwork,
) -> Result<Vec<StopIdx>> {
    let first = network.edge(edges[0]);
    let start = match edges.get(1).map(|&e| network.edge(e)) {
        None => first.from,
        Some(second) => {
            if second.other_end(first.to).is_some() {
                first.from
            } else if second.other_end(first.from).is_some() {
                first.to
            } else {
                return Err(Error::Validation(format!(
                    "line {line_id}: edges {} and {} are not adjacent",
                    first.id, second.id
                )));
            }
        }
    };
    let mut stops = vec![start];
    let mut seen = HashSet::from([start]);
    for &e in edges {
        let edge = network.edge(e);
        let current = *stops.last().expect("non-empty");
        let next = edge.other_end(current).ok_or_else(|| {
            Error::Validation(format!(
                "line {line_id}: edge {} does not continue the path at stop {}",
                edge.id,
                network.stop(current).id
            ))
        })?;
        if !seen.insert(next) {
            return Err(Error::Validation(format!(
                "line {line_id} is not a simple path: stop {} repeats",
                network.stop(next).id
            )));
        }
        stops.push(next);
    }
    Ok(stops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub id: String,
    pub origin: StopIdx,
    pub destination: StopIdx,
    /// Passengers per planning period.
    pub demand: f64,
}

/// Monetary weights for passenger time and operator resources.
///
/// Time rates are per hour and converted per minute where used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParameters {
    pub ivt_rate: f64,
    pub perceived_wait_rate: f64,
    pub hidden_wait_rate: f64,
    /// Minutes of initial wait priced at the perceived rate.
    pub perceived_wait_cap: f64,
    pub transfer_wait_rate: f64,
    pub transfer_penalty: f64,
    pub vehicle_cost: f64,
    pub line_fixed_cost: f64,
    pub vehicle_capacity: f64,
    pub fare: f64,
    pub lambda: f64,
    /// `None` means unbounded.
    pub budget: Option<f64>,
}

impl Default for CostParameters {
    fn default() -> Self {
        CostParameters {
            ivt_rate: 119.0,
            perceived_wait_rate: 238.0,
            hidden_wait_rate: 95.0,
            perceived_wait_cap: 5.0,
            transfer_wait_rate: 179.0,
            transfer_penalty: 12.0,
            vehicle_cost: 880.0,
            line_fixed_cost: 880.0,
            vehicle_capacity: 50.0,
            fare: 22.0,
            lambda: 1.0,
            budget: None,
        }
    }
}

impl CostParameters {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("ivt_rate", self.ivt_rate),
            ("perceived_wait_rate", self.perceived_wait_rate),
            ("hidden_wait_rate", self.hidden_wait_rate),
            ("perceived_wait_cap", self.perceived_wait_cap),
            ("transfer_wait_rate", self.transfer_wait_rate),
            ("transfer_penalty", self.transfer_penalty),
            ("vehicle_cost", self.vehicle_cost),
            ("line_fixed_cost", self.line_fixed_cost),
            ("fare", self.fare),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if !(self.vehicle_capacity.is_finite() && self.vehicle_capacity > 0.0) {
            return Err(Error::Validation("vehicle_capacity must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Validation("lambda must be positive".into()));
        }
        if let Some(b) = self.budget {
            if b.is_nan() || b < 0.0 {
                return Err(Error::Validation(format!("budget must be non-negative, got {b}")));
            }
        }
        Ok(())
    }

    /// Cost of riding `minutes` in a vehicle.
    pub fn in_vehicle_cost(&self, minutes: f64) -> f64 {
        minutes * self.ivt_rate / 60.0
    }

    /// Initial waiting at `headway`: perceived up to the cap, hidden beyond.
    pub fn access_cost(&self, headway: Headway) -> f64 {
        let wait = headway.expected_wait();
        let perceived = wait.min(self.perceived_wait_cap);
        let hidden = (wait - self.perceived_wait_cap).max(0.0);
        (perceived * self.perceived_wait_rate + hidden * self.hidden_wait_rate) / 60.0
    }

    /// Boarding the receiving line of a transfer at `headway`.
    pub fn transfer_cost(&self, headway: Headway) -> f64 {
        self.transfer_penalty + headway.expected_wait() * self.transfer_wait_rate / 60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleType {
    pub id: String,
    pub cost: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub network: PublicTransportNetwork,
    pub lines: Vec<Line>,
    pub od: Vec<OdPair>,
    pub costs: CostParameters,
    pub vehicle_types: Vec<VehicleType>,
    /// Replaces the computed acceptance threshold for every OD when set.
    pub threshold_override: Option<f64>,
}

impl Instance {
    pub fn new(
        network: PublicTransportNetwork,
        lines: Vec<Line>,
        od: Vec<OdPair>,
        costs: CostParameters,
        vehicle_types: Vec<VehicleType>,
        threshold_override: Option<f64>,
    ) -> Result<Self> {
        costs.validate()?;
        if lines.is_empty() {
            return Err(Error::Validation("no lines in the pool".into()));
        }
        if od.is_empty() {
            return Err(Error::Validation("no OD pairs".into()));
        }
        let mut line_ids = HashSet::new();
        for line in &lines {
            if !line_ids.insert(line.id.as_str()) {
                return Err(Error::Validation(format!("duplicate line id {}", line.id)));
            }
            if line.edges.iter().any(|e| e.0 >= network.edges.len()) {
                return Err(Error::Validation(format!(
                    "line {} references an edge outside the network",
                    line.id
                )));
            }
        }
        let mut pairs = HashSet::new();
        for d in &od {
            if d.origin.0 >= network.stops.len() || d.destination.0 >= network.stops.len() {
                return Err(Error::Validation(format!("OD {} references a missing stop", d.id)));
            }
            if d.origin == d.destination {
                return Err(Error::Validation(format!(
                    "OD {} has identical origin and destination",
                    d.id
                )));
            }
            if !(d.demand.is_finite() && d.demand >= 0.0) {
                return Err(Error::Validation(format!(
                    "OD {} has invalid demand {}",
                    d.id, d.demand
                )));
            }
            if !pairs.insert((d.origin, d.destination)) {
                return Err(Error::Validation(format!(
                    "duplicate OD pair {} -> {}",
                    network.stop(d.origin).id,
                    network.stop(d.destination).id
                )));
            }
        }
        if vehicle_types.is_empty() {
            return Err(Error::Validation("no vehicle types".into()));
        }
        for v in &vehicle_types {
            if !(v.cost.is_finite() && v.cost >= 0.0 && v.capacity.is_finite() && v.capacity > 0.0)
            {
                return Err(Error::Validation(format!("vehicle type {} is invalid", v.id)));
            }
        }
        if let Some(t) = threshold_override {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Validation(format!("threshold_override {t} is invalid")));
            }
        }
        if network.component_count() > 1 {
            log::warn!(
                "public transport network is disconnected ({} components)",
                network.component_count()
            );
        }
        Ok(Instance {
            network,
            lines,
            od,
            costs,
            vehicle_types,
            threshold_override,
        })
    }

    /// Single vehicle type derived from the cost parameters.
    pub fn default_vehicle_types(costs: &CostParameters) -> Vec<VehicleType> {
        vec![VehicleType {
            id: "default".into(),
            cost: costs.vehicle_cost,
            capacity: costs.vehicle_capacity,
        }]
    }

    pub fn line(&self, idx: LineIdx) -> &Line {
        &self.lines[idx.0]
    }

    pub fn line_idx(&self, id: &str) -> Option<LineIdx> {
        self.lines.iter().position(|l| l.id == id).map(LineIdx)
    }

    pub fn od(&self, idx: OdIdx) -> &OdPair {
        &self.od[idx.0]
    }

    pub fn od_idx(&self, id: &str) -> Option<OdIdx> {
        self.od.iter().position(|d| d.id == id).map(OdIdx)
    }

    pub fn line_indices(&self) -> impl Iterator<Item = LineIdx> {
        (0..self.lines.len()).map(LineIdx)
    }

    pub fn od_indices(&self) -> impl Iterator<Item = OdIdx> {
        (0..self.od.len()).map(OdIdx)
    }

    pub fn total_demand(&self) -> f64 {
        self.od.iter().map(|d| d.demand).sum()
    }

    /// Largest headway any line may operate.
    pub fn max_headway(&self) -> Headway {
        self.lines
            .iter()
            .map(|l| l.profile.h_max())
            .max()
            .expect("at least one line")
    }

    pub fn min_headway(&self) -> Headway {
        self.lines
            .iter()
            .map(|l| l.profile.h_min())
            .min()
            .expect("at least one line")
    }

    /// Σ_l |F_l| over the collapsed headway profiles.
    pub fn total_frequencies(&self) -> usize {
        self.lines.iter().map(|l| l.profile.len()).sum()
    }

    /// Same instance with a different passenger weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut out = self.clone();
        out.costs.lambda = lambda;
        out.costs.validate()?;
        Ok(out)
    }

    pub fn with_budget(&self, budget: Option<f64>) -> Self {
        let mut out = self.clone();
        out.costs.budget = budget;
        out
    }
}
