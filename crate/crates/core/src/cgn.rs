//! Change-and-go network: a multigraph with one node per passenger state
//! (entering, leaving, changing at a stop, or riding a line at a stop) and
//! headway-replicated arcs that price waiting, riding and transferring.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CostParameters, EdgeIdx, Headway, Instance, LineIdx, OdIdx, StopIdx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ArcId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NodeKind {
    Access,
    Egress,
    Transfer,
    LineStop(LineIdx),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CgnNode {
    pub kind: NodeKind,
    pub stop: StopIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ArcKind {
    InVehicle,
    Access,
    Egress,
    Transfer,
    AlternativeMode,
}

/// Travel direction relative to the line's stop order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CgnArc {
    pub kind: ArcKind,
    pub tail: NodeId,
    pub head: NodeId,
    pub line: Option<LineIdx>,
    pub headway: Option<Headway>,
    pub cost: f64,
    /// In-vehicle arcs only: the PTN edge and its traversal direction.
    pub edge: Option<(EdgeIdx, Direction)>,
    /// In-vehicle arcs only: minutes spent on the arc.
    pub travel_time: f64,
    /// Alternative-mode arcs only.
    pub od: Option<OdIdx>,
}

/// Price of an arc under `costs`. Alternative-mode arcs are priced per OD
/// by the path generator and report zero here.
pub fn arc_cost(arc: &CgnArc, tail: &CgnNode, costs: &CostParameters) -> f64 {
    match arc.kind {
        ArcKind::InVehicle => costs.in_vehicle_cost(arc.travel_time),
        ArcKind::Access => costs.access_cost(arc.headway.expect("access arcs carry a headway")),
        ArcKind::Egress | ArcKind::AlternativeMode => 0.0,
        // Alighting into the transfer node is free; the wait and penalty are
        // charged when boarding the receiving line.
        ArcKind::Transfer => match tail.kind {
            NodeKind::Transfer => {
                costs.transfer_cost(arc.headway.expect("transfer arcs carry a headway"))
            }
            _ => 0.0,
        },
    }
}

#[derive(Debug, Clone)]
pub struct ChangeAndGoNetwork {
    pub nodes: Vec<CgnNode>,
    pub arcs: Vec<CgnArc>,
    out: Vec<Vec<ArcId>>,
    access: HashMap<StopIdx, NodeId>,
    egress: HashMap<StopIdx, NodeId>,
    transfer: HashMap<StopIdx, NodeId>,
    line_stop: HashMap<(LineIdx, StopIdx), NodeId>,
    /// `ivt[line][position]` holds the forward and backward arc of the
    /// line's edge between stop positions `position` and `position + 1`.
    ivt: Vec<Vec<[ArcId; 2]>>,
    freq_arcs: HashMap<(NodeId, NodeId, Headway), ArcId>,
    alternative: HashMap<OdIdx, ArcId>,
}

struct Builder {
    nodes: Vec<CgnNode>,
    arcs: Vec<CgnArc>,
}

impl Builder {
    fn node(&mut self, kind: NodeKind, stop: StopIdx) -> NodeId {
        self.nodes.push(CgnNode { kind, stop });
        NodeId(self.nodes.len() - 1)
    }

    fn arc(&mut self, arc: CgnArc, costs: &CostParameters) -> ArcId {
        let cost = arc_cost(&arc, &self.nodes[arc.tail.0], costs);
        self.arcs.push(CgnArc { cost, ..arc });
        ArcId(self.arcs.len() - 1)
    }
}

fn frequency_arc(kind: ArcKind, tail: NodeId, head: NodeId, line: LineIdx, h: Headway) -> CgnArc {
    CgnArc {
        kind,
        tail,
        head,
        line: Some(line),
        headway: Some(h),
        cost: 0.0,
        edge: None,
        travel_time: 0.0,
        od: None,
    }
}

pub fn build_cgn(instance: &Instance) -> ChangeAndGoNetwork {
    let net = &instance.network;
    let costs = &instance.costs;
    let mut b = Builder {
        nodes: Vec::new(),
        arcs: Vec::new(),
    };

    let mut lines_at = vec![Vec::new(); net.stops.len()];
    for (l, line) in instance.lines.iter().enumerate() {
        for &s in &line.stops {
            lines_at[s.0].push(LineIdx(l));
        }
    }
    let mut origins = vec![false; net.stops.len()];
    let mut destinations = vec![false; net.stops.len()];
    for d in &instance.od {
        origins[d.origin.0] = true;
        destinations[d.destination.0] = true;
    }

    let mut access = HashMap::new();
    let mut egress = HashMap::new();
    let mut transfer = HashMap::new();
    for s in (0..net.stops.len()).map(StopIdx) {
        if origins[s.0] {
            access.insert(s, b.node(NodeKind::Access, s));
        }
        if destinations[s.0] {
            egress.insert(s, b.node(NodeKind::Egress, s));
        }
        if lines_at[s.0].len() >= 2 {
            transfer.insert(s, b.node(NodeKind::Transfer, s));
        }
    }
    let mut line_stop = HashMap::new();
    for (l, line) in instance.lines.iter().enumerate() {
        for &s in &line.stops {
            line_stop.insert((LineIdx(l), s), b.node(NodeKind::LineStop(LineIdx(l)), s));
        }
    }

    let mut ivt = Vec::with_capacity(instance.lines.len());
    let mut freq_arcs = HashMap::new();
    for (l, line) in instance.lines.iter().enumerate() {
        let li = LineIdx(l);
        let mut pairs = Vec::with_capacity(line.edges.len());
        for (pos, &e) in line.edges.iter().enumerate() {
            let a = line_stop[&(li, line.stops[pos])];
            let z = line_stop[&(li, line.stops[pos + 1])];
            let time = net.edge(e).travel_time;
            let mut ride = |tail, head, dir| {
                b.arc(
                    CgnArc {
                        kind: ArcKind::InVehicle,
                        tail,
                        head,
                        line: Some(li),
                        headway: None,
                        cost: 0.0,
                        edge: Some((e, dir)),
                        travel_time: time,
                        od: None,
                    },
                    costs,
                )
            };
            let fwd = ride(a, z, Direction::Forward);
            let bwd = ride(z, a, Direction::Backward);
            pairs.push([fwd, bwd]);
        }
        ivt.push(pairs);

        for &s in &line.stops {
            let ls = line_stop[&(li, s)];
            for h in line.profile.headways() {
                let mut add = |kind, tail, head| {
                    let id = b.arc(frequency_arc(kind, tail, head, li, h), costs);
                    freq_arcs.insert((tail, head, h), id);
                };
                if let Some(&acc) = access.get(&s) {
                    add(ArcKind::Access, acc, ls);
                }
                if let Some(&egr) = egress.get(&s) {
                    add(ArcKind::Egress, ls, egr);
                }
                if let Some(&tr) = transfer.get(&s) {
                    add(ArcKind::Transfer, ls, tr);
                    add(ArcKind::Transfer, tr, ls);
                }
            }
        }
    }

    let mut alternative = HashMap::new();
    for (d, od) in instance.od.iter().enumerate() {
        let id = b.arc(
            CgnArc {
                kind: ArcKind::AlternativeMode,
                tail: access[&od.origin],
                head: egress[&od.destination],
                line: None,
                headway: None,
                cost: 0.0,
                edge: None,
                travel_time: 0.0,
                od: Some(OdIdx(d)),
            },
            costs,
        );
        alternative.insert(OdIdx(d), id);
    }

    let mut out = vec![Vec::new(); b.nodes.len()];
    for (i, arc) in b.arcs.iter().enumerate() {
        out[arc.tail.0].push(ArcId(i));
    }
    ChangeAndGoNetwork {
        nodes: b.nodes,
        arcs: b.arcs,
        out,
        access,
        egress,
        transfer,
        line_stop,
        ivt,
        freq_arcs,
        alternative,
    }
}

impl ChangeAndGoNetwork {
    pub fn node(&self, id: NodeId) -> &CgnNode {
        &self.nodes[id.0]
    }

    pub fn arc(&self, id: ArcId) -> &CgnArc {
        &self.arcs[id.0]
    }

    pub fn out_arcs(&self, node: NodeId) -> &[ArcId] {
        &self.out[node.0]
    }

    pub fn access_node(&self, stop: StopIdx) -> Option<NodeId> {
        self.access.get(&stop).copied()
    }

    pub fn egress_node(&self, stop: StopIdx) -> Option<NodeId> {
        self.egress.get(&stop).copied()
    }

    pub fn transfer_node(&self, stop: StopIdx) -> Option<NodeId> {
        self.transfer.get(&stop).copied()
    }

    pub fn line_stop_node(&self, line: LineIdx, stop: StopIdx) -> Option<NodeId> {
        self.line_stop.get(&(line, stop)).copied()
    }

    /// The in-vehicle arc of `line` leaving stop position `from` towards
    /// the adjacent position in `dir`.
    pub fn ivt_arc(&self, line: LineIdx, from: usize, dir: Direction) -> ArcId {
        match dir {
            Direction::Forward => self.ivt[line.0][from][0],
            Direction::Backward => self.ivt[line.0][from - 1][1],
        }
    }

    /// All in-vehicle arcs of a line.
    pub fn line_ivt_arcs(&self, line: LineIdx) -> impl Iterator<Item = ArcId> + '_ {
        self.ivt[line.0].iter().flat_map(|p| p.iter().copied())
    }

    /// Headway-specific arc between two nodes.
    pub fn frequency_arc(&self, tail: NodeId, head: NodeId, headway: Headway) -> Option<ArcId> {
        self.freq_arcs.get(&(tail, head, headway)).copied()
    }

    pub fn alternative_arc(&self, od: OdIdx) -> ArcId {
        self.alternative[&od]
    }

    pub fn count_nodes(&self, pred: impl Fn(&CgnNode) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(n)).count()
    }

    pub fn count_arcs(&self, kind: ArcKind) -> usize {
        self.arcs.iter().filter(|a| a.kind == kind).count()
    }

    pub fn arcs_with_headway(&self, headway: Headway) -> impl Iterator<Item = ArcId> + '_ {
        self.arcs
            .iter()
            .enumerate()
            .filter(move |(_, a)| a.headway == Some(headway))
            .map(|(i, _)| ArcId(i))
    }

    fn node_label(&self, id: NodeId, instance: &Instance) -> String {
        let n = self.node(id);
        let stop = &instance.network.stop(n.stop).id;
        match n.kind {
            NodeKind::Access => format!("A:{stop}"),
            NodeKind::Egress => format!("E:{stop}"),
            NodeKind::Transfer => format!("T:{stop}"),
            NodeKind::LineStop(l) => format!("L:{}:{stop}", instance.line(l).id),
        }
    }

    /// Semicolon-separated node and arc listing for debugging.
    pub fn write_dump(&self, instance: &Instance, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<cgn dump>", e);
        writeln!(w, "node;label").map_err(io)?;
        for i in 0..self.nodes.len() {
            writeln!(w, "{i};{}", self.node_label(NodeId(i), instance)).map_err(io)?;
        }
        writeln!(w, "arc;kind;tail;head;line;headway;cost").map_err(io)?;
        for (i, a) in self.arcs.iter().enumerate() {
            writeln!(
                w,
                "{i};{:?};{};{};{};{};{}",
                a.kind,
                self.node_label(a.tail, instance),
                self.node_label(a.head, instance),
                a.line.map_or(String::new(), |l| instance.line(l).id.clone()),
                a.headway.map_or(String::new(), |h| h.to_string()),
                a.cost
            )
            .map_err(io)?;
        }
        Ok(())
    }
}
