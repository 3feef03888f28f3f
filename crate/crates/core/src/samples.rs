//! Small hand-built instances and a builder for composing more.

use crate::error::Result;
use crate::model::{
    CostParameters, Edge, Headway, Instance, Line, OdPair, PublicTransportNetwork, Stop,
};

/// Programmatic counterpart of an instance directory.
#[derive(Debug, Clone)]
pub struct InstanceBuilder {
    stops: Vec<String>,
    edges: Vec<(String, String, String, f64)>,
    lines: Vec<(String, Vec<String>, Vec<f64>, f64)>,
    od: Vec<(String, String, f64)>,
    pub costs: CostParameters,
    pub threshold_override: Option<f64>,
    default_headways: Vec<f64>,
}

impl Default for InstanceBuilder {
    fn default() -> Self {
        InstanceBuilder {
            stops: Vec::new(),
            edges: Vec::new(),
            lines: Vec::new(),
            od: Vec::new(),
            costs: CostParameters::default(),
            threshold_override: None,
            default_headways: crate::io::default_headways(),
        }
    }
}

impl InstanceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(mut self, id: &str) -> Self {
        self.stops.push(id.to_string());
        self
    }

    pub fn stops<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        self.stops.extend(ids.into_iter().map(str::to_string));
        self
    }

    pub fn edge(mut self, id: &str, from: &str, to: &str, minutes: f64) -> Self {
        self.edges
            .push((id.into(), from.into(), to.into(), minutes));
        self
    }

    /// Line over `edges` using the builder's default headways.
    pub fn line(self, id: &str, edges: &[&str]) -> Self {
        let hw = self.default_headways.clone();
        self.line_with(id, edges, &hw, 0.0)
    }

    pub fn line_with(mut self, id: &str, edges: &[&str], headways: &[f64], turnaround: f64) -> Self {
        self.lines.push((
            id.into(),
            edges.iter().map(|e| e.to_string()).collect(),
            headways.to_vec(),
            turnaround,
        ));
        self
    }

    pub fn od(mut self, origin: &str, destination: &str, passengers: f64) -> Self {
        self.od.push((origin.into(), destination.into(), passengers));
        self
    }

    pub fn headways(mut self, headways: &[f64]) -> Self {
        self.default_headways = headways.to_vec();
        self
    }

    pub fn costs(mut self, costs: CostParameters) -> Self {
        self.costs = costs;
        self
    }

    pub fn threshold_override(mut self, value: f64) -> Self {
        self.threshold_override = Some(value);
        self
    }

    pub fn build(self) -> Result<Instance> {
        use crate::error::Error;
        let stops = self
            .stops
            .iter()
            .map(|id| Stop {
                id: id.clone(),
                name: id.clone(),
                coords: None,
            })
            .collect::<Vec<_>>();
        let find_stop = |id: &str| {
            stops
                .iter()
                .position(|s| s.id == id)
                .map(crate::model::StopIdx)
                .ok_or_else(|| Error::Validation(format!("unknown stop id {id:?}")))
        };
        let mut edges = Vec::new();
        for (id, from, to, t) in &self.edges {
            edges.push(Edge {
                id: id.clone(),
                from: find_stop(from)?,
                to: find_stop(to)?,
                travel_time: *t,
            });
        }
        let mut od = Vec::new();
        for (o, d, w) in &self.od {
            od.push(OdPair {
                id: format!("{o}-{d}"),
                origin: find_stop(o)?,
                destination: find_stop(d)?,
                demand: *w,
            });
        }
        let network = PublicTransportNetwork::new(stops, edges)?;
        let mut lines = Vec::new();
        for (id, edge_ids, hw, turnaround) in &self.lines {
            let edges = edge_ids
                .iter()
                .map(|e| {
                    network
                        .edge_idx(e)
                        .ok_or_else(|| Error::Validation(format!("unknown edge id {e:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let hw = hw
                .iter()
                .map(|&h| Headway::new(h))
                .collect::<Result<Vec<_>>>()?;
            lines.push(Line::new(id.clone(), edges, &network, hw, *turnaround)?);
        }
        let vehicle_types = Instance::default_vehicle_types(&self.costs);
        Instance::new(
            network,
            lines,
            od,
            self.costs,
            vehicle_types,
            self.threshold_override,
        )
    }
}

/// Cost parameters of the five-stop worked example: waiting beyond ten
/// minutes is half as heavy as the first ten, riding costs one per minute.
pub fn worked_example_costs(scale: f64) -> CostParameters {
    CostParameters {
        ivt_rate: 60.0 * scale,
        perceived_wait_rate: 120.0 * scale,
        hidden_wait_rate: 60.0 * scale,
        perceived_wait_cap: 10.0,
        transfer_wait_rate: 0.0,
        transfer_penalty: 0.0,
        vehicle_cost: 2000.0,
        line_fixed_cost: 0.0,
        vehicle_capacity: 50.0,
        fare: 0.0,
        lambda: 1.0,
        budget: None,
    }
}

/// One line over a five-stop chain (60-minute round trip), 150 passengers
/// end to end, headways {5, 10, 15, 20, 30}. `scale` multiplies the
/// passenger time values.
pub fn worked_example(scale: f64) -> Instance {
    InstanceBuilder::new()
        .stops(["1", "2", "3", "4", "5"])
        .edge("e1", "1", "2", 7.5)
        .edge("e2", "2", "3", 7.5)
        .edge("e3", "3", "4", 7.5)
        .edge("e4", "4", "5", 7.5)
        .line_with("L1", &["e1", "e2", "e3", "e4"], &[5.0, 10.0, 15.0, 20.0, 30.0], 0.0)
        .od("1", "5", 150.0)
        .costs(worked_example_costs(scale))
        .threshold_override(1000.0 * scale)
        .build()
        .expect("worked example is valid")
}

/// Two lines 1-2-3 and 4-3-5 meeting at stop 3, one OD from 1 to 5.
pub fn two_line_transfer() -> Instance {
    InstanceBuilder::new()
        .stops(["1", "2", "3", "4", "5"])
        .edge("a", "1", "2", 5.0)
        .edge("b", "2", "3", 5.0)
        .edge("c", "4", "3", 5.0)
        .edge("d", "3", "5", 5.0)
        .headways(&[5.0, 10.0, 20.0])
        .line("l1", &["a", "b"])
        .line("l2", &["c", "d"])
        .od("1", "5", 100.0)
        .build()
        .expect("two-line example is valid")
}
