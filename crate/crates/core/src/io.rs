//! Instance directories: four semicolon-separated tables plus `config.toml`.
//!
//! ```text
//! stops.csv   id;name;x;y
//! edges.csv   id;from;to;travel_time_min
//! od.csv      origin;destination;passengers
//! pool.csv    line_id;edge_id;position
//! ```
//!
//! The config holds cost parameters as flat keys, the default candidate
//! headways, optional `[lines.<id>]` overrides and `[[vehicle_types]]`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CostParameters, Edge, EdgeIdx, Headway, Instance, Line, OdPair, PublicTransportNetwork, Stop,
    VehicleType,
};

pub const STOPS_FILE: &str = "stops.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const OD_FILE: &str = "od.csv";
pub const POOL_FILE: &str = "pool.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Integer minutes 2..=20.
pub fn default_headways() -> Vec<f64> {
    (2..=20).map(f64::from).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct StopRow {
    id: String,
    name: String,
    x: Option<f64>,
    y: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    id: String,
    from: String,
    to: String,
    travel_time_min: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OdRow {
    origin: String,
    destination: String,
    passengers: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolRow {
    line_id: String,
    edge_id: String,
    position: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Budget {
    Amount(f64),
    Keyword(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    headways: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    turnaround: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    ivt_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perceived_wait_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_wait_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perceived_wait_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transfer_wait_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transfer_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vehicle_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line_fixed_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vehicle_capacity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fare: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<Budget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold_override: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    headways: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    turnaround: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    lines: BTreeMap<String, LineOverride>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    vehicle_types: Vec<VehicleType>,
}

impl Config {
    fn costs(&self, path: &Path) -> Result<CostParameters> {
        let d = CostParameters::default();
        let budget = match &self.budget {
            None => None,
            Some(Budget::Amount(b)) if b.is_infinite() && *b > 0.0 => None,
            Some(Budget::Amount(b)) => Some(*b),
            Some(Budget::Keyword(k)) if matches!(k.as_str(), "inf" | "infinite" | "none") => None,
            Some(Budget::Keyword(k)) => {
                return Err(Error::Config {
                    path: path.into(),
                    message: format!("budget must be a number or \"inf\", got {k:?}"),
                })
            }
        };
        Ok(CostParameters {
            ivt_rate: self.ivt_rate.unwrap_or(d.ivt_rate),
            perceived_wait_rate: self.perceived_wait_rate.unwrap_or(d.perceived_wait_rate),
            hidden_wait_rate: self.hidden_wait_rate.unwrap_or(d.hidden_wait_rate),
            perceived_wait_cap: self.perceived_wait_cap.unwrap_or(d.perceived_wait_cap),
            transfer_wait_rate: self.transfer_wait_rate.unwrap_or(d.transfer_wait_rate),
            transfer_penalty: self.transfer_penalty.unwrap_or(d.transfer_penalty),
            vehicle_cost: self.vehicle_cost.unwrap_or(d.vehicle_cost),
            line_fixed_cost: self.line_fixed_cost.unwrap_or(d.line_fixed_cost),
            vehicle_capacity: self.vehicle_capacity.unwrap_or(d.vehicle_capacity),
            fare: self.fare.unwrap_or(d.fare),
            lambda: self.lambda.unwrap_or(d.lambda),
            budget,
        })
    }
}

fn read_table<T: DeserializeOwned>(dir: &Path, file: &str) -> Result<Vec<(u64, T)>> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let to_parse = |err: csv::Error| Error::Parse {
        file: file.to_string(),
        line: err.position().map_or(0, |p| p.line()),
        message: csv_message(&err),
    };
    let headers = reader.headers().map_err(to_parse)?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(to_parse)?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(file, line, csv_message(&e)))?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn csv_message(err: &csv::Error) -> String {
    match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => err.to_string(),
    }
}

fn parse_err(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn headways(values: &[f64], context: &str) -> Result<Vec<Headway>> {
    values
        .iter()
        .map(|&h| {
            Headway::new(h).map_err(|_| {
                Error::Validation(format!("{context}: headway {h} must be a positive number"))
            })
        })
        .collect()
}

/// Reads and validates an instance directory. Nothing is returned unless
/// every file parses and every reference resolves.
pub fn load_instance(dir: impl AsRef<Path>) -> Result<Instance> {
    let dir = dir.as_ref();
    let config_path = dir.join(CONFIG_FILE);
    let config: Config = match fs::read_to_string(&config_path) {
        Ok(text) => toml::from_str(&text).map_err(|e| Error::Config {
            path: config_path.clone(),
            message: e.message().to_string(),
        })?,
        Err(e) => return Err(Error::io(&config_path, e)),
    };
    let costs = config.costs(&config_path)?;

    let stops: Vec<Stop> = read_table::<StopRow>(dir, STOPS_FILE)?
        .into_iter()
        .map(|(line, r)| match (r.x, r.y) {
            (Some(x), Some(y)) => Ok(Stop {
                id: r.id,
                name: r.name,
                coords: Some((x, y)),
            }),
            (None, None) => Ok(Stop {
                id: r.id,
                name: r.name,
                coords: None,
            }),
            _ => Err(parse_err(STOPS_FILE, line, "x and y must both be set or both empty")),
        })
        .collect::<Result<_>>()?;
    let mut stop_lookup = HashMap::new();
    for (i, s) in stops.iter().enumerate() {
        stop_lookup.insert(s.id.clone(), i);
    }
    let stop_ref = |file: &str, line: u64, id: &str| {
        stop_lookup
            .get(id)
            .map(|&i| crate::model::StopIdx(i))
            .ok_or_else(|| parse_err(file, line, format!("unknown stop id {id:?}")))
    };

    let mut edges = Vec::new();
    for (line, r) in read_table::<EdgeRow>(dir, EDGES_FILE)? {
        edges.push(Edge {
            from: stop_ref(EDGES_FILE, line, &r.from)?,
            to: stop_ref(EDGES_FILE, line, &r.to)?,
            id: r.id,
            travel_time: r.travel_time_min,
        });
    }
    let network = PublicTransportNetwork::new(stops, edges)?;

    let mut od = Vec::new();
    for (line, r) in read_table::<OdRow>(dir, OD_FILE)? {
        od.push(OdPair {
            id: format!("{}-{}", r.origin, r.destination),
            origin: stop_ref(OD_FILE, line, &r.origin)?,
            destination: stop_ref(OD_FILE, line, &r.destination)?,
            demand: r.passengers,
        });
    }

    // Lines keep the order of their first appearance in the pool file.
    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<String, Vec<(u32, EdgeIdx, u64)>> = HashMap::new();
    for (line, r) in read_table::<PoolRow>(dir, POOL_FILE)? {
        let edge = network
            .edge_idx(&r.edge_id)
            .ok_or_else(|| parse_err(POOL_FILE, line, format!("unknown edge id {:?}", r.edge_id)))?;
        if !members.contains_key(&r.line_id) {
            order.push(r.line_id.clone());
        }
        members
            .entry(r.line_id)
            .or_default()
            .push((r.position, edge, line));
    }
    for id in config.lines.keys() {
        if !members.contains_key(id) {
            return Err(Error::Config {
                path: config_path,
                message: format!("override for unknown line {id:?}"),
            });
        }
    }

    let default_hw = config.headways.clone().unwrap_or_else(default_headways);
    let default_turnaround = config.turnaround.unwrap_or(0.0);
    let mut lines = Vec::with_capacity(order.len());
    for id in order {
        let mut entries = members.remove(&id).expect("collected above");
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(parse_err(
                POOL_FILE,
                w[1].2,
                format!("line {id:?} repeats position {}", w[1].0),
            ));
        }
        let over = config.lines.get(&id);
        let hw = over
            .and_then(|o| o.headways.as_deref())
            .unwrap_or(&default_hw);
        let turnaround = over.and_then(|o| o.turnaround).unwrap_or(default_turnaround);
        let edge_seq = entries.iter().map(|e| e.1).collect();
        lines.push(Line::new(
            id.clone(),
            edge_seq,
            &network,
            headways(hw, &format!("line {id}"))?,
            turnaround,
        )?);
    }

    let vehicle_types = if config.vehicle_types.is_empty() {
        Instance::default_vehicle_types(&costs)
    } else {
        config.vehicle_types.clone()
    };
    Instance::new(
        network,
        lines,
        od,
        costs,
        vehicle_types,
        config.threshold_override,
    )
}

fn write_table<T: Serialize>(dir: &Path, file: &str, rows: &[T]) -> Result<()> {
    let path = dir.join(file);
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b';')
        .from_path(&path)
        .map_err(|e| Error::io(&path, e.into()))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::io(&path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `instance` so that [`load_instance`] reproduces it exactly.
pub fn write_instance(instance: &Instance, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let net = &instance.network;

    let stops: Vec<StopRow> = net
        .stops
        .iter()
        .map(|s| StopRow {
            id: s.id.clone(),
            name: s.name.clone(),
            x: s.coords.map(|c| c.0),
            y: s.coords.map(|c| c.1),
        })
        .collect();
    write_table(dir, STOPS_FILE, &stops)?;

    let edges: Vec<EdgeRow> = net
        .edges
        .iter()
        .map(|e| EdgeRow {
            id: e.id.clone(),
            from: net.stop(e.from).id.clone(),
            to: net.stop(e.to).id.clone(),
            travel_time_min: e.travel_time,
        })
        .collect();
    write_table(dir, EDGES_FILE, &edges)?;

    let od: Vec<OdRow> = instance
        .od
        .iter()
        .map(|d| OdRow {
            origin: net.stop(d.origin).id.clone(),
            destination: net.stop(d.destination).id.clone(),
            passengers: d.demand,
        })
        .collect();
    write_table(dir, OD_FILE, &od)?;

    let pool: Vec<PoolRow> = instance
        .lines
        .iter()
        .flat_map(|l| {
            l.edges.iter().enumerate().map(|(i, &e)| PoolRow {
                line_id: l.id.clone(),
                edge_id: net.edge(e).id.clone(),
                position: i as u32 + 1,
            })
        })
        .collect();
    write_table(dir, POOL_FILE, &pool)?;

    let c = &instance.costs;
    let config = Config {
        ivt_rate: Some(c.ivt_rate),
        perceived_wait_rate: Some(c.perceived_wait_rate),
        hidden_wait_rate: Some(c.hidden_wait_rate),
        perceived_wait_cap: Some(c.perceived_wait_cap),
        transfer_wait_rate: Some(c.transfer_wait_rate),
        transfer_penalty: Some(c.transfer_penalty),
        vehicle_cost: Some(c.vehicle_cost),
        line_fixed_cost: Some(c.line_fixed_cost),
        vehicle_capacity: Some(c.vehicle_capacity),
        fare: Some(c.fare),
        lambda: Some(c.lambda),
        budget: Some(match c.budget {
            Some(b) => Budget::Amount(b),
            None => Budget::Keyword("inf".into()),
        }),
        threshold_override: instance.threshold_override,
        headways: None,
        turnaround: None,
        lines: instance
            .lines
            .iter()
            .map(|l| {
                (
                    l.id.clone(),
                    LineOverride {
                        headways: Some(l.candidate_headways.iter().map(|h| h.minutes()).collect()),
                        turnaround: Some(l.turnaround),
                    },
                )
            })
            .collect(),
        vehicle_types: instance.vehicle_types.clone(),
    };
    let text = toml::to_string(&config).map_err(|e| Error::Config {
        path: dir.join(CONFIG_FILE),
        message: e.to_string(),
    })?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn chain_dir(dir: &Path) {
        write(dir, STOPS_FILE, "id;name;x;y\n1;A;0;0\n2;B;1;0\n3;C;;\n");
        write(dir, EDGES_FILE, "id;from;to;travel_time_min\na;1;2;4\nb;2;3;6\n");
        write(dir, OD_FILE, "origin;destination;passengers\n1;3;10\n");
        write(dir, POOL_FILE, "line_id;edge_id;position\nL;b;2\nL;a;1\n");
        write(dir, CONFIG_FILE, "fare = 0\nbudget = \"inf\"\nheadways = [5, 10]\n");
    }

    #[test]
    fn loads_chain() {
        let tmp = tempfile::tempdir().unwrap();
        chain_dir(tmp.path());
        let inst = load_instance(tmp.path()).unwrap();
        assert_eq!(inst.lines.len(), 1);
        assert_eq!(inst.lines[0].roundtrip_time, 20.0);
        assert_eq!(inst.costs.fare, 0.0);
        assert_eq!(inst.costs.budget, None);
        assert_eq!(inst.costs.ivt_rate, 119.0);
        assert_eq!(inst.od[0].id, "1-3");
        assert_eq!(inst.network.stops[2].coords, None);
    }

    #[test]
    fn empty_od_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        chain_dir(tmp.path());
        write(tmp.path(), OD_FILE, "origin;destination;passengers\n");
        let err = load_instance(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("no OD pairs"), "{err}");
    }

    #[test]
    fn unknown_edge_named_with_location() {
        let tmp = tempfile::tempdir().unwrap();
        chain_dir(tmp.path());
        write(tmp.path(), POOL_FILE, "line_id;edge_id;position\nL;a;1\nL;zz;2\n");
        let err = load_instance(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("pool.csv:3") && err.contains("zz"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        chain_dir(tmp.path());
        write(tmp.path(), EDGES_FILE, "id;from;to;travel_time_min\na;1;2;4\nb;2;3;six\n");
        let err = load_instance(tmp.path()).unwrap_err().to_string();
        assert!(err.starts_with("edges.csv:3"), "{err}");
    }

    #[test]
    fn bad_budget_keyword() {
        let tmp = tempfile::tempdir().unwrap();
        chain_dir(tmp.path());
        write(tmp.path(), CONFIG_FILE, "budget = \"lots\"\n");
        assert!(matches!(load_instance(tmp.path()), Err(Error::Config { .. })));
    }

    #[test]
    fn unknown_config_key_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        chain_dir(tmp.path());
        write(tmp.path(), CONFIG_FILE, "ivt_rat = 3\n");
        assert!(matches!(load_instance(tmp.path()), Err(Error::Config { .. })));
    }
}
