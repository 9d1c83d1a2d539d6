//! Request streams (replayed or synthesized) and initial fleet placement.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{NodeId, RoadNetwork};
use crate::rng::{self, SeedTree};
use crate::routing::Stop;
use crate::tabular::{field, Table, TableError};
use crate::{Cost, Millis, Money};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Undecided,
    Solo,
    Shared,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Waiting,
    Assigned,
    OnBoard,
    Completed,
    Cancelled,
}

impl RequestState {
    /// Whether `self → next` is an allowed lifecycle step.
    pub fn can_become(self, next: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, next),
            (Waiting, Assigned) | (Assigned, OnBoard) | (OnBoard, Completed) | (Waiting, Cancelled)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub t_request: Millis,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Shortest origin → destination cost under the active weight.
    pub direct_cost: Cost,
    /// Length and free-flow time of that same path.
    pub direct_length_mm: Cost,
    pub direct_time_ms: Millis,
    pub mode: Mode,
    pub max_detour_ratio: f64,
    pub max_wait: Millis,
    pub price: Money,
    pub state: RequestState,
    /// Per-request overrides read from the optional input columns.
    pub detour_override: Option<f64>,
    pub wait_override: Option<Millis>,
}

impl Request {
    /// A fresh, undecided request. Direct-path fields start at zero.
    pub fn new(id: RequestId, t_request: Millis, origin: NodeId, destination: NodeId) -> Self {
        Self {
            id,
            t_request,
            origin,
            destination,
            direct_cost: 0,
            direct_length_mm: 0,
            direct_time_ms: 0,
            mode: Mode::Undecided,
            max_detour_ratio: 0.0,
            max_wait: 0,
            price: 0.0,
            state: RequestState::Waiting,
            detour_override: None,
            wait_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleStatus {
    Idle,
    Serving,
    Repositioning,
}

/// Where a vehicle is: at `node`, or travelling along edge `edge` that
/// leaves `node`, `elapsed_ms` into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub node: NodeId,
    pub edge: Option<(u32, Millis)>,
}

impl Position {
    pub fn at(node: NodeId) -> Self {
        Self { node, edge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub capacity: u32,
    pub position: Position,
    pub onboard: Vec<RequestId>,
    pub scheduled: Vec<RequestId>,
    pub route: Vec<Stop>,
    pub status: VehicleStatus,
}

impl Vehicle {
    pub fn idle(id: VehicleId, capacity: u32, node: NodeId) -> Self {
        Self {
            id,
            capacity,
            position: Position::at(node),
            onboard: Vec::new(),
            scheduled: Vec::new(),
            route: Vec::new(),
            status: VehicleStatus::Idle,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.onboard.is_empty() && self.scheduled.is_empty() && self.route.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DemandSource {
    File(PathBuf),
    /// Poisson arrivals at `rate` requests/second, uniform over nodes.
    Uniform { rate: f64 },
    /// Poisson arrivals; each endpoint picks a zone by weight, then a node
    /// uniformly inside it.
    HotZones {
        zones: Vec<Vec<NodeId>>,
        weights: Vec<f64>,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandConfig {
    pub source: DemandSource,
    pub horizon: Millis,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: unknown node {node}")]
    UnknownNode { file: String, line: usize, node: u64 },
    #[error("{file}:{line}: origin equals destination")]
    SameEndpoints { file: String, line: usize },
    #[error("{file}:{line}: duplicate request id {id}")]
    DuplicateRequest { file: String, line: usize, id: u64 },
    #[error("demand node {0} is not strongly connected to the other demand nodes")]
    DisconnectedDemandNode(u64),
    #[error("invalid demand configuration: {0}")]
    InvalidConfig(String),
}

/// Replays a `request_id,t_request_s,origin_node,dest_node` file (optional
/// `max_detour_ratio,max_wait_s` columns). Output is sorted by request time,
/// ties by id, with direct costs filled in.
pub fn load_requests(net: &RoadNetwork, file: &Path) -> Result<Vec<Request>, DemandError> {
    let name = file.display().to_string();
    let table = Table::read(file).map_err(|e| table_error(e, &name))?;
    parse_table(net, &table)
}

/// [`load_requests`] over in-memory text.
pub fn parse_requests(net: &RoadNetwork, text: &str, file: &str) -> Result<Vec<Request>, DemandError> {
    let table = Table::parse(text, file).map_err(|e| table_error(e, file))?;
    parse_table(net, &table)
}

fn table_error(e: TableError, file: &str) -> DemandError {
    match e {
        TableError::Io(source) => DemandError::Io {
            path: file.to_string(),
            source,
        },
        TableError::Format { line, reason } => DemandError::MalformedRow {
            file: file.to_string(),
            line,
            reason,
        },
    }
}

fn parse_table(net: &RoadNetwork, t: &Table) -> Result<Vec<Request>, DemandError> {
    let te = |e| table_error(e, &t.file);
    let ci = t.column("request_id").map_err(te)?;
    let ct = t.column("t_request_s").map_err(te)?;
    let co = t.column("origin_node").map_err(te)?;
    let cd = t.column("dest_node").map_err(te)?;
    let cdet = t.optional_column("max_detour_ratio");
    let cwait = t.optional_column("max_wait_s");

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, f) in &t.rows {
        let line = *line;
        let id: u64 = field(f, ci, line, "request_id").map_err(te)?;
        let ts: f64 = field(f, ct, line, "t_request_s").map_err(te)?;
        if !(ts.is_finite() && ts >= 0.0) {
            return Err(DemandError::MalformedRow {
                file: t.file.clone(),
                line,
                reason: format!("t_request_s must be >= 0, got {ts}"),
            });
        }
        let node = |col, what| -> Result<NodeId, DemandError> {
            let ext: u64 = field(f, col, line, what).map_err(te)?;
            net.node(ext).ok_or(DemandError::UnknownNode {
                file: t.file.clone(),
                line,
                node: ext,
            })
        };
        let (o, d) = (node(co, "origin_node")?, node(cd, "dest_node")?);
        if o == d {
            return Err(DemandError::SameEndpoints {
                file: t.file.clone(),
                line,
            });
        }
        if !seen.insert(id) {
            return Err(DemandError::DuplicateRequest {
                file: t.file.clone(),
                line,
                id,
            });
        }
        let mut r = Request::new(RequestId(id), (ts * 1000.0).round() as Millis, o, d);
        if let Some(c) = cdet.filter(|&c| !f[c].is_empty()) {
            let v: f64 = field(f, c, line, "max_detour_ratio").map_err(te)?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(DemandError::MalformedRow {
                    file: t.file.clone(),
                    line,
                    reason: "max_detour_ratio must be >= 0".into(),
                });
            }
            r.detour_override = Some(v);
        }
        if let Some(c) = cwait.filter(|&c| !f[c].is_empty()) {
            let v: f64 = field(f, c, line, "max_wait_s").map_err(te)?;
            if !(v.is_finite() && v > 0.0) {
                return Err(DemandError::MalformedRow {
                    file: t.file.clone(),
                    line,
                    reason: "max_wait_s must be > 0".into(),
                });
            }
            r.wait_override = Some((v * 1000.0).round() as Millis);
        }
        out.push(r);
    }
    check_connectivity(net, &out)?;
    fill_direct(net, &mut out);
    out.sort_by_key(|r| (r.t_request, r.id));
    Ok(out)
}

/// Every node used by the stream must lie in one strongly connected component.
pub fn check_connectivity(net: &RoadNetwork, requests: &[Request]) -> Result<(), DemandError> {
    let nodes: BTreeSet<NodeId> = requests.iter().flat_map(|r| [r.origin, r.destination]).collect();
    let Some(&first) = nodes.iter().next() else {
        return Ok(());
    };
    let labels = net.scc_labels();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for n in &nodes {
        *counts.entry(labels[n.index()]).or_default() += 1;
    }
    // Blame a node outside the most populated component.
    let (&main, _) = counts
        .iter()
        .max_by_key(|&(l, c)| (*c, std::cmp::Reverse(*l)))
        .unwrap_or((&labels[first.index()], &0));
    match nodes.iter().find(|n| labels[n.index()] != main) {
        Some(&bad) => Err(DemandError::DisconnectedDemandNode(net.external_id(bad))),
        None => Ok(()),
    }
}

/// Fills `direct_cost`, `direct_length_mm` and `direct_time_ms`.
pub fn fill_direct(net: &RoadNetwork, requests: &mut [Request]) {
    let mut by_dest: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, r) in requests.iter().enumerate() {
        by_dest.entry(r.destination).or_default().push(i);
    }
    let groups: Vec<(NodeId, Vec<usize>)> = by_dest.into_iter().collect();
    for chunk in groups.chunks(256) {
        let filled: Vec<(usize, Cost, Cost, Millis)> = chunk
            .par_iter()
            .flat_map_iter(|(dest, idx)| {
                let tree = net.tree_to(*dest);
                idx.iter()
                    .map(|&i| {
                        let o = requests[i].origin;
                        let path = tree.path_edges(net, o).expect("connectivity checked");
                        let len = path.iter().map(|&e| net.edge(e).length_mm).sum();
                        let time = path.iter().map(|&e| net.edge(e).time_ms).sum();
                        (i, tree.cost(o).unwrap(), len, time)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        for (i, c, l, t) in filled {
            requests[i].direct_cost = c;
            requests[i].direct_length_mm = l;
            requests[i].direct_time_ms = t;
        }
    }
}

fn validate_config(net: &RoadNetwork, cfg: &DemandConfig) -> Result<(), DemandError> {
    let bad = |m: String| Err(DemandError::InvalidConfig(m));
    if cfg.horizon <= 0 {
        return bad("horizon must be > 0".into());
    }
    match &cfg.source {
        DemandSource::File(_) => bad("file sources are loaded with load_requests".into()),
        DemandSource::Uniform { rate } => {
            if !(rate.is_finite() && *rate > 0.0) {
                return bad(format!("rate must be > 0, got {rate}"));
            }
            Ok(())
        }
        DemandSource::HotZones {
            zones,
            weights,
            rate,
        } => {
            if !(rate.is_finite() && *rate > 0.0) {
                return bad(format!("rate must be > 0, got {rate}"));
            }
            if zones.is_empty() || zones.len() != weights.len() {
                return bad("need one weight per zone and at least one zone".into());
            }
            if zones.iter().any(|z| z.is_empty() || z.iter().any(|n| !net.contains(*n))) {
                return bad("zones must be non-empty lists of network nodes".into());
            }
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad("zone weights must be non-negative".into());
            }
            let s: f64 = weights.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("zone weights must sum to 1, got {s}"));
            }
            Ok(())
        }
    }
}

struct Sampler<'a> {
    net: &'a RoadNetwork,
    zones: Option<(&'a [Vec<NodeId>], WeightedIndex<f64>)>,
}

impl Sampler<'_> {
    fn draw<R: Rng>(&self, rng: &mut R) -> NodeId {
        match &self.zones {
            None => NodeId(rng.random_range(0..self.net.node_count() as u32)),
            Some((zones, w)) => {
                let z = &zones[w.sample(rng)];
                z[rng.random_range(0..z.len())]
            }
        }
    }
}

/// Poisson request stream over the horizon, fully determined by the seed.
///
/// Arrival times, origins and destinations come from separate sub-streams.
/// Destinations are redrawn (up to 32 times, then uniformly) until they differ
/// from the origin and share its strongly connected component.
pub fn synthesize_requests(net: &RoadNetwork, cfg: &DemandConfig) -> Result<Vec<Request>, DemandError> {
    validate_config(net, cfg)?;
    let (rate, sampler) = match &cfg.source {
        DemandSource::Uniform { rate } => (*rate, Sampler { net, zones: None }),
        DemandSource::HotZones {
            zones,
            weights,
            rate,
        } => {
            let w = WeightedIndex::new(weights.iter().copied())
                .map_err(|e| DemandError::InvalidConfig(e.to_string()))?;
            (
                *rate,
                Sampler {
                    net,
                    zones: Some((zones.as_slice(), w)),
                },
            )
        }
        DemandSource::File(_) => unreachable!("rejected by validation"),
    };
    if net.node_count() < 2 {
        return Err(DemandError::InvalidConfig("network needs at least two nodes".into()));
    }
    let seeds = SeedTree::new(cfg.seed);
    let mut arrivals = seeds.stream(rng::ARRIVALS, 0);
    let mut origins = seeds.stream(rng::ORIGINS, 0);
    let mut dests = seeds.stream(rng::DESTINATIONS, 0);
    let exp = Exp::new(rate).map_err(|e| DemandError::InvalidConfig(e.to_string()))?;
    let labels = net.scc_labels();

    let mut out = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += exp.sample(&mut arrivals);
        let t_ms = (t * 1000.0).round() as Millis;
        if t_ms > cfg.horizon {
            break;
        }
        let o = sampler.draw(&mut origins);
        let ok = |d: NodeId| d != o && labels[d.index()] == labels[o.index()];
        let mut d = sampler.draw(&mut dests);
        let mut tries = 0;
        while !ok(d) && tries < 32 {
            d = sampler.draw(&mut dests);
            tries += 1;
        }
        while !ok(d) {
            d = NodeId(dests.random_range(0..net.node_count() as u32));
            if !net.nodes().any(|x| x != o && labels[x.index()] == labels[o.index()]) {
                return Err(DemandError::DisconnectedDemandNode(net.external_id(o)));
            }
        }
        out.push(Request::new(RequestId(out.len() as u64), t_ms, o, d));
    }
    fill_direct(net, &mut out);
    Ok(out)
}

/// Places `n` idle vehicles following the origin distribution of the
/// requests in the first `window` milliseconds (the whole stream if that
/// window is empty; uniform over nodes if the stream is empty).
///
/// Placement uses systematic sampling over the empirical distribution, so
/// each node receives the floor or ceiling of its expected share.
pub fn init_fleet(
    net: &RoadNetwork,
    n: usize,
    capacity: u32,
    requests: &[Request],
    window: Millis,
    seed: u64,
) -> Vec<Vehicle> {
    assert!(n > 0, "fleet size must be positive");
    let mut rng = SeedTree::new(seed).stream(rng::FLEET, 0);
    let first: Vec<&Request> = requests.iter().filter(|r| r.t_request <= window).collect();
    let pool: Vec<&Request> = if first.is_empty() {
        requests.iter().collect()
    } else {
        first
    };
    let mut nodes: Vec<NodeId> = if pool.is_empty() {
        (0..n)
            .map(|_| NodeId(rng.random_range(0..net.node_count() as u32)))
            .collect()
    } else {
        let mut hist: BTreeMap<NodeId, usize> = BTreeMap::new();
        for r in &pool {
            *hist.entry(r.origin).or_default() += 1;
        }
        let total = pool.len() as f64;
        let step = 1.0 / n as f64;
        let offset: f64 = rng.random_range(0.0..step);
        let mut out = Vec::with_capacity(n);
        let mut cum = 0.0;
        let mut it = hist.iter().peekable();
        for k in 0..n {
            let u = offset + k as f64 * step;
            while let Some((&node, &c)) = it.peek() {
                if u < cum + c as f64 / total || it.len() == 1 {
                    out.push(node);
                    break;
                }
                cum += c as f64 / total;
                it.next();
            }
        }
        out
    };
    nodes.shuffle(&mut rng);
    nodes
        .into_iter()
        .enumerate()
        .map(|(i, node)| Vehicle::idle(VehicleId(i as u32), capacity, node))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{synth, WeightMode};

    fn grid() -> RoadNetwork {
        synth::grid(5, 5, 100.0, 10.0, WeightMode::Distance)
    }

    #[test]
    fn empty_file_gives_empty_stream() {
        let r = parse_requests(&grid(), "request_id,t_request_s,origin_node,dest_node\n", "r.csv").unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn rows_are_sorted_by_time() {
        let text = "request_id,t_request_s,origin_node,dest_node\n1,30,0,4\n2,10,1,5\n3,20,2,6\n";
        let r = parse_requests(&grid(), text, "r.csv").unwrap();
        let ts: Vec<_> = r.iter().map(|r| r.t_request).collect();
        assert_eq!(ts, vec![10_000, 20_000, 30_000]);
        assert_eq!(r[0].direct_cost, 200_000);
        assert_eq!(r[0].direct_length_mm, 200_000);
        assert_eq!(r[0].direct_time_ms, 20_000);
    }

    #[test]
    fn optional_columns_override() {
        let text = "request_id,t_request_s,origin_node,dest_node,max_detour_ratio,max_wait_s\n1,0,0,4,0.5,120\n2,0,0,3,,\n";
        let r = parse_requests(&grid(), text, "r.csv").unwrap();
        assert_eq!(r[0].detour_override, Some(0.5));
        assert_eq!(r[0].wait_override, Some(120_000));
        assert_eq!(r[1].detour_override, None);
    }

    #[test]
    fn bad_rows_are_reported() {
        let net = grid();
        let unknown = "request_id,t_request_s,origin_node,dest_node\n1,0,0,99\n";
        assert!(matches!(
            parse_requests(&net, unknown, "r.csv"),
            Err(DemandError::UnknownNode { line: 2, node: 99, .. })
        ));
        let same = "request_id,t_request_s,origin_node,dest_node\n1,0,3,3\n";
        assert!(matches!(
            parse_requests(&net, same, "r.csv"),
            Err(DemandError::SameEndpoints { .. })
        ));
    }

    #[test]
    fn disconnected_demand_node_is_rejected() {
        use crate::netgraph::{RawEdge, RawNode};
        let nodes = (0..3).map(|id| RawNode { id, lat: 0.0, lon: 0.0 }).collect();
        let e = |a, b| RawEdge { from: a, to: b, length_m: 1.0, speed_mps: 1.0 };
        let net = RoadNetwork::from_parts(nodes, vec![e(0, 1), e(1, 0), e(1, 2)], WeightMode::Distance).unwrap();
        let text = "request_id,t_request_s,origin_node,dest_node\n1,0,0,1\n2,0,1,2\n3,0,0,1\n";
        assert!(matches!(
            parse_requests(&net, text, "r.csv"),
            Err(DemandError::DisconnectedDemandNode(2))
        ));
    }

    #[test]
    fn tiny_rate_is_empty_and_reproducible() {
        let net = grid();
        let cfg = DemandConfig {
            source: DemandSource::Uniform { rate: 1e-7 },
            horizon: 1_000_000,
            seed: 9,
        };
        let a = synthesize_requests(&net, &cfg).unwrap();
        assert!(a.is_empty());
        assert_eq!(a, synthesize_requests(&net, &cfg).unwrap());
    }

    #[test]
    fn single_zone_holds_all_origins() {
        let net = grid();
        let zone = vec![NodeId(6), NodeId(7), NodeId(8)];
        let cfg = DemandConfig {
            source: DemandSource::HotZones {
                zones: vec![zone.clone()],
                weights: vec![1.0],
                rate: 0.5,
            },
            horizon: 600_000,
            seed: 1,
        };
        let r = synthesize_requests(&net, &cfg).unwrap();
        assert!(r.len() > 200);
        assert!(r.iter().all(|r| zone.contains(&r.origin) && r.origin != r.destination));
    }

    #[test]
    fn zone_weights_must_sum_to_one() {
        let cfg = DemandConfig {
            source: DemandSource::HotZones {
                zones: vec![vec![NodeId(0)], vec![NodeId(1)]],
                weights: vec![0.5, 0.2],
                rate: 1.0,
            },
            horizon: 1000,
            seed: 1,
        };
        assert!(matches!(synthesize_requests(&grid(), &cfg), Err(DemandError::InvalidConfig(_))));
    }

    #[test]
    fn fleet_without_demand_is_deterministic() {
        let net = grid();
        let a = init_fleet(&net, 1, 4, &[], 30_000, 3);
        assert_eq!(a, init_fleet(&net, 1, 4, &[], 30_000, 3));
        assert!(a[0].is_idle());
    }

    #[test]
    fn degenerate_origins_place_everyone() {
        let net = grid();
        let reqs: Vec<_> = (0..20)
            .map(|i| Request::new(RequestId(i), 1000, NodeId(7), NodeId(3)))
            .collect();
        let fleet = init_fleet(&net, 1000, 4, &reqs, 30_000, 5);
        assert_eq!(fleet.len(), 1000);
        assert!(fleet.iter().all(|v| v.position.node == NodeId(7)));
    }

    #[test]
    fn state_machine_edges() {
        use RequestState::*;
        assert!(Waiting.can_become(Assigned));
        assert!(Waiting.can_become(Cancelled));
        assert!(!Assigned.can_become(Cancelled));
        assert!(!Completed.can_become(Waiting));
    }
}
