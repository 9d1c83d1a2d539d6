//! Road network and shortest-path queries.
//!
//! Costs are integers (millimetres or milliseconds, depending on
//! [`WeightMode`]) so that path sums are exact and Dijkstra is reproducible.

mod cache;
mod dijkstra;
mod load;
pub mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Cost, Millis};

pub use cache::{CostOracle, TreeCache};
pub use dijkstra::{Ball, Metric, PathResult, ShortestPathTree, UNREACHABLE};
pub use load::{load_network, parse_edges, parse_nodes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Distance,
    TravelTime,
}

impl WeightMode {
    /// Cost units per metre (distance) or per second (travel time).
    pub fn units_per_base(self) -> f64 {
        1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub length_mm: Cost,
    pub speed_mps: f64,
    pub time_ms: Millis,
}

impl Edge {
    pub fn weight(&self, mode: WeightMode) -> Cost {
        match mode {
            WeightMode::Distance => self.length_mm,
            WeightMode::TravelTime => self.time_ms,
        }
    }
}

/// Edge as read from input, before validation and unit conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEdge {
    pub from: u64,
    pub to: u64,
    pub length_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawNode {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: edge references unknown node {node}")]
    DanglingEdge { file: String, line: usize, node: u64 },
    #[error("{file}:{line}: duplicate node id {node}")]
    DuplicateNode { file: String, line: usize, node: u64 },
    #[error("no path from node {0} to node {1}")]
    Unreachable(u64, u64),
    #[error("network has no nodes")]
    Empty,
}

/// Directed road graph in compressed adjacency form.
///
/// Node ids in input files are arbitrary integers; internally nodes are
/// dense [`NodeId`]s in file order, and [`RoadNetwork::external_id`] maps back.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    coords: Vec<(f64, f64)>,
    external: Vec<u64>,
    index_of: HashMap<u64, NodeId>,
    out_offsets: Vec<u32>,
    edges: Vec<Edge>,
    weights: Vec<Cost>,
    in_offsets: Vec<u32>,
    in_edges: Vec<u32>,
    mode: WeightMode,
}

impl RoadNetwork {
    /// Builds a validated network. Parallel edges collapse to the one with
    /// minimum active weight.
    pub fn from_parts(
        nodes: Vec<RawNode>,
        raw_edges: Vec<RawEdge>,
        mode: WeightMode,
    ) -> Result<Self, NetworkError> {
        Self::build(nodes, raw_edges, mode, "<memory>", &[], &[])
    }

    pub(crate) fn build(
        nodes: Vec<RawNode>,
        raw_edges: Vec<RawEdge>,
        mode: WeightMode,
        edge_file: &str,
        node_lines: &[usize],
        edge_lines: &[usize],
    ) -> Result<Self, NetworkError> {
        if nodes.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut index_of = HashMap::with_capacity(nodes.len());
        let mut coords = Vec::with_capacity(nodes.len());
        let mut external = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index_of.insert(n.id, NodeId(i as u32)).is_some() {
                return Err(NetworkError::DuplicateNode {
                    file: "<nodes>".into(),
                    line: node_lines.get(i).copied().unwrap_or(i + 1),
                    node: n.id,
                });
            }
            coords.push((n.lat, n.lon));
            external.push(n.id);
        }

        let mut best: HashMap<(NodeId, NodeId), Edge> = HashMap::with_capacity(raw_edges.len());
        for (i, e) in raw_edges.iter().enumerate() {
            let line = edge_lines.get(i).copied().unwrap_or(i + 1);
            let malformed = |reason: String| NetworkError::MalformedRow {
                file: edge_file.to_string(),
                line,
                reason,
            };
            if !(e.length_m.is_finite() && e.length_m > 0.0) {
                return Err(malformed(format!("length_m must be > 0, got {}", e.length_m)));
            }
            if !(e.speed_mps.is_finite() && e.speed_mps > 0.0) {
                return Err(malformed(format!("speed_mps must be > 0, got {}", e.speed_mps)));
            }
            let lookup = |id: u64| {
                index_of.get(&id).copied().ok_or(NetworkError::DanglingEdge {
                    file: edge_file.to_string(),
                    line,
                    node: id,
                })
            };
            let from = lookup(e.from)?;
            let to = lookup(e.to)?;
            let length_mm = ((e.length_m * 1000.0).round() as Cost).max(1);
            let time_ms = ((e.length_m / e.speed_mps * 1000.0).round() as Millis).max(1);
            let edge = Edge {
                from,
                to,
                length_mm,
                speed_mps: e.speed_mps,
                time_ms,
            };
            best.entry((from, to))
                .and_modify(|cur| {
                    let (w_new, w_cur) = (edge.weight(mode), cur.weight(mode));
                    if (w_new, edge.length_mm, edge.time_ms) < (w_cur, cur.length_mm, cur.time_ms) {
                        *cur = edge.clone();
                    }
                })
                .or_insert(edge);
        }
        let mut edges: Vec<Edge> = best.into_values().collect();
        edges.sort_by_key(|e| (e.from, e.to));

        let n = coords.len();
        let mut out_offsets = vec![0u32; n + 1];
        for e in &edges {
            out_offsets[e.from.index() + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
        }
        let mut in_edges: Vec<u32> = (0..edges.len() as u32).collect();
        in_edges.sort_by_key(|&i| (edges[i as usize].to, edges[i as usize].from));
        let mut in_offsets = vec![0u32; n + 1];
        for e in &edges {
            in_offsets[e.to.index() + 1] += 1;
        }
        for i in 0..n {
            in_offsets[i + 1] += in_offsets[i];
        }
        let weights = edges.iter().map(|e| e.weight(mode)).collect();

        Ok(Self {
            coords,
            external,
            index_of,
            out_offsets,
            edges,
            weights,
            in_offsets,
            in_edges,
            mode,
        })
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.mode
    }

    /// Active cost units covered per millisecond of free-flow driving: 1 in
    /// travel-time mode, the length-weighted mean speed in mm/ms otherwise.
    pub fn cost_per_ms(&self) -> f64 {
        match self.mode {
            WeightMode::TravelTime => 1.0,
            WeightMode::Distance => {
                let (mm, ms) = self
                    .edges
                    .iter()
                    .fold((0i128, 0i128), |(a, b), e| (a + i128::from(e.length_mm), b + i128::from(e.time_ms)));
                if ms == 0 {
                    1.0
                } else {
                    mm as f64 / ms as f64
                }
            }
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.coords.len() as u32).map(NodeId)
    }

    pub fn contains(&self, n: NodeId) -> bool {
        n.index() < self.coords.len()
    }

    pub fn node(&self, external_id: u64) -> Option<NodeId> {
        self.index_of.get(&external_id).copied()
    }

    pub fn external_id(&self, n: NodeId) -> u64 {
        self.external[n.index()]
    }

    pub fn coords(&self, n: NodeId) -> (f64, f64) {
        self.coords[n.index()]
    }

    pub fn edge(&self, idx: u32) -> &Edge {
        &self.edges[idx as usize]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Active weight of edge `idx`.
    #[inline]
    pub fn weight(&self, idx: u32) -> Cost {
        self.weights[idx as usize]
    }

    /// Outgoing edge indices of `n`, ordered by target node.
    #[inline]
    pub fn out_edges(&self, n: NodeId) -> std::ops::Range<u32> {
        self.out_offsets[n.index()]..self.out_offsets[n.index() + 1]
    }

    /// Incoming edge indices of `n`, ordered by source node.
    #[inline]
    pub fn in_edges(&self, n: NodeId) -> &[u32] {
        let (a, b) = (self.in_offsets[n.index()], self.in_offsets[n.index() + 1]);
        &self.in_edges[a as usize..b as usize]
    }

    pub fn find_edge(&self, from: NodeId, to: NodeId) -> Option<u32> {
        self.out_edges(from).find(|&i| self.edges[i as usize].to == to)
    }

    /// Replaces the active weight of every edge (congestion feedback).
    ///
    /// Weights must be positive; this panics otherwise, because every
    /// shortest-path routine assumes it.
    pub fn set_weights(&mut self, weights: Vec<Cost>) {
        assert_eq!(weights.len(), self.edges.len(), "one weight per edge");
        assert!(weights.iter().all(|&w| w > 0), "edge weights must be positive");
        self.weights = weights;
    }

    /// Strongly connected component label for every node.
    pub fn scc_labels(&self) -> Vec<u32> {
        // Kosaraju, iterative.
        let n = self.node_count();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for s in 0..n {
            if visited[s] {
                continue;
            }
            visited[s] = true;
            let mut stack = vec![(s, self.out_offsets[s])];
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                if *next < self.out_offsets[v + 1] {
                    let w = self.edges[*next as usize].to.index();
                    *next += 1;
                    if !visited[w] {
                        visited[w] = true;
                        stack.push((w, self.out_offsets[w]));
                    }
                } else {
                    order.push(v);
                    stack.pop();
                }
            }
        }
        let mut label = vec![u32::MAX; n];
        let mut comp = 0u32;
        for &s in order.iter().rev() {
            if label[s] != u32::MAX {
                continue;
            }
            label[s] = comp;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &ei in self.in_edges(NodeId(v as u32)) {
                    let u = self.edges[ei as usize].from.index();
                    if label[u] == u32::MAX {
                        label[u] = comp;
                        stack.push(u);
                    }
                }
            }
            comp += 1;
        }
        label
    }
}

/// Per-epoch hook for time-varying edge weights. The default model keeps
/// static speeds.
pub trait CongestionModel: Send {
    /// New weights for every edge, or `None` to keep the current ones.
    fn refresh(&mut self, net: &RoadNetwork, clock: Millis) -> Option<Vec<Cost>>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StaticSpeeds;

impl CongestionModel for StaticSpeeds {
    fn refresh(&mut self, _net: &RoadNetwork, _clock: Millis) -> Option<Vec<Cost>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: u64) -> Vec<RawNode> {
        (0..n)
            .map(|id| RawNode {
                id,
                lat: 0.0,
                lon: id as f64,
            })
            .collect()
    }

    fn edge(from: u64, to: u64, length_m: f64) -> RawEdge {
        RawEdge {
            from,
            to,
            length_m,
            speed_mps: 10.0,
        }
    }

    #[test]
    fn single_edge_network() {
        let net = RoadNetwork::from_parts(nodes(2), vec![edge(0, 1, 100.0)], WeightMode::Distance)
            .unwrap();
        assert_eq!(net.edge_count(), 1);
        assert_eq!(net.shortest_cost(NodeId(0), NodeId(1)).unwrap(), 100_000);
        let e = net.edge(0);
        assert_eq!(e.time_ms, 10_000);
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let err = RoadNetwork::from_parts(nodes(3), vec![edge(0, 99, 5.0)], WeightMode::Distance)
            .unwrap_err();
        assert!(matches!(err, NetworkError::DanglingEdge { node: 99, .. }));
    }

    #[test]
    fn duplicate_edges_keep_minimum() {
        let net = RoadNetwork::from_parts(
            nodes(2),
            vec![edge(0, 1, 50.0), edge(0, 1, 20.0), edge(0, 1, 70.0)],
            WeightMode::Distance,
        )
        .unwrap();
        assert_eq!(net.edge_count(), 1);
        assert_eq!(net.edge(0).length_mm, 20_000);
    }

    #[test]
    fn non_positive_length_is_malformed() {
        let err = RoadNetwork::from_parts(nodes(2), vec![edge(0, 1, 0.0)], WeightMode::Distance)
            .unwrap_err();
        assert!(matches!(err, NetworkError::MalformedRow { .. }));
    }

    #[test]
    fn scc_of_one_way_pair() {
        let net = RoadNetwork::from_parts(
            nodes(3),
            vec![edge(0, 1, 1.0), edge(1, 0, 1.0), edge(1, 2, 1.0)],
            WeightMode::Distance,
        )
        .unwrap();
        let l = net.scc_labels();
        assert_eq!(l[0], l[1]);
        assert_ne!(l[0], l[2]);
    }
}
