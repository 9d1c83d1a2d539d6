use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::{NetworkError, NodeId, RoadNetwork};
use crate::Cost;

pub const UNREACHABLE: Cost = Cost::MAX;
const NO_EDGE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathResult {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<u32>,
    pub cost: Cost,
}

/// All-to-one shortest paths into `target` (a reverse Dijkstra tree).
///
/// `cost(x)` is the cost of the shortest `x → target` path and
/// `next_edge(x)` its first edge.
#[derive(Debug, Clone)]
pub struct ShortestPathTree {
    target: NodeId,
    dist: Vec<Cost>,
    next: Vec<u32>,
}

impl ShortestPathTree {
    pub fn target(&self) -> NodeId {
        self.target
    }

    #[inline]
    pub fn cost(&self, from: NodeId) -> Option<Cost> {
        let d = self.dist[from.index()];
        (d != UNREACHABLE).then_some(d)
    }

    #[inline]
    pub fn next_edge(&self, from: NodeId) -> Option<u32> {
        let e = self.next[from.index()];
        (e != NO_EDGE).then_some(e)
    }

    /// Edge sequence from `from` to the target.
    pub fn path_edges(&self, net: &RoadNetwork, from: NodeId) -> Option<Vec<u32>> {
        self.cost(from)?;
        let mut out = Vec::new();
        let mut at = from;
        while at != self.target {
            let e = self.next_edge(at)?;
            out.push(e);
            at = net.edge(e).to;
        }
        Some(out)
    }
}

/// Nodes reachable from a source within a cost limit, with the predecessor
/// edges needed to rebuild paths.
#[derive(Debug, Clone)]
pub struct Ball {
    pub source: NodeId,
    /// Settled nodes in settle order (cost ascending, then node id).
    pub nodes: Vec<(NodeId, Cost)>,
    pred: HashMap<NodeId, u32>,
}

impl Ball {
    pub fn path_edges(&self, net: &RoadNetwork, to: NodeId) -> Option<Vec<u32>> {
        if to != self.source && !self.pred.contains_key(&to) {
            return None;
        }
        let mut out = Vec::new();
        let mut at = to;
        while at != self.source {
            let e = self.pred[&at];
            out.push(e);
            at = net.edge(e).from;
        }
        out.reverse();
        Some(out)
    }
}

/// Which per-edge quantity a search accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// The network's active weight.
    Weight,
    /// Physical length in millimetres, whatever the weight mode.
    Length,
}

impl RoadNetwork {
    #[inline]
    fn metric(&self, m: Metric, e: u32) -> Cost {
        match m {
            Metric::Weight => self.weight(e),
            Metric::Length => self.edge(e).length_mm,
        }
    }

    fn check(&self, n: NodeId) {
        assert!(self.contains(n), "node {n:?} outside network");
    }

    /// Cost-minimal path under the active weight.
    ///
    /// Frontier ties pop the lower node id first; a node's predecessor only
    /// changes on strict improvement, so paths are reproducible.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<PathResult, NetworkError> {
        self.check(src);
        self.check(dst);
        let (dist, pred) = self.forward_search(src, Some(dst), UNREACHABLE, Metric::Weight);
        let cost = dist.get(&dst).copied().ok_or_else(|| self.unreachable(src, dst))?;
        let mut edges = Vec::new();
        let mut at = dst;
        while at != src {
            let e = pred[&at];
            edges.push(e);
            at = self.edge(e).from;
        }
        edges.reverse();
        let mut nodes = Vec::with_capacity(edges.len() + 1);
        nodes.push(src);
        nodes.extend(edges.iter().map(|&e| self.edge(e).to));
        Ok(PathResult { nodes, edges, cost })
    }

    /// Shortest-path cost without materializing the path.
    pub fn shortest_cost(&self, src: NodeId, dst: NodeId) -> Result<Cost, NetworkError> {
        self.check(src);
        self.check(dst);
        let (dist, _) = self.forward_search(src, Some(dst), UNREACHABLE, Metric::Weight);
        dist.get(&dst).copied().ok_or_else(|| self.unreachable(src, dst))
    }

    /// Every node within `limit` of `src` under `metric`.
    pub fn ball(&self, src: NodeId, limit: Cost, metric: Metric) -> Ball {
        self.check(src);
        let (dist, pred) = self.forward_search(src, None, limit, metric);
        let mut nodes: Vec<(NodeId, Cost)> = dist.into_iter().collect();
        nodes.sort_by_key(|&(n, d)| (d, n));
        Ball {
            source: src,
            nodes,
            pred,
        }
    }

    /// Reverse Dijkstra from `target` over the active weight.
    pub fn tree_to(&self, target: NodeId) -> ShortestPathTree {
        self.check(target);
        let n = self.node_count();
        let mut dist = vec![UNREACHABLE; n];
        let mut next = vec![NO_EDGE; n];
        let mut heap = BinaryHeap::new();
        dist[target.index()] = 0;
        heap.push(Reverse((0, target.0)));
        while let Some(Reverse((d, v))) = heap.pop() {
            let v = NodeId(v);
            if d > dist[v.index()] {
                continue;
            }
            for &e in self.in_edges(v) {
                let u = self.edge(e).from;
                let nd = d + self.weight(e);
                if nd < dist[u.index()] {
                    dist[u.index()] = nd;
                    next[u.index()] = e;
                    heap.push(Reverse((nd, u.0)));
                }
            }
        }
        ShortestPathTree { target, dist, next }
    }

    fn forward_search(
        &self,
        src: NodeId,
        stop_at: Option<NodeId>,
        limit: Cost,
        metric: Metric,
    ) -> (HashMap<NodeId, Cost>, HashMap<NodeId, u32>) {
        let mut best: HashMap<NodeId, Cost> = HashMap::new();
        let mut settled: HashMap<NodeId, Cost> = HashMap::new();
        let mut pred: HashMap<NodeId, u32> = HashMap::new();
        let mut heap = BinaryHeap::new();
        best.insert(src, 0);
        heap.push(Reverse((0, src.0)));
        while let Some(Reverse((d, v))) = heap.pop() {
            let v = NodeId(v);
            if settled.contains_key(&v) || d > best[&v] {
                continue;
            }
            settled.insert(v, d);
            if Some(v) == stop_at {
                break;
            }
            for e in self.out_edges(v) {
                let w = self.edge(e).to;
                let nd = d + self.metric(metric, e);
                if nd > limit || settled.contains_key(&w) {
                    continue;
                }
                if best.get(&w).is_none_or(|&cur| nd < cur) {
                    best.insert(w, nd);
                    pred.insert(w, e);
                    heap.push(Reverse((nd, w.0)));
                }
            }
        }
        pred.retain(|n, _| settled.contains_key(n));
        (settled, pred)
    }

    fn unreachable(&self, src: NodeId, dst: NodeId) -> NetworkError {
        NetworkError::Unreachable(self.external_id(src), self.external_id(dst))
    }
}
