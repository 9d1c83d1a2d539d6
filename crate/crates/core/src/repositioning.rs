//! Moving idle vehicles that received no trip this epoch.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{RequestId, VehicleId};
use crate::netgraph::{CostOracle, Metric, NodeId, RoadNetwork};
use crate::{Cost, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum RepositionStrategy {
    #[default]
    Stay,
    /// Cruise to a random node inside a square area of this side, in metres.
    CruiseNearby(f64),
    ToWaiting,
}

impl fmt::Display for RepositionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Stay => f.write_str("stay"),
            Self::CruiseNearby(s) => write!(f, "cruise({s})"),
            Self::ToWaiting => f.write_str("to_waiting"),
        }
    }
}

impl FromStr for RepositionStrategy {
    type Err = String;

    /// `stay`, `to_waiting`, `cruise` (2000 m) or `cruise(<side_m>)`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        match s {
            "stay" => return Ok(Self::Stay),
            "to_waiting" => return Ok(Self::ToWaiting),
            "cruise" => return Ok(Self::CruiseNearby(2000.0)),
            _ => {}
        }
        let side = s
            .strip_prefix("cruise(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown strategy `{s}`"))?;
        let side: f64 = side.trim().parse().map_err(|_| format!("bad side length `{side}`"))?;
        if !(side > 0.0 && side.is_finite()) {
            return Err(format!("side length must be positive, got {side}"));
        }
        Ok(Self::CruiseNearby(side))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositionMove {
    pub vehicle: VehicleId,
    pub target: NodeId,
    /// The waiting passenger this move answers, for `ToWaiting`.
    pub request: Option<RequestId>,
    pub cost: Cost,
}

/// Each vehicle appears at most once; `total_distance` is the sum of move costs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepositionPlan {
    pub moves: Vec<RepositionMove>,
    pub total_distance: Cost,
}

impl RepositionPlan {
    fn from_moves(moves: Vec<RepositionMove>) -> Self {
        let total_distance = moves.iter().map(|m| m.cost).sum();
        Self { moves, total_distance }
    }
}

pub fn plan_stay(_idle: &[(VehicleId, NodeId)]) -> RepositionPlan {
    RepositionPlan::default()
}

/// Each vehicle draws a target uniformly among the other nodes whose
/// shortest physical distance is at most `side_m / 2`. A vehicle with no
/// such node stays.
pub fn plan_cruise<R: Rng>(net: &RoadNetwork, idle: &[(VehicleId, NodeId)], side_m: f64, rng: &mut R) -> RepositionPlan {
    let limit = (side_m * 500.0).round() as Cost;
    let mut moves = Vec::new();
    for &(vehicle, at) in idle {
        let ball = net.ball(at, limit, Metric::Length);
        let others: Vec<NodeId> = ball.nodes.iter().map(|&(n, _)| n).filter(|&n| n != at).collect();
        if others.is_empty() {
            continue;
        }
        let target = others[rng.random_range(0..others.len())];
        let cost = ball
            .path_edges(net, target)
            .expect("ball node has a path")
            .iter()
            .map(|&e| net.weight(e))
            .sum();
        moves.push(RepositionMove {
            vehicle,
            target,
            request: None,
            cost,
        });
    }
    RepositionPlan::from_moves(moves)
}

/// Sends idle vehicles to unmatched waiting passengers: a maximum-cardinality
/// matching of minimum total approach cost. Two passengers at one node are
/// separate columns, so a node can draw several vehicles.
pub fn plan_to_waiting<O: CostOracle + ?Sized>(
    oracle: &O,
    idle: &[(VehicleId, NodeId)],
    waiting: &[(RequestId, NodeId)],
) -> RepositionPlan {
    if idle.is_empty() || waiting.is_empty() {
        return RepositionPlan::default();
    }
    let matrix: Vec<Vec<Option<Cost>>> = idle
        .par_iter()
        .map(|&(_, from)| waiting.iter().map(|&(_, to)| oracle.cost(from, to)).collect())
        .collect();
    let matching = min_cost_max_matching(&matrix);
    let moves = matching
        .pairs
        .iter()
        .map(|&(v, w)| RepositionMove {
            vehicle: idle[v].0,
            target: waiting[w].1,
            request: Some(waiting[w].0),
            cost: matrix[v][w].expect("matched pairs are reachable"),
        })
        .collect();
    RepositionPlan::from_moves(moves)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching<C> {
    /// (row, column), ascending by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: C,
}

/// Among all matchings of maximum cardinality, one with minimum total cost.
/// `None` entries are forbidden pairs. Costs may be negative.
///
/// Successive shortest augmenting paths with node potentials; each
/// augmentation keeps the matching cost-minimal for its cardinality, and the
/// search stops when no augmenting path remains.
pub fn min_cost_max_matching<C: Scalar>(cost: &[Vec<Option<C>>]) -> Matching<C> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");

    let mut row_match: Vec<Option<usize>> = vec![None; rows];
    let mut col_match: Vec<Option<usize>> = vec![None; cols];
    // Reduced cost of row→col is c + pot_row − pot_col, kept non-negative.
    let mut pot_row = vec![C::zero(); rows];
    let mut pot_col: Vec<C> = (0..cols)
        .map(|j| {
            (0..rows)
                .filter_map(|i| cost[i][j])
                .fold(None, |m: Option<C>, c| Some(m.map_or(c, |m| C::min_of(m, c))))
                .unwrap_or_else(C::zero)
        })
        .collect();

    // Node numbering: rows 0..rows, columns rows..rows+cols, then a sink fed
    // by every free column. The sink potential stays at or below every free
    // column's, so sink arcs keep non-negative reduced cost.
    let n = rows + cols;
    let sink = n;
    let mut pot_sink = pot_col.iter().copied().fold(C::zero(), |m, p| if p < m { p } else { m });
    loop {
        let mut dist: Vec<Option<C>> = vec![None; n + 1];
        let mut done = vec![false; n + 1];
        let mut parent: Vec<Option<usize>> = vec![None; n + 1];
        for i in 0..rows {
            if row_match[i].is_none() {
                dist[i] = Some(C::zero());
            }
        }
        let mut reached = None;
        loop {
            let mut best: Option<(C, usize)> = None;
            for u in 0..=n {
                if done[u] {
                    continue;
                }
                if let Some(d) = dist[u] {
                    if best.is_none_or(|(b, _)| d < b) {
                        best = Some((d, u));
                    }
                }
            }
            let Some((d, u)) = best else { break };
            done[u] = true;
            if u == sink {
                reached = Some(d);
                break;
            }
            if u >= rows {
                let j = u - rows;
                match col_match[j] {
                    None => {
                        let nd = d + pot_col[j] - pot_sink;
                        relax(&mut dist, &mut parent, &done, sink, nd, u);
                    }
                    Some(i) => {
                        let c = cost[i][j].expect("matched pair is allowed");
                        let nd = d + (C::zero() - c) + pot_col[j] - pot_row[i];
                        relax(&mut dist, &mut parent, &done, i, nd, u);
                    }
                }
            } else {
                let i = u;
                for j in 0..cols {
                    if row_match[i] == Some(j) {
                        continue;
                    }
                    if let Some(c) = cost[i][j] {
                        let nd = d + c + pot_row[i] - pot_col[j];
                        relax(&mut dist, &mut parent, &done, rows + j, nd, u);
                    }
                }
            }
        }
        let Some(big_d) = reached else { break };

        let cap = |d: Option<C>| match d {
            Some(d) if d < big_d => d,
            _ => big_d,
        };
        for i in 0..rows {
            pot_row[i] = pot_row[i] + cap(dist[i]);
        }
        for j in 0..cols {
            pot_col[j] = pot_col[j] + cap(dist[rows + j]);
        }
        pot_sink = pot_sink + big_d;

        // Flip the path: column nodes gain their parent row.
        let mut at = parent[sink].expect("sink has a parent");
        while let Some(p) = parent[at] {
            if at >= rows {
                let j = at - rows;
                col_match[j] = Some(p);
                row_match[p] = Some(j);
            }
            at = p;
        }
    }

    let mut pairs: Vec<(usize, usize)> = row_match.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    pairs.sort_unstable();
    let total = pairs
        .iter()
        .fold(C::zero(), |acc, &(i, j)| acc + cost[i][j].expect("matched pair is allowed"));
    Matching { pairs, total }
}

fn relax<C: Scalar>(dist: &mut [Option<C>], parent: &mut [Option<usize>], done: &[bool], v: usize, nd: C, from: usize) {
    if done[v] {
        return;
    }
    if dist[v].is_none_or(|d| nd < d) {
        dist[v] = Some(nd);
        parent[v] = Some(from);
    }
}
