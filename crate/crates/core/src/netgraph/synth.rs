//! Synthetic networks: square grids and random strongly connected graphs.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{RawEdge, RawNode, RoadNetwork, WeightMode};

/// `rows × cols` grid with two-way streets `spacing_m` apart.
/// Node `r * cols + c` sits at row `r`, column `c`.
pub fn grid(rows: usize, cols: usize, spacing_m: f64, speed_mps: f64, mode: WeightMode) -> RoadNetwork {
    assert!(rows > 0 && cols > 0);
    // ~111 km per degree; good enough for plotting.
    let deg = spacing_m / 111_000.0;
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(RawNode {
                id: (r * cols + c) as u64,
                lat: r as f64 * deg,
                lon: c as f64 * deg,
            });
        }
    }
    let mut edges = Vec::new();
    let mut link = |a: usize, b: usize| {
        for (from, to) in [(a, b), (b, a)] {
            edges.push(RawEdge {
                from: from as u64,
                to: to as u64,
                length_m: spacing_m,
                speed_mps,
            });
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                link(id, id + 1);
            }
            if r + 1 < rows {
                link(id, id + cols);
            }
        }
    }
    RoadNetwork::from_parts(nodes, edges, mode).expect("grid is well formed")
}

/// Random planar-ish graph: `n` points in a 10 km square, a random
/// Hamiltonian cycle (for strong connectivity) plus two-way links to each
/// node's `k` nearest neighbours. Lengths are Euclidean (at least 1 m),
/// speeds drawn from 8–20 m/s.
pub fn random_connected<R: Rng>(n: usize, k: usize, rng: &mut R, mode: WeightMode) -> RoadNetwork {
    assert!(n >= 2);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..10_000.0), rng.random_range(0.0..10_000.0)))
        .collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
        (dx * dx + dy * dy).sqrt().max(1.0)
    };
    let nodes = pts
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| RawNode {
            id: i as u64,
            lat: y / 111_000.0,
            lon: x / 111_000.0,
        })
        .collect();
    let mut edges = Vec::new();
    let mut push = |rng: &mut R, a: usize, b: usize| {
        edges.push(RawEdge {
            from: a as u64,
            to: b as u64,
            length_m: dist(a, b),
            speed_mps: rng.random_range(8.0..20.0),
        });
    };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    for i in 0..n {
        push(rng, perm[i], perm[(i + 1) % n]);
    }
    for a in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        others.sort_by(|&x, &y| dist(a, x).total_cmp(&dist(a, y)).then(x.cmp(&y)));
        for &b in others.iter().take(k) {
            push(rng, a, b);
            push(rng, b, a);
        }
    }
    RoadNetwork::from_parts(nodes, edges, mode).expect("generated graph is well formed")
}
