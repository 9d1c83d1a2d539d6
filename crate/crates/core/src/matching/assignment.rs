//! Exact trip–vehicle assignment (weighted set packing).
//!
//! Maximize the total utility of chosen candidates such that each vehicle
//! takes at most one trip and each request is served at most once.
//!
//! Candidates with non-positive utility never improve a solution and are
//! dropped up front. The rest split into independent components (linked by
//! shared vehicles or requests), each solved by depth-first branch and bound
//! over candidates in input order, include-before-exclude. Visiting in that
//! order means the first optimum found is the lexicographically smallest
//! index set, which is the tie-break. The bound is the smaller of two
//! relaxations: best remaining candidate per free vehicle, and best
//! remaining per-request share of utility per free request.

use serde::{Deserialize, Serialize};

use super::CandidateMatch;
use crate::demand::RequestId;
use crate::Scalar;

/// Default search budget per component, in branch-and-bound nodes.
pub const DEFAULT_NODE_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment<U> {
    /// Indices into the candidate list, ascending.
    pub chosen: Vec<usize>,
    pub objective: U,
    /// False only if some component hit the node limit; `chosen` is then the
    /// best solution found, not necessarily optimal.
    pub proven_optimal: bool,
}

impl<U: Scalar> Assignment<U> {
    pub fn empty() -> Self {
        Self {
            chosen: Vec::new(),
            objective: U::zero(),
            proven_optimal: true,
        }
    }
}

/// One candidate reduced to what the solver needs. Vehicles and requests are
/// dense local indices.
#[derive(Debug, Clone)]
struct Item<U> {
    index: usize,
    vehicle: usize,
    requests: Vec<usize>,
    utility: U,
}

pub fn solve_assignment<U: Scalar>(candidates: &[CandidateMatch<U>]) -> Assignment<U> {
    solve_assignment_with_limit(candidates, DEFAULT_NODE_LIMIT)
}

pub fn solve_assignment_with_limit<U: Scalar>(candidates: &[CandidateMatch<U>], node_limit: u64) -> Assignment<U> {
    let raw: Vec<(u64, Vec<RequestId>, U)> = candidates
        .iter()
        .map(|c| (u64::from(c.vehicle.0), c.trip.requests.clone(), c.utility))
        .collect();
    solve_packing(&raw, node_limit)
}

/// Solver entry point over `(vehicle, requests, utility)` triples.
pub fn solve_packing<U: Scalar>(candidates: &[(u64, Vec<RequestId>, U)], node_limit: u64) -> Assignment<U> {
    use std::collections::HashMap;

    let mut veh_ix: HashMap<u64, usize> = HashMap::new();
    let mut req_ix: HashMap<RequestId, usize> = HashMap::new();
    let mut items = Vec::new();
    for (index, (v, reqs, u)) in candidates.iter().enumerate() {
        // Also drops NaN utilities.
        if u.partial_cmp(&U::zero()) != Some(std::cmp::Ordering::Greater) {
            continue;
        }
        let nv = veh_ix.len();
        let vehicle = *veh_ix.entry(*v).or_insert(nv);
        let mut requests: Vec<usize> = reqs
            .iter()
            .map(|r| {
                let nr = req_ix.len();
                *req_ix.entry(*r).or_insert(nr)
            })
            .collect();
        requests.sort_unstable();
        requests.dedup();
        items.push(Item {
            index,
            vehicle,
            requests,
            utility: *u,
        });
    }

    let mut chosen = Vec::new();
    let mut proven = true;
    for comp in components(&items, veh_ix.len(), req_ix.len()) {
        let local: Vec<Item<U>> = comp.iter().map(|&k| items[k].clone()).collect();
        let (picked, exact) = BranchAndBound::new(local, node_limit).run();
        proven &= exact;
        chosen.extend(picked);
    }
    chosen.sort_unstable();
    let objective = chosen.iter().fold(U::zero(), |acc, &i| acc + candidates[i].2);
    Assignment {
        chosen,
        objective,
        proven_optimal: proven,
    }
}

/// Groups item positions into connected components; each group is ascending.
fn components<U>(items: &[Item<U>], nv: usize, nr: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..nv + nr).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for it in items {
        let a = find(&mut parent, it.vehicle);
        for &r in &it.requests {
            let b = find(&mut parent, nv + r);
            if a != b {
                let a = find(&mut parent, a);
                parent[b] = a;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut first_of_root: std::collections::HashMap<usize, usize> = Default::default();
    for (k, it) in items.iter().enumerate() {
        let root = find(&mut parent, it.vehicle);
        let key = *first_of_root.entry(root).or_insert(k);
        groups.entry(key).or_default().push(k);
    }
    groups.into_values().collect()
}

/// Suffix maxima of a per-key value over item positions.
struct SuffixMax<U> {
    /// positions of items touching each key, ascending
    positions: Vec<Vec<usize>>,
    /// `max[k][j]` = max value over `positions[k][j..]`
    max: Vec<Vec<U>>,
    /// Σ over keys of their suffix max at each position (len n + 1)
    total: Vec<U>,
}

impl<U: Scalar> SuffixMax<U> {
    fn build(n: usize, keys: usize, touches: impl Fn(usize) -> Vec<(usize, U)>) -> Self {
        let mut positions = vec![Vec::new(); keys];
        let mut values = vec![Vec::new(); keys];
        for i in 0..n {
            for (k, v) in touches(i) {
                positions[k].push(i);
                values[k].push(v);
            }
        }
        let max: Vec<Vec<U>> = values
            .iter()
            .map(|vals| {
                let mut out = vals.clone();
                for j in (0..out.len().saturating_sub(1)).rev() {
                    out[j] = out[j].max_of(out[j + 1]);
                }
                out
            })
            .collect();
        let mut s = Self {
            positions,
            max,
            total: vec![U::zero(); n + 1],
        };
        // Walking backwards, a key's contribution changes only at its own positions.
        let mut current = vec![U::zero(); keys];
        let mut sum = U::zero();
        for i in (0..n).rev() {
            for (k, _) in touches(i) {
                let j = s.positions[k].partition_point(|&p| p < i);
                let now = s.max[k][j];
                sum = sum - current[k] + now;
                current[k] = now;
            }
            s.total[i] = sum;
        }
        s
    }

    /// Contribution of `key` from position `i` on.
    fn at(&self, key: usize, i: usize) -> U {
        let pos = &self.positions[key];
        let j = pos.partition_point(|&p| p < i);
        if j < pos.len() {
            self.max[key][j]
        } else {
            U::zero()
        }
    }
}

struct BranchAndBound<U> {
    items: Vec<Item<U>>,
    vehicle_bound: SuffixMax<U>,
    request_bound: SuffixMax<U>,
    node_limit: u64,
}

impl<U: Scalar> BranchAndBound<U> {
    fn new(mut items: Vec<Item<U>>, node_limit: u64) -> Self {
        // Dense keys local to the component.
        let mut vmap = std::collections::HashMap::new();
        let mut rmap = std::collections::HashMap::new();
        for it in &mut items {
            let nv = vmap.len();
            it.vehicle = *vmap.entry(it.vehicle).or_insert(nv);
            for r in &mut it.requests {
                let nr = rmap.len();
                *r = *rmap.entry(*r).or_insert(nr);
            }
        }
        let n = items.len();
        let vehicle_bound = SuffixMax::build(n, vmap.len(), |i| vec![(items[i].vehicle, items[i].utility)]);
        let request_bound = SuffixMax::build(n, rmap.len(), |i| {
            let share = items[i].utility.share_up(items[i].requests.len().max(1));
            items[i].requests.iter().map(|&r| (r, share)).collect()
        });
        Self {
            items,
            vehicle_bound,
            request_bound,
            node_limit,
        }
    }

    fn greedy(&self, nv: usize, nr: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by(|&a, &b| {
            self.items[b]
                .utility
                .partial_cmp(&self.items[a].utility)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut used_v = vec![false; nv];
        let mut used_r = vec![false; nr];
        let mut out = Vec::new();
        for i in order {
            let it = &self.items[i];
            if !used_v[it.vehicle] && it.requests.iter().all(|&r| !used_r[r]) {
                used_v[it.vehicle] = true;
                for &r in &it.requests {
                    used_r[r] = true;
                }
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }

    fn value_of(&self, set: &[usize]) -> U {
        set.iter().fold(U::zero(), |acc, &i| acc + self.items[i].utility)
    }

    /// Returns chosen original indices and whether optimality was proven.
    fn run(self) -> (Vec<usize>, bool) {
        let n = self.items.len();
        let nv = self.vehicle_bound.positions.len();
        let nr = self.request_bound.positions.len();
        if n == 1 {
            return (vec![self.items[0].index], true);
        }

        let mut best = self.greedy(nv, nr);
        let mut best_value = self.value_of(&best);
        let mut best_from_search = false;

        let mut used_v = vec![false; nv];
        let mut used_r = vec![false; nr];
        let mut used_v_list: Vec<usize> = Vec::new();
        let mut used_r_list: Vec<usize> = Vec::new();
        // Decision stack: (position, included)
        let mut stack: Vec<(usize, bool)> = Vec::with_capacity(n);
        let mut chosen: Vec<usize> = Vec::new();
        let mut value = U::zero();
        let mut i = 0usize;
        let mut nodes = 0u64;
        let mut exact = true;

        'search: loop {
            // Descend from position i.
            let prune = if i == n {
                let better = value > best_value
                    || (value == best_value && !best_from_search && chosen.as_slice() < best.as_slice());
                if better {
                    best = chosen.clone();
                    best_value = value;
                    best_from_search = true;
                }
                true
            } else {
                nodes += 1;
                if nodes > self.node_limit {
                    exact = false;
                    break 'search;
                }
                let vb = used_v_list
                    .iter()
                    .fold(self.vehicle_bound.total[i], |acc, &v| acc - self.vehicle_bound.at(v, i));
                let rb = used_r_list
                    .iter()
                    .fold(self.request_bound.total[i], |acc, &r| acc - self.request_bound.at(r, i));
                let ub = value + vb.min_of(rb);
                if ub < best_value {
                    true
                } else if ub == best_value {
                    best_from_search || !lex_can_beat(&chosen, &best, i)
                } else {
                    false
                }
            };

            if !prune {
                let it = &self.items[i];
                if !used_v[it.vehicle] && it.requests.iter().all(|&r| !used_r[r]) {
                    used_v[it.vehicle] = true;
                    used_v_list.push(it.vehicle);
                    for &r in &it.requests {
                        used_r[r] = true;
                        used_r_list.push(r);
                    }
                    value = value + it.utility;
                    chosen.push(i);
                    stack.push((i, true));
                } else {
                    stack.push((i, false));
                }
                i += 1;
                continue;
            }

            // Backtrack to the deepest inclusion and flip it to exclusion.
            loop {
                match stack.pop() {
                    None => break 'search,
                    Some((p, false)) => {
                        let _ = p;
                    }
                    Some((p, true)) => {
                        let it = &self.items[p];
                        used_v[it.vehicle] = false;
                        used_v_list.pop();
                        for &r in &it.requests {
                            used_r[r] = false;
                            used_r_list.pop();
                        }
                        value = value - it.utility;
                        chosen.pop();
                        stack.push((p, false));
                        i = p + 1;
                        continue 'search;
                    }
                }
            }
        }
        if !exact {
            log::warn!(
                "assignment search stopped after {} nodes on a component of {} candidates; using best found",
                self.node_limit,
                n
            );
        }
        (best.into_iter().map(|k| self.items[k].index).collect(), exact)
    }
}

/// Whether some completion of `chosen` (fixed below position `i`) can be
/// lexicographically smaller than `best`.
fn lex_can_beat(chosen: &[usize], best: &[usize], i: usize) -> bool {
    let prefix: Vec<usize> = best.iter().copied().filter(|&b| b < i).collect();
    for (a, b) in chosen.iter().zip(&prefix) {
        if a != b {
            return a < b;
        }
    }
    // Longer: `chosen` has an element below i where `best` continues at or
    // above i. Shorter: the reverse. Equal: completions may still tie or win.
    chosen.len() >= prefix.len()
}
