//! Candidate trips per vehicle and their assignment.

mod assignment;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{Mode, RequestId, VehicleId};
use crate::netgraph::CostOracle;
use crate::routing::{nn_route, Rider, Route, RouteContext};
use crate::{Cost, Millis, Money};

pub use assignment::{solve_assignment, solve_assignment_with_limit, solve_packing, Assignment, DEFAULT_NODE_LIMIT};

/// A set of requests served together along one route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    /// Ascending.
    pub requests: Vec<RequestId>,
    pub route: Route,
}

impl Trip {
    /// A trip without a route, for solver-only use.
    pub fn bare(mut requests: Vec<RequestId>) -> Self {
        requests.sort_unstable();
        Self {
            requests,
            route: Route::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch<U> {
    pub vehicle: VehicleId,
    pub trip: Trip,
    pub utility: U,
    pub cost: U,
}

/// Operating cost charged against a match's revenue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Currency per network cost unit (per millimetre or per millisecond).
    pub per_unit: f64,
    /// Currency per millisecond already waited, summed over the trip's new
    /// requests. Zero disables the waiting-time priority.
    pub wait_bonus_per_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        // 0.5 per km in distance mode.
        Self {
            per_unit: 0.5e-6,
            wait_bonus_per_ms: 0.0,
        }
    }
}

/// Matching-side view of a vehicle.
#[derive(Debug, Clone)]
pub struct VehicleView {
    pub id: VehicleId,
    pub ctx: RouteContext,
    /// Carries a solo passenger: no pooling allowed.
    pub exclusive: bool,
    /// Remaining cost of the vehicle's current plan, offset included.
    pub current_plan_cost: Cost,
}

impl VehicleView {
    /// Idle or repositioning: nobody aboard, nobody scheduled.
    pub fn is_free(&self) -> bool {
        self.ctx.onboard.is_empty() && self.ctx.scheduled.is_empty()
    }

    fn committed(&self) -> usize {
        self.ctx.onboard.len() + self.ctx.scheduled.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PendingRequest {
    pub rider: Rider,
    pub mode: Mode,
    pub price: Money,
    pub waited: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Reach bound on approach cost from vehicle to pickup.
    pub max_pickup_cost: Cost,
    pub max_combos_per_vehicle: usize,
    /// Nearest requests considered per vehicle.
    pub max_requests_per_vehicle: usize,
    pub cost_model: CostModel,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_pickup_cost: 3_000_000,
            max_combos_per_vehicle: 200,
            max_requests_per_vehicle: 8,
            cost_model: CostModel::default(),
        }
    }
}

/// `u = Σ prices − c`, with `c` proportional to the cost the trip adds to
/// the vehicle's plan (for a free vehicle, the whole route including the
/// approach), plus the optional waiting bonus. Returns `(utility, cost)`.
pub fn match_utility(
    trip: &Trip,
    vehicle: &VehicleView,
    requests: &[&PendingRequest],
    model: &CostModel,
) -> (Money, Money) {
    let revenue: Money = requests.iter().map(|r| r.price).sum();
    let added = trip.route.total_cost - vehicle.current_plan_cost;
    let cost = model.per_unit * added as f64;
    let bonus: f64 = requests.iter().map(|r| r.waited as f64 * model.wait_bonus_per_ms).sum();
    (revenue - cost + bonus, cost)
}

/// Candidate trips for every vehicle, grouped by vehicle in input order.
///
/// A vehicle considers the nearest `max_requests_per_vehicle` requests
/// within `max_pickup_cost`. Solo requests only go to free vehicles and only
/// alone. Shared trips grow one request at a time; a k-request combination
/// is routed only if every (k−1)-subset was feasible with this vehicle.
/// Trip size is bounded by the seats not yet committed.
pub fn build_candidates<O: CostOracle + ?Sized>(
    oracle: &O,
    vehicles: &[VehicleView],
    pending: &[PendingRequest],
    params: &MatchParams,
) -> Vec<CandidateMatch<Money>> {
    vehicles
        .par_iter()
        .map(|v| vehicle_candidates(oracle, v, pending, params))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn vehicle_candidates<O: CostOracle + ?Sized>(
    oracle: &O,
    v: &VehicleView,
    pending: &[PendingRequest],
    params: &MatchParams,
) -> Vec<CandidateMatch<Money>> {
    let free_seats = (v.ctx.capacity as usize).saturating_sub(v.committed());
    if free_seats == 0 {
        return Vec::new();
    }
    let mut near: Vec<(Cost, &PendingRequest)> = pending
        .iter()
        .filter(|p| match p.mode {
            Mode::Solo => v.is_free(),
            Mode::Shared => !v.exclusive,
            _ => false,
        })
        .filter_map(|p| {
            let c = v.ctx.approach_offset + oracle.cost(v.ctx.anchor, p.rider.origin)?;
            (c <= params.max_pickup_cost).then_some((c, p))
        })
        .collect();
    near.sort_by_key(|(c, p)| (*c, p.rider.id));
    near.truncate(params.max_requests_per_vehicle);
    near.sort_by_key(|(_, p)| p.rider.id);
    let near: Vec<&PendingRequest> = near.into_iter().map(|(_, p)| p).collect();

    let make = |members: Vec<&PendingRequest>| -> Option<CandidateMatch<Money>> {
        let riders: Vec<Rider> = members.iter().map(|p| p.rider).collect();
        let route = nn_route(oracle, &v.ctx, &riders).into_route()?;
        let trip = Trip {
            requests: riders.iter().map(|r| r.id).collect(),
            route,
        };
        let (utility, cost) = match_utility(&trip, v, &members, &params.cost_model);
        Some(CandidateMatch {
            vehicle: v.id,
            trip,
            utility,
            cost,
        })
    };

    let mut out: Vec<CandidateMatch<Money>> = Vec::new();
    let mut feasible: HashSet<Vec<RequestId>> = HashSet::new();
    let mut level: Vec<CandidateMatch<Money>> = near.iter().filter_map(|p| make(vec![p])).collect();
    let shared_singles: Vec<&PendingRequest> = near
        .iter()
        .copied()
        .filter(|p| p.mode == Mode::Shared && feasible_single(&level, p.rider.id))
        .collect();

    let mut size = 1;
    loop {
        for c in &level {
            feasible.insert(c.trip.requests.clone());
        }
        cap(&mut level, params.max_combos_per_vehicle.saturating_sub(out.len()));
        if level.is_empty() || size >= free_seats {
            out.append(&mut level);
            break;
        }
        let mut next = Vec::new();
        let mut tried: HashSet<Vec<RequestId>> = HashSet::new();
        for c in &level {
            // Solo trips never grow.
            let last = *c.trip.requests.last().unwrap();
            if c.trip.requests.len() == 1 && !shared_singles.iter().any(|p| p.rider.id == last) {
                continue;
            }
            for p in shared_singles.iter().filter(|p| p.rider.id > last) {
                let mut ids = c.trip.requests.clone();
                ids.push(p.rider.id);
                if !tried.insert(ids.clone()) {
                    continue;
                }
                let closed = (0..ids.len()).all(|skip| {
                    let sub: Vec<RequestId> = ids
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != skip)
                        .map(|(_, r)| *r)
                        .collect();
                    feasible.contains(&sub)
                });
                if !closed {
                    continue;
                }
                let members: Vec<&PendingRequest> = ids
                    .iter()
                    .map(|id| *near.iter().find(|p| p.rider.id == *id).unwrap())
                    .collect();
                if let Some(m) = make(members) {
                    next.push(m);
                }
            }
        }
        out.append(&mut level);
        level = next;
        size += 1;
    }
    out
}

fn feasible_single(level: &[CandidateMatch<Money>], id: RequestId) -> bool {
    level.iter().any(|c| c.trip.requests == [id])
}

/// Keeps the `limit` highest-utility candidates (stable on ties).
fn cap(level: &mut Vec<CandidateMatch<Money>>, limit: usize) {
    if level.len() <= limit {
        return;
    }
    let mut idx: Vec<usize> = (0..level.len()).collect();
    idx.sort_by(|&a, &b| level[b].utility.total_cmp(&level[a].utility).then(a.cmp(&b)));
    let keep: HashSet<usize> = idx.into_iter().take(limit).collect();
    let mut k = 0;
    level.retain(|_| {
        let r = keep.contains(&k);
        k += 1;
        r
    });
}
