//! Pooled route construction and feasibility.
//!
//! [`nn_route`] is the production heuristic: from the vehicle's position,
//! always drive to the nearest eligible stop. [`enumerate_route`] searches
//! every precedence-valid order and serves as the reference it is checked
//! against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::RequestId;
use crate::netgraph::{CostOracle, NodeId};
use crate::Cost;

/// Most stops [`enumerate_route`] will permute.
pub const MAX_ENUMERATED_STOPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stop {
    pub kind: StopKind,
    pub request: RequestId,
    pub node: NodeId,
}

/// What routing needs to know about one passenger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rider {
    pub id: RequestId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub direct_cost: Cost,
    pub max_detour_ratio: f64,
    /// Latest pickup, as route cost from the vehicle's position (approach
    /// included). `None` places no bound.
    pub pickup_deadline: Option<Cost>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnboardRider {
    pub rider: Rider,
    /// In-vehicle cost already accrued, including any edge in progress.
    pub ride_cost_so_far: Cost,
}

/// Routing view of a vehicle.
///
/// `anchor` is the first node the vehicle can change course at (the head of
/// the edge it is on, or its current node) and `approach_offset` the cost
/// left before reaching it.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteContext {
    pub anchor: NodeId,
    pub approach_offset: Cost,
    pub capacity: u32,
    pub onboard: Vec<OnboardRider>,
    pub scheduled: Vec<Rider>,
}

impl RouteContext {
    pub fn empty_at(anchor: NodeId, capacity: u32) -> Self {
        Self {
            anchor,
            approach_offset: 0,
            capacity,
            onboard: Vec::new(),
            scheduled: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Route {
    pub stops: Vec<Stop>,
    /// `leg_costs[0]` runs from the anchor to the first stop.
    pub leg_costs: Vec<Cost>,
    pub approach_offset: Cost,
    pub total_cost: Cost,
}

impl Route {
    fn position(&self, id: RequestId, kind: StopKind) -> Option<usize> {
        self.stops.iter().position(|s| s.request == id && s.kind == kind)
    }

    /// Cost from the anchor to the end of stop `idx`'s leg.
    fn cum(&self, idx: usize) -> Cost {
        self.leg_costs[..=idx].iter().sum()
    }

    /// In-route cost between a request's pickup and dropoff; from the anchor
    /// when the route has only its dropoff.
    pub fn ride_cost(&self, id: RequestId) -> Option<Cost> {
        let d = self.position(id, StopKind::Dropoff)?;
        match self.position(id, StopKind::Pickup) {
            Some(p) if p < d => Some(self.cum(d) - self.cum(p)),
            Some(_) => None,
            None => Some(self.cum(d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Detour(RequestId),
    /// The route reaches this passenger's origin after their deadline.
    PickupDeadline(RequestId),
    Capacity,
    Precedence,
    /// Some stop cannot be reached from where the vehicle would be.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityReport {
    Feasible(Route),
    Infeasible {
        violated: Violation,
        /// The route that was evaluated, when one was built.
        route: Option<Route>,
    },
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Feasible(_))
    }

    pub fn route(&self) -> Option<&Route> {
        match self {
            Self::Feasible(r) => Some(r),
            Self::Infeasible { route, .. } => route.as_ref(),
        }
    }

    pub fn into_route(self) -> Option<Route> {
        match self {
            Self::Feasible(r) => Some(r),
            Self::Infeasible { .. } => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("{0} stops exceed the enumeration limit of {MAX_ENUMERATED_STOPS}")]
    TooManyStops(usize),
    #[error("request {0:?} is not on the route")]
    RequestNotOnRoute(RequestId),
}

/// `(ride − direct) / direct`, clamped at zero.
pub fn detour_ratio_of(ride_cost: Cost, direct_cost: Cost) -> f64 {
    if direct_cost <= 0 {
        return 0.0;
    }
    ((ride_cost - direct_cost) as f64 / direct_cost as f64).max(0.0)
}

/// Whether a ride of `ride_cost` honours a detour bound. The single rule
/// used by routing, the engine and trace checks.
pub fn within_detour(ride_cost: Cost, direct_cost: Cost, max_ratio: f64) -> bool {
    detour_ratio_of(ride_cost, direct_cost) <= max_ratio
}

/// Detour ratio of `rider` along `route`; `prior` is the cost already ridden
/// before the anchor (zero unless the rider is on board).
pub fn detour_ratio(route: &Route, rider: &Rider, prior: Cost) -> Result<f64, RoutingError> {
    let ride = route.ride_cost(rider.id).ok_or(RoutingError::RequestNotOnRoute(rider.id))?;
    Ok(detour_ratio_of(prior + ride, rider.direct_cost))
}

/// Passenger bookkeeping shared by both route builders.
struct Plan {
    /// (rider, prior cost, picked up at start)
    riders: Vec<(Rider, Cost, bool)>,
    capacity: u32,
    start_load: u32,
}

impl Plan {
    fn new(ctx: &RouteContext, new: &[Rider]) -> Self {
        let mut riders: Vec<(Rider, Cost, bool)> = ctx
            .onboard
            .iter()
            .map(|o| (o.rider, o.ride_cost_so_far, true))
            .chain(ctx.scheduled.iter().chain(new).map(|r| (*r, 0, false)))
            .collect();
        riders.sort_by_key(|r| r.0.id);
        Self {
            riders,
            capacity: ctx.capacity,
            start_load: ctx.onboard.len() as u32,
        }
    }

    fn stop_count(&self) -> usize {
        self.riders.iter().map(|r| if r.2 { 1 } else { 2 }).sum()
    }

    /// Lowest-id rider whose ride exceeds its bound, given per-rider ride costs.
    fn detour_violation(&self, rides: &[Cost]) -> Option<RequestId> {
        self.riders
            .iter()
            .zip(rides)
            .find(|((r, prior, _), &ride)| !within_detour(prior + ride, r.direct_cost, r.max_detour_ratio))
            .map(|((r, _, _), _)| r.id)
    }

    /// Lowest-id rider picked up after its deadline, given pickup costs
    /// measured from the vehicle's position.
    fn deadline_violation(&self, pickups: &[Cost], offset: Cost) -> Option<RequestId> {
        self.riders
            .iter()
            .zip(pickups)
            .find(|((r, _, onboard), &at)| !onboard && !meets_deadline(r, offset + at))
            .map(|((r, _, _), _)| r.id)
    }
}

fn meets_deadline(r: &Rider, pickup_cost: Cost) -> bool {
    r.pickup_deadline.is_none_or(|d| pickup_cost <= d)
}

/// Search state: which stops are done and where the vehicle is.
#[derive(Clone)]
struct Walk {
    at: NodeId,
    load: u32,
    /// 0 = waiting for pickup, 1 = on board, 2 = delivered
    phase: Vec<u8>,
    pickup_cum: Vec<Cost>,
    ride: Vec<Cost>,
    cum: Cost,
    stops: Vec<Stop>,
    legs: Vec<Cost>,
}

impl Walk {
    fn start(plan: &Plan, anchor: NodeId) -> Self {
        let n = plan.riders.len();
        Self {
            at: anchor,
            load: plan.start_load,
            phase: plan.riders.iter().map(|r| u8::from(r.2)).collect(),
            pickup_cum: vec![0; n],
            ride: vec![0; n],
            cum: 0,
            stops: Vec::new(),
            legs: Vec::new(),
        }
    }

    /// Eligible next stops in tie-break order: request id, pickup first.
    fn eligible<'a>(&'a self, plan: &'a Plan) -> impl Iterator<Item = (usize, Stop)> + 'a {
        plan.riders.iter().enumerate().filter_map(move |(i, (r, _, _))| match self.phase[i] {
            0 if self.load < plan.capacity => Some((
                i,
                Stop {
                    kind: StopKind::Pickup,
                    request: r.id,
                    node: r.origin,
                },
            )),
            1 => Some((
                i,
                Stop {
                    kind: StopKind::Dropoff,
                    request: r.id,
                    node: r.destination,
                },
            )),
            _ => None,
        })
    }

    fn visit(&mut self, i: usize, stop: Stop, leg: Cost) {
        self.cum += leg;
        self.at = stop.node;
        match stop.kind {
            StopKind::Pickup => {
                self.phase[i] = 1;
                self.load += 1;
                self.pickup_cum[i] = self.cum;
            }
            StopKind::Dropoff => {
                self.phase[i] = 2;
                self.load -= 1;
                self.ride[i] = self.cum - self.pickup_cum[i];
            }
        }
        self.stops.push(stop);
        self.legs.push(leg);
    }

    fn done(&self) -> bool {
        self.phase.iter().all(|&p| p == 2)
    }

    fn into_route(self, offset: Cost) -> Route {
        Route {
            stops: self.stops,
            leg_costs: self.legs,
            approach_offset: offset,
            total_cost: offset + self.cum,
        }
    }
}

/// Nearest-neighbour route for `ctx` plus `new_requests`.
///
/// Repeatedly drives to the cheapest eligible stop: drop-offs of riders on
/// board, and pickups while a seat is free. Equal costs go to the lower
/// request id, pickup before drop-off. The finished route is then checked
/// against every rider's detour bound, including riders already on board,
/// and every pickup deadline.
pub fn nn_route<O: CostOracle + ?Sized>(oracle: &O, ctx: &RouteContext, new_requests: &[Rider]) -> FeasibilityReport {
    let plan = Plan::new(ctx, new_requests);
    if plan.start_load > plan.capacity {
        return FeasibilityReport::Infeasible {
            violated: Violation::Capacity,
            route: None,
        };
    }
    let mut walk = Walk::start(&plan, ctx.anchor);
    while !walk.done() {
        let mut best: Option<(Cost, usize, Stop)> = None;
        let mut any = false;
        for (i, stop) in walk.eligible(&plan) {
            any = true;
            let Some(c) = oracle.cost(walk.at, stop.node) else {
                continue;
            };
            // Eligible stops arrive in tie-break order, so strict < keeps the first.
            if best.is_none_or(|(bc, _, _)| c < bc) {
                best = Some((c, i, stop));
            }
        }
        match best {
            Some((c, i, stop)) => walk.visit(i, stop, c),
            None => {
                return FeasibilityReport::Infeasible {
                    violated: if any { Violation::Unreachable } else { Violation::Capacity },
                    route: None,
                }
            }
        }
    }
    let violation = plan
        .detour_violation(&walk.ride)
        .map(Violation::Detour)
        .or_else(|| plan.deadline_violation(&walk.pickup_cum, ctx.approach_offset).map(Violation::PickupDeadline));
    let route = walk.into_route(ctx.approach_offset);
    match violation {
        None => FeasibilityReport::Feasible(route),
        Some(violated) => FeasibilityReport::Infeasible {
            violated,
            route: Some(route),
        },
    }
}

/// Minimum-cost feasible route over all precedence- and capacity-valid stop
/// orders. Among equal-cost routes the first in tie-break order wins.
pub fn enumerate_route<O: CostOracle + ?Sized>(
    oracle: &O,
    ctx: &RouteContext,
    new_requests: &[Rider],
) -> Result<FeasibilityReport, RoutingError> {
    let plan = Plan::new(ctx, new_requests);
    let n = plan.stop_count();
    if n > MAX_ENUMERATED_STOPS {
        return Err(RoutingError::TooManyStops(n));
    }
    if plan.start_load > plan.capacity {
        return Ok(FeasibilityReport::Infeasible {
            violated: Violation::Capacity,
            route: None,
        });
    }
    let mut search = Search {
        oracle,
        plan: &plan,
        best: None,
        offset: ctx.approach_offset,
        first_violation: None,
        late: None,
        unreachable: false,
    };
    search.dfs(Walk::start(&plan, ctx.anchor));
    Ok(match search.best {
        Some(w) => FeasibilityReport::Feasible(w.into_route(ctx.approach_offset)),
        None => FeasibilityReport::Infeasible {
            violated: match (search.first_violation, search.late, search.unreachable) {
                (Some(id), _, _) => Violation::Detour(id),
                (None, Some(id), _) => Violation::PickupDeadline(id),
                (None, None, true) => Violation::Unreachable,
                _ => Violation::Capacity,
            },
            route: None,
        },
    })
}

struct Search<'a, O: ?Sized> {
    oracle: &'a O,
    plan: &'a Plan,
    best: Option<Walk>,
    offset: Cost,
    first_violation: Option<RequestId>,
    late: Option<RequestId>,
    unreachable: bool,
}

impl<O: CostOracle + ?Sized> Search<'_, O> {
    fn dfs(&mut self, walk: Walk) {
        if walk.done() {
            if self.best.as_ref().is_none_or(|b| walk.cum < b.cum) {
                self.best = Some(walk);
            }
            return;
        }
        let next: Vec<(usize, Stop)> = walk.eligible(self.plan).collect();
        for (i, stop) in next {
            let Some(c) = self.oracle.cost(walk.at, stop.node) else {
                self.unreachable = true;
                continue;
            };
            if self.best.as_ref().is_some_and(|b| walk.cum + c >= b.cum) {
                continue;
            }
            let mut w = walk.clone();
            w.visit(i, stop, c);
            let (r, prior, _) = &self.plan.riders[i];
            match stop.kind {
                StopKind::Pickup if !meets_deadline(r, self.offset + w.cum) => {
                    self.late = Some(self.late.map_or(r.id, |v| v.min(r.id)));
                    continue;
                }
                StopKind::Dropoff if !within_detour(prior + w.ride[i], r.direct_cost, r.max_detour_ratio) => {
                    self.first_violation = Some(self.first_violation.map_or(r.id, |v| v.min(r.id)));
                    continue;
                }
                _ => {}
            }
            self.dfs(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{synth, RoadNetwork, WeightMode};

    fn line() -> RoadNetwork {
        // 0 - 1 - 2 - 3, 100 m apart
        synth::grid(1, 4, 100.0, 10.0, WeightMode::Distance)
    }

    fn rider(net: &RoadNetwork, id: u64, o: u32, d: u32, bound: f64) -> Rider {
        Rider {
            id: RequestId(id),
            origin: NodeId(o),
            destination: NodeId(d),
            direct_cost: net.shortest_cost(NodeId(o), NodeId(d)).unwrap(),
            max_detour_ratio: bound,
            pickup_deadline: None,
        }
    }

    #[test]
    fn single_request_has_zero_detour() {
        let net = line();
        let r = rider(&net, 1, 1, 3, 0.0);
        let ctx = RouteContext::empty_at(NodeId(0), 4);
        let rep = nn_route(&net, &ctx, &[r]);
        let route = rep.route().unwrap().clone();
        assert!(rep.is_feasible());
        assert_eq!(route.stops.len(), 2);
        assert_eq!(route.stops[0].kind, StopKind::Pickup);
        assert_eq!(detour_ratio(&route, &r, 0).unwrap(), 0.0);
        assert_eq!(route.total_cost, 300_000);
        assert_eq!(enumerate_route(&net, &ctx, &[r]).unwrap(), rep);
    }

    #[test]
    fn zero_tolerance_blocks_lengthening_pool() {
        let net = synth::grid(3, 3, 100.0, 10.0, WeightMode::Distance);
        // 0 → 2 along the top row; the second rider pulls the vehicle down to row 1.
        let a = rider(&net, 1, 0, 2, 0.0);
        let b = rider(&net, 2, 3, 5, 1.0);
        let ctx = RouteContext::empty_at(NodeId(0), 4);
        match nn_route(&net, &ctx, &[a, b]) {
            FeasibilityReport::Infeasible { violated, .. } => assert_eq!(violated, Violation::Detour(RequestId(1))),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn pickup_deadline_rules_out_serving_in_turn() {
        let net = line();
        // Serving 1 (0 → 1) and then 2 (3 → 2) one after the other is detour
        // free, but reaches 2's origin at 300 m.
        let a = rider(&net, 1, 0, 1, 0.0);
        let mut b = rider(&net, 2, 3, 2, 0.0);
        let ctx = RouteContext::empty_at(NodeId(0), 1);
        assert!(enumerate_route(&net, &ctx, &[a, b]).unwrap().is_feasible());
        b.pickup_deadline = Some(299_999);
        for rep in [nn_route(&net, &ctx, &[a, b]), enumerate_route(&net, &ctx, &[a, b]).unwrap()] {
            match rep {
                FeasibilityReport::Infeasible { violated, .. } => {
                    assert_eq!(violated, Violation::PickupDeadline(RequestId(2)))
                }
                other => panic!("expected a late pickup, got {other:?}"),
            }
        }
        b.pickup_deadline = Some(300_000);
        assert!(nn_route(&net, &ctx, &[a, b]).is_feasible());
    }

    #[test]
    fn deadline_counts_the_approach_offset() {
        let net = line();
        let mut r = rider(&net, 1, 1, 3, 0.0);
        r.pickup_deadline = Some(150_000);
        let mut ctx = RouteContext::empty_at(NodeId(0), 4);
        assert!(nn_route(&net, &ctx, &[r]).is_feasible());
        ctx.approach_offset = 60_000;
        assert!(!nn_route(&net, &ctx, &[r]).is_feasible());
        assert!(!enumerate_route(&net, &ctx, &[r]).unwrap().is_feasible());
    }

    #[test]
    fn identical_itineraries_pool_without_detour() {
        let net = line();
        let (a, b) = (rider(&net, 1, 1, 3, 0.0), rider(&net, 2, 1, 3, 0.0));
        let ctx = RouteContext::empty_at(NodeId(0), 2);
        let rep = enumerate_route(&net, &ctx, &[a, b]).unwrap();
        let route = rep.route().unwrap();
        assert!(rep.is_feasible());
        assert_eq!(detour_ratio(route, &a, 0).unwrap(), 0.0);
        assert_eq!(detour_ratio(route, &b, 0).unwrap(), 0.0);
    }

    #[test]
    fn detour_arithmetic() {
        let route = Route {
            stops: vec![
                Stop { kind: StopKind::Pickup, request: RequestId(1), node: NodeId(0) },
                Stop { kind: StopKind::Dropoff, request: RequestId(1), node: NodeId(1) },
            ],
            leg_costs: vec![0, 13],
            approach_offset: 0,
            total_cost: 13,
        };
        let r = Rider {
            id: RequestId(1),
            origin: NodeId(0),
            destination: NodeId(1),
            direct_cost: 10,
            max_detour_ratio: 0.3,
            pickup_deadline: None,
        };
        assert_eq!(detour_ratio(&route, &r, 0).unwrap(), 0.3);
        assert!(within_detour(13, 10, 0.3));
        assert!(!within_detour(14, 10, 0.3));
        let other = Rider { id: RequestId(9), ..r };
        assert_eq!(detour_ratio(&route, &other, 0), Err(RoutingError::RequestNotOnRoute(RequestId(9))));
    }

    #[test]
    fn onboard_rider_detour_uses_prior_cost() {
        let net = line();
        // Rider 1 boarded at node 0 and has ridden 100 m to node 1.
        let onboard = OnboardRider {
            rider: rider(&net, 1, 0, 3, 0.1),
            ride_cost_so_far: 100_000,
        };
        let ctx = RouteContext {
            anchor: NodeId(1),
            approach_offset: 0,
            capacity: 4,
            onboard: vec![onboard],
            scheduled: vec![],
        };
        // Going back to node 0 for a pickup costs rider 1 200 m extra: 2/3 > 0.1.
        let back = rider(&net, 2, 0, 3, 1.0);
        assert!(!nn_route(&net, &ctx, &[back]).is_feasible());
        let on_way = rider(&net, 3, 2, 3, 0.0);
        let rep = nn_route(&net, &ctx, &[on_way]);
        assert!(rep.is_feasible());
        assert_eq!(rep.route().unwrap().ride_cost(RequestId(1)), Some(200_000));
    }

    #[test]
    fn capacity_limits_simultaneous_occupancy() {
        let net = line();
        // One seat: three consecutive hops can still be served one after another.
        let rs = [rider(&net, 1, 0, 1, 0.0), rider(&net, 2, 1, 2, 0.0), rider(&net, 3, 2, 3, 0.0)];
        let ctx = RouteContext::empty_at(NodeId(0), 1);
        let rep = nn_route(&net, &ctx, &rs);
        assert!(rep.is_feasible());
        let mut load = 0i32;
        for s in &rep.route().unwrap().stops {
            load += if s.kind == StopKind::Pickup { 1 } else { -1 };
            assert!(load <= 1);
        }
    }

    #[test]
    fn too_many_stops() {
        let net = line();
        let rs: Vec<_> = (0..6).map(|i| rider(&net, i, 0, 3, 1.0)).collect();
        let ctx = RouteContext::empty_at(NodeId(0), 6);
        assert_eq!(enumerate_route(&net, &ctx, &rs), Err(RoutingError::TooManyStops(12)));
    }
}
