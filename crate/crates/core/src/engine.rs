//! The epoch loop.
//!
//! A step at clock `c` covers `(c, c + E]`: requests arriving in that window
//! decide their mode, vehicles drive for `E`, over-waiting passengers cancel,
//! then matching and repositioning run at `c + E`. Vehicles always move at
//! free-flow edge times; routing uses the network's active weight.

use std::collections::{BTreeSet, HashMap, VecDeque};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::demand::{init_fleet, Mode, Request, RequestId, RequestState, VehicleId, VehicleStatus};
use crate::matching::{build_candidates, solve_assignment_with_limit, MatchParams, PendingRequest, VehicleView};
use crate::metrics::{compute_metrics, Metrics, MetricsError};
use crate::netgraph::{CostOracle, NodeId, RoadNetwork, TreeCache};
use crate::pricing::{decide_mode, ElasticitySurface, Tariff};
use crate::repositioning::{plan_cruise, plan_to_waiting, RepositionPlan, RepositionStrategy};
use crate::rng::{self, SeedTree, SimRng};
use crate::routing::{OnboardRider, Rider, RouteContext, Stop, StopKind};
use crate::trace::{Event, EventKind, Leg};
use crate::{Cost, Millis};

/// In-vehicle tallies for one onboard passenger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ride {
    request: RequestId,
    cost: Cost,
    length_mm: i64,
    time_ms: Millis,
}

#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: VehicleId,
    pub capacity: u32,
    /// Last node reached.
    pub at: NodeId,
    /// Edge being driven and time already spent on it.
    pub edge: Option<(u32, Millis)>,
    path: VecDeque<u32>,
    pub stops: VecDeque<Stop>,
    onboard: Vec<Ride>,
    pub scheduled: Vec<RequestId>,
    /// Serving a solo passenger.
    pub exclusive: bool,
    reposition: Option<NodeId>,
    moved_mm: i64,
    moved_ms: Millis,
}

impl VehicleState {
    fn new(id: VehicleId, capacity: u32, at: NodeId) -> Self {
        Self {
            id,
            capacity,
            at,
            edge: None,
            path: VecDeque::new(),
            stops: VecDeque::new(),
            onboard: Vec::new(),
            scheduled: Vec::new(),
            exclusive: false,
            reposition: None,
            moved_mm: 0,
            moved_ms: 0,
        }
    }

    pub fn onboard(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.onboard.iter().map(|r| r.request)
    }

    pub fn status(&self) -> VehicleStatus {
        if !self.stops.is_empty() || !self.onboard.is_empty() || !self.scheduled.is_empty() {
            VehicleStatus::Serving
        } else if self.reposition.is_some() {
            VehicleStatus::Repositioning
        } else {
            VehicleStatus::Idle
        }
    }

    fn leg(&self) -> Leg {
        if !self.onboard.is_empty() {
            Leg::Occupied
        } else if self.reposition.is_some() {
            Leg::Reposition
        } else {
            Leg::Empty
        }
    }

    fn flush(&mut self, net: &RoadNetwork, t: Millis, out: &mut Vec<Event>) {
        if self.moved_mm == 0 && self.moved_ms == 0 {
            return;
        }
        out.push(Event {
            t,
            kind: EventKind::VehicleMoved {
                vehicle: self.id,
                node: net.external_id(self.at),
                length_mm: self.moved_mm,
                time_ms: self.moved_ms,
                leg: self.leg(),
            },
        });
        self.moved_mm = 0;
        self.moved_ms = 0;
    }
}

/// Counts of requests and vehicles at the current clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Snapshot {
    pub clock: Millis,
    pub waiting: usize,
    pub assigned: usize,
    pub onboard: usize,
    pub completed: usize,
    pub cancelled: usize,
    pub rejected: usize,
    pub idle: usize,
    pub serving: usize,
    pub repositioning: usize,
}

/// One epoch's assignment instance, for offline solver cross-checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub t: Millis,
    pub candidates: Vec<InstanceCandidate>,
    pub chosen: Vec<usize>,
    pub objective: f64,
    pub proven_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCandidate {
    pub id: usize,
    pub vehicle: VehicleId,
    pub requests: Vec<RequestId>,
    pub utility: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub events: Vec<Event>,
    pub metrics: Metrics,
    /// Epochs in which some component of the assignment hit the node budget.
    pub inexact_epochs: u64,
    /// Empty unless [`Simulation::record_instances`] was called.
    pub instances: Vec<InstanceRecord>,
}

pub struct Simulation<'n> {
    net: &'n RoadNetwork,
    cfg: SimConfig,
    params: MatchParams,
    tariff: Tariff,
    surface: ElasticitySurface,
    cache: TreeCache<'n>,
    cost_per_ms: f64,
    requests: Vec<Request>,
    index: HashMap<RequestId, usize>,
    next_arrival: usize,
    waiting: BTreeSet<RequestId>,
    vehicles: Vec<VehicleState>,
    clock: Millis,
    pricing_rng: SimRng,
    cruise_rng: SimRng,
    events: Vec<Event>,
    inexact_epochs: u64,
    instances: Option<Vec<InstanceRecord>>,
}

impl<'n> Simulation<'n> {
    /// `requests` must have direct costs filled and unique ids.
    pub fn new(net: &'n RoadNetwork, cfg: SimConfig, surface: ElasticitySurface, mut requests: Vec<Request>) -> Self {
        assert_eq!(net.weight_mode(), cfg.weight_mode, "network and config disagree on weight mode");
        requests.sort_by_key(|r| (r.t_request, r.id));
        let index = requests.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let fleet = init_fleet(net, cfg.fleet_size, cfg.capacity, &requests, cfg.epoch_ms(), cfg.seed);
        let vehicles = fleet
            .iter()
            .map(|v| VehicleState::new(v.id, v.capacity, v.position.node))
            .collect();
        let seeds = SeedTree::new(cfg.seed);
        let mut sim = Self {
            net,
            params: cfg.match_params(),
            tariff: cfg.tariff,
            surface,
            cache: TreeCache::new(net),
            cost_per_ms: net.cost_per_ms(),
            requests,
            index,
            next_arrival: 0,
            waiting: BTreeSet::new(),
            vehicles,
            clock: 0,
            pricing_rng: seeds.stream(rng::PRICING, 0),
            cruise_rng: seeds.stream(rng::CRUISE, 0),
            events: Vec::new(),
            inexact_epochs: 0,
            instances: None,
            cfg,
        };
        sim.events.push(Event {
            t: 0,
            kind: EventKind::RunStarted {
                fleet: sim.cfg.fleet_size as u32,
                capacity: sim.cfg.capacity,
                horizon_s: sim.cfg.horizon_s,
                epoch_length_s: sim.cfg.epoch_length_s,
                weight_mode: sim.cfg.weight_mode,
                seed: sim.cfg.seed,
            },
        });
        sim
    }

    /// Keeps every epoch's candidate list and solution.
    pub fn record_instances(&mut self) {
        self.instances.get_or_insert_with(Vec::new);
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn request(&self, id: RequestId) -> Option<&Request> {
        self.index.get(&id).map(|&i| &self.requests[i])
    }

    fn req_mut(&mut self, id: RequestId) -> &mut Request {
        let i = self.index[&id];
        &mut self.requests[i]
    }

    /// Requests still waiting, assigned or aboard, plus arrivals not yet admitted.
    pub fn has_active_work(&self) -> bool {
        self.next_arrival < self.requests.len()
            || !self.waiting.is_empty()
            || self.vehicles.iter().any(|v| !v.stops.is_empty())
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut s = Snapshot {
            clock: self.clock,
            ..Snapshot::default()
        };
        for r in &self.requests[..self.next_arrival] {
            match (r.mode, r.state) {
                (Mode::Rejected, _) => s.rejected += 1,
                (_, RequestState::Waiting) => s.waiting += 1,
                (_, RequestState::Assigned) => s.assigned += 1,
                (_, RequestState::OnBoard) => s.onboard += 1,
                (_, RequestState::Completed) => s.completed += 1,
                (_, RequestState::Cancelled) => s.cancelled += 1,
            }
        }
        for v in &self.vehicles {
            match v.status() {
                VehicleStatus::Idle => s.idle += 1,
                VehicleStatus::Serving => s.serving += 1,
                VehicleStatus::Repositioning => s.repositioning += 1,
            }
        }
        s
    }

    /// Runs to the horizon, then drains until no work is left or the drain
    /// cap passes.
    pub fn run(mut self) -> Result<RunOutcome, MetricsError> {
        while self.clock < self.cfg.horizon_ms() {
            self.step_epoch();
        }
        let stop = self.cfg.horizon_ms() + self.cfg.drain_cap_ms();
        while self.clock < stop && self.has_active_work() {
            self.step_epoch();
        }
        self.finish()
    }

    pub fn finish(self) -> Result<RunOutcome, MetricsError> {
        let metrics = compute_metrics(&self.events, &self.cfg.emission)?;
        Ok(RunOutcome {
            events: self.events,
            metrics,
            inexact_epochs: self.inexact_epochs,
            instances: self.instances.unwrap_or_default(),
        })
    }

    pub fn step_epoch(&mut self) {
        let start = self.clock;
        let end = start + self.cfg.epoch_ms();
        let first = self.events.len();

        self.admit(end);
        self.drive(start, end);
        self.cancel_overdue(end);
        let matched = self.match_requests(end);
        if end <= self.cfg.horizon_ms() {
            self.reposition(end, &matched);
        }
        self.events[first..].sort_by_key(|e| e.t);

        let mut live: BTreeSet<NodeId> = self.waiting.iter().map(|id| self.requests[self.index[id]].origin).collect();
        live.extend(self.vehicles.iter().flat_map(|v| v.stops.iter().map(|s| s.node)));
        self.cache.retain(&live);
        self.clock = end;
    }

    fn admit(&mut self, until: Millis) {
        while let Some(r) = self.requests.get(self.next_arrival) {
            if r.t_request > until {
                break;
            }
            let i = self.next_arrival;
            self.next_arrival += 1;
            let d = decide_mode(&self.requests[i], &self.tariff, &self.surface, self.cfg.allow_solo, &mut self.pricing_rng);
            let max_wait = self.requests[i].wait_override.unwrap_or(self.cfg.max_wait_ms());
            let r = &mut self.requests[i];
            r.mode = d.mode;
            r.price = d.quoted_price;
            r.max_detour_ratio = d.max_detour_ratio;
            r.max_wait = max_wait;
            let (t, id) = (r.t_request, r.id);
            self.events.push(Event {
                t,
                kind: EventKind::RequestCreated {
                    request: id,
                    origin: self.net.external_id(r.origin),
                    destination: self.net.external_id(r.destination),
                    direct_cost: r.direct_cost,
                    direct_length_mm: r.direct_length_mm,
                    direct_time_ms: r.direct_time_ms,
                },
            });
            self.events.push(Event {
                t,
                kind: EventKind::ModeDecided {
                    request: id,
                    mode: d.mode,
                    price: d.quoted_price,
                    max_detour_ratio: d.max_detour_ratio,
                },
            });
            if d.mode != Mode::Rejected {
                self.waiting.insert(id);
            }
        }
    }

    fn drive(&mut self, start: Millis, end: Millis) {
        let mut vehicles = std::mem::take(&mut self.vehicles);
        for v in &mut vehicles {
            self.advance(v, start, end);
            v.flush(self.net, end, &mut self.events);
        }
        self.vehicles = vehicles;
    }

    fn advance(&mut self, v: &mut VehicleState, start: Millis, until: Millis) {
        let net = self.net;
        let mut now = start;
        loop {
            if let Some((e, elapsed)) = v.edge {
                let edge = net.edge(e);
                let remaining = edge.time_ms - elapsed;
                if now + remaining > until {
                    v.edge = Some((e, elapsed + (until - now)));
                    return;
                }
                now += remaining;
                v.edge = None;
                v.at = edge.to;
                v.moved_mm += edge.length_mm;
                v.moved_ms += edge.time_ms;
                let w = net.weight(e);
                for r in &mut v.onboard {
                    r.cost += w;
                    r.length_mm += edge.length_mm;
                    r.time_ms += edge.time_ms;
                }
                continue;
            }
            if v.stops.front().is_some_and(|s| s.node == v.at) {
                self.serve_stops(v, now);
                continue;
            }
            if let Some(e) = v.path.pop_front() {
                v.edge = Some((e, 0));
                continue;
            }
            let target = match (v.stops.front(), v.reposition) {
                (Some(s), _) => s.node,
                (None, Some(t)) if t == v.at => {
                    v.flush(net, now, &mut self.events);
                    v.reposition = None;
                    return;
                }
                (None, Some(t)) => t,
                (None, None) => return,
            };
            let tree = self.cache.tree(target);
            v.path = tree.path_edges(net, v.at).expect("planned targets are reachable").into();
        }
    }

    fn serve_stops(&mut self, v: &mut VehicleState, now: Millis) {
        v.flush(self.net, now, &mut self.events);
        while let Some(s) = v.stops.front().copied().filter(|s| s.node == v.at) {
            v.stops.pop_front();
            let node = self.net.external_id(s.node);
            match s.kind {
                StopKind::Pickup => {
                    v.scheduled.retain(|&id| id != s.request);
                    v.onboard.push(Ride {
                        request: s.request,
                        cost: 0,
                        length_mm: 0,
                        time_ms: 0,
                    });
                    assert!(v.onboard.len() <= v.capacity as usize, "vehicle {} over capacity", v.id.0);
                    self.req_mut(s.request).state = RequestState::OnBoard;
                    self.events.push(Event {
                        t: now,
                        kind: EventKind::PickedUp {
                            vehicle: v.id,
                            request: s.request,
                            node,
                        },
                    });
                }
                StopKind::Dropoff => {
                    let k = v
                        .onboard
                        .iter()
                        .position(|r| r.request == s.request)
                        .expect("dropoff follows pickup");
                    let ride = v.onboard.remove(k);
                    self.req_mut(s.request).state = RequestState::Completed;
                    self.events.push(Event {
                        t: now,
                        kind: EventKind::DroppedOff {
                            vehicle: v.id,
                            request: s.request,
                            node,
                            ride_cost: ride.cost,
                            ride_length_mm: ride.length_mm,
                            ride_time_ms: ride.time_ms,
                        },
                    });
                }
            }
        }
        if v.stops.is_empty() {
            v.exclusive = false;
        }
    }

    fn cancel_overdue(&mut self, now: Millis) {
        let overdue: Vec<RequestId> = self
            .waiting
            .iter()
            .copied()
            .filter(|id| {
                let r = &self.requests[self.index[id]];
                now - r.t_request > r.max_wait
            })
            .collect();
        for id in overdue {
            self.waiting.remove(&id);
            self.req_mut(id).state = RequestState::Cancelled;
            self.events.push(Event {
                t: now,
                kind: EventKind::Cancelled { request: id },
            });
        }
    }

    /// Routing view of a request at clock `now`. The pickup deadline is the
    /// remaining wait allowance in cost units.
    fn rider(&self, id: RequestId, now: Millis) -> Rider {
        let r = &self.requests[self.index[&id]];
        let left = (r.t_request + r.max_wait - now).max(0);
        Rider {
            id,
            origin: r.origin,
            destination: r.destination,
            direct_cost: r.direct_cost,
            max_detour_ratio: r.max_detour_ratio,
            pickup_deadline: Some((left as f64 * self.cost_per_ms) as Cost),
        }
    }

    fn view(&self, v: &VehicleState, now: Millis) -> VehicleView {
        let net = self.net;
        let (anchor, offset, edge_weight) = match v.edge {
            Some((e, elapsed)) => {
                let edge = net.edge(e);
                let w = net.weight(e);
                let left = i128::from(w) * i128::from(edge.time_ms - elapsed) / i128::from(edge.time_ms);
                (edge.to, left as Cost, w)
            }
            None => (v.at, 0, 0),
        };
        let onboard = v
            .onboard
            .iter()
            .map(|r| OnboardRider {
                rider: Rider {
                    pickup_deadline: None,
                    ..self.rider(r.request, now)
                },
                ride_cost_so_far: r.cost + edge_weight,
            })
            .collect();
        let mut current_plan_cost = 0;
        let mut planned_pickup: HashMap<RequestId, Cost> = HashMap::new();
        if !v.stops.is_empty() {
            current_plan_cost = offset;
            let mut from = anchor;
            for s in &v.stops {
                current_plan_cost += self.cache.cost(from, s.node).expect("route stops are reachable");
                from = s.node;
                if s.kind == StopKind::Pickup {
                    planned_pickup.insert(s.request, current_plan_cost);
                }
            }
        }
        // A promised pickup stays admissible even if driving ran behind the
        // deadline estimate; new stops may not push it later than either.
        let scheduled = v
            .scheduled
            .iter()
            .map(|&id| {
                let r = self.rider(id, now);
                let promised = planned_pickup.get(&id).copied();
                Rider {
                    pickup_deadline: r.pickup_deadline.max(promised),
                    ..r
                }
            })
            .collect();
        VehicleView {
            id: v.id,
            ctx: RouteContext {
                anchor,
                approach_offset: offset,
                capacity: v.capacity,
                onboard,
                scheduled,
            },
            exclusive: v.exclusive,
            current_plan_cost,
        }
    }

    /// Returns the vehicles that received a trip.
    fn match_requests(&mut self, now: Millis) -> BTreeSet<VehicleId> {
        let mut matched = BTreeSet::new();
        if self.waiting.is_empty() {
            return matched;
        }
        let mut targets: BTreeSet<NodeId> = BTreeSet::new();
        for id in &self.waiting {
            let r = &self.requests[self.index[id]];
            targets.insert(r.origin);
            targets.insert(r.destination);
        }
        for v in &self.vehicles {
            targets.extend(v.stops.iter().map(|s| s.node));
        }
        self.cache.ensure(targets);

        let pending: Vec<PendingRequest> = self
            .waiting
            .iter()
            .map(|&id| {
                let r = &self.requests[self.index[&id]];
                PendingRequest {
                    rider: self.rider(id, now),
                    mode: r.mode,
                    price: r.price,
                    waited: now - r.t_request,
                }
            })
            .collect();
        let views: Vec<VehicleView> = self
            .vehicles
            .iter()
            .filter(|v| !v.exclusive && v.onboard.len() + v.scheduled.len() < v.capacity as usize)
            .map(|v| self.view(v, now))
            .collect();
        let mut cands = build_candidates(&self.cache, &views, &pending, &self.params);
        cands.sort_by(|a, b| b.utility.total_cmp(&a.utility));
        let solution = solve_assignment_with_limit(&cands, self.cfg.matching.node_limit);
        if !solution.proven_optimal {
            self.inexact_epochs += 1;
        }
        if let Some(log) = &mut self.instances {
            log.push(InstanceRecord {
                t: now,
                candidates: cands
                    .iter()
                    .enumerate()
                    .map(|(id, c)| InstanceCandidate {
                        id,
                        vehicle: c.vehicle,
                        requests: c.trip.requests.clone(),
                        utility: c.utility,
                    })
                    .collect(),
                chosen: solution.chosen.clone(),
                objective: solution.objective,
                proven_optimal: solution.proven_optimal,
            });
        }
        debug!(
            "t={now}: {} pending, {} vehicles, {} candidates, {} matches, objective {:.2}",
            pending.len(),
            views.len(),
            cands.len(),
            solution.chosen.len(),
            solution.objective
        );

        let slot: HashMap<VehicleId, usize> = self.vehicles.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        for &k in &solution.chosen {
            let c = &cands[k];
            let vi = slot[&c.vehicle];
            for &id in &c.trip.requests {
                self.waiting.remove(&id);
                self.req_mut(id).state = RequestState::Assigned;
            }
            let solo = c.trip.requests.iter().any(|&id| self.requests[self.index[&id]].mode == Mode::Solo);
            let v = &mut self.vehicles[vi];
            v.stops = c.trip.route.stops.iter().copied().collect();
            v.path.clear();
            v.scheduled.extend(c.trip.requests.iter().copied());
            v.exclusive = solo;
            v.reposition = None;
            matched.insert(c.vehicle);
            self.events.push(Event {
                t: now,
                kind: EventKind::Matched {
                    vehicle: c.vehicle,
                    requests: c.trip.requests.clone(),
                    route_cost: c.trip.route.total_cost,
                    utility: c.utility,
                },
            });
        }
        matched
    }

    fn reposition(&mut self, now: Millis, matched: &BTreeSet<VehicleId>) {
        let idle: Vec<(VehicleId, NodeId)> = self
            .vehicles
            .iter()
            .filter(|v| v.status() == VehicleStatus::Idle && v.edge.is_none() && !matched.contains(&v.id))
            .map(|v| (v.id, v.at))
            .collect();
        if idle.is_empty() {
            return;
        }
        let plan: RepositionPlan = match self.cfg.reposition {
            RepositionStrategy::Stay => return,
            RepositionStrategy::CruiseNearby(side) => plan_cruise(self.net, &idle, side, &mut self.cruise_rng),
            RepositionStrategy::ToWaiting => {
                let waiting: Vec<(RequestId, NodeId)> = self
                    .waiting
                    .iter()
                    .map(|&id| (id, self.requests[self.index[&id]].origin))
                    .collect();
                self.cache.ensure(waiting.iter().map(|w| w.1));
                plan_to_waiting(&self.cache, &idle, &waiting)
            }
        };
        let slot: HashMap<VehicleId, usize> = self.vehicles.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        for m in plan.moves {
            if m.target == self.vehicles[slot[&m.vehicle]].at {
                continue;
            }
            let v = &mut self.vehicles[slot[&m.vehicle]];
            v.reposition = Some(m.target);
            v.path.clear();
            self.events.push(Event {
                t: now,
                kind: EventKind::RepositionStarted {
                    vehicle: m.vehicle,
                    target: self.net.external_id(m.target),
                    request: m.request,
                    cost: m.cost,
                },
            });
        }
    }

    /// Structural invariants of the current state.
    pub fn check_invariants(&self) -> Result<(), String> {
        for v in &self.vehicles {
            if v.onboard.len() > v.capacity as usize {
                return Err(format!("vehicle {} carries {} > {}", v.id.0, v.onboard.len(), v.capacity));
            }
            let idle = v.onboard.is_empty() && v.scheduled.is_empty() && v.stops.is_empty();
            if idle != (v.status() != VehicleStatus::Serving) {
                return Err(format!("vehicle {} status disagrees with its load", v.id.0));
            }
            if v.reposition.is_some() && !v.scheduled.is_empty() {
                return Err(format!("vehicle {} repositions with scheduled requests", v.id.0));
            }
            for &id in &v.scheduled {
                if self.requests[self.index[&id]].state != RequestState::Assigned {
                    return Err(format!("scheduled request {} is not assigned", id.0));
                }
            }
        }
        let s = self.snapshot();
        let admitted = self.next_arrival;
        let total = s.rejected + s.waiting + s.assigned + s.onboard + s.completed + s.cancelled;
        if total != admitted {
            return Err(format!("request conservation: {total} != {admitted}"));
        }
        if s.waiting != self.waiting.len() {
            return Err("waiting set out of sync".into());
        }
        Ok(())
    }
}

/// Builds and runs a simulation in one call.
pub fn simulate(
    net: &RoadNetwork,
    cfg: SimConfig,
    surface: ElasticitySurface,
    requests: Vec<Request>,
) -> Result<RunOutcome, MetricsError> {
    Simulation::new(net, cfg, surface, requests).run()
}
