//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. The throughput run goes first so nothing else competes
//! for the machine while it is timed.

use std::collections::{BTreeMap, HashMap};
use std::io::BufReader;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poolsim::config::SimConfig;
use poolsim::demand::{synthesize_requests, DemandConfig, DemandSource, Mode, Request, RequestId, VehicleId};
use poolsim::engine::{simulate, RunOutcome};
use poolsim::matching::solve_packing;
use poolsim::metrics::{compute_metrics, EmissionModel, Metrics};
use poolsim::netgraph::synth;
use poolsim::pricing::ElasticitySurface;
use poolsim::repositioning::plan_to_waiting;
use poolsim::routing::{enumerate_route, nn_route, RouteContext, Rider};
use poolsim::scaling::{fit_scaling, predict_performance, ScalingParams};
use poolsim::trace::{read_events, to_jsonl, EventKind};
use poolsim::{Cost, NodeId, RoadNetwork, WeightMode};

type Verdict = Result<String, String>;

/// A finished run kept for the replay check.
struct Kept {
    label: String,
    jsonl: Vec<u8>,
    metrics: Metrics,
    emission: EmissionModel,
}

fn main() -> ExitCode {
    let mut kept: Vec<Kept> = Vec::new();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, v: Verdict| {
        match v {
            Ok(d) => println!("PASS {n} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n} {name}: {d}");
            }
        }
    };

    // Runs first so the timing is not skewed by a warm allocator. Set
    // ACCEPT_SKIP_SLOW to skip it during local iteration.
    if std::env::var_os("ACCEPT_SKIP_SLOW").is_none() {
        report(8, "throughput", throughput());
    } else {
        println!("SKIP 8 throughput: ACCEPT_SKIP_SLOW is set");
    }
    report(1, "scaling-law reproduction", scaling_law());
    report(2, "nn-heuristic accuracy", nn_accuracy());
    report(3, "matching-solver exactness", solver_exactness());
    report(4, "repositioning exactness", repositioning_exactness());
    report(5, "simulation invariants", invariant_battery(&mut kept));
    report(6, "emission direction", emission_direction(&mut kept));
    report(7, "scaling fit self-consistency", fit_consistency());
    report(9, "round-trip integrity", round_trip(&kept));

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Exactly `n` uniform requests spread over the first hour.
fn uniform_requests(net: &RoadNetwork, n: usize, seed: u64) -> Vec<Request> {
    let cfg = DemandConfig {
        source: DemandSource::Uniform {
            rate: n as f64 * 1.1 / 3600.0,
        },
        horizon: 3_600_000,
        seed,
    };
    let mut reqs = synthesize_requests(net, &cfg).expect("valid demand");
    assert!(reqs.len() >= n, "only {} requests drawn", reqs.len());
    reqs.truncate(n);
    reqs
}

fn throughput() -> Verdict {
    let start = Instant::now();
    let net = synth::grid(71, 71, 200.0, 10.0, WeightMode::Distance);
    let reqs = uniform_requests(&net, 10_000, 1);
    let cfg = SimConfig {
        fleet_size: 1000,
        capacity: 4,
        horizon_s: 3600,
        seed: 1,
        ..SimConfig::default()
    };
    let out = simulate(&net, cfg, ElasticitySurface::default(), reqs).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        secs <= 120.0,
        format!(
            "{} nodes, 10000 requests, 1000 vehicles, 1 h in {secs:.1} s (service rate {:.3}, {} epochs at node limit)",
            net.node_count(),
            out.metrics.service_rate,
            out.inexact_epochs
        ),
    )
}

fn scaling_law() -> Verdict {
    let r4 = predict_performance(3.0, &ScalingParams::defaults(4).unwrap()).map_err(|e| e.to_string())?.0;
    let r2 = predict_performance(3.0, &ScalingParams::defaults(2).unwrap()).map_err(|e| e.to_string())?.0;
    check(
        (0.71..=0.74).contains(&r4) && (0.48..=0.52).contains(&r2),
        format!("u = 3: R(C=4) = {r4:.4}, R(C=2) = {r2:.4}"),
    )
}

fn all_pairs(net: &RoadNetwork) -> Vec<Vec<Option<Cost>>> {
    let mut m = vec![vec![None; net.node_count()]; net.node_count()];
    for t in net.nodes() {
        let tree = net.tree_to(t);
        for s in net.nodes() {
            m[s.index()][t.index()] = tree.cost(s);
        }
    }
    m
}

/// Nodes sorted by cost from `from`, nearest first.
fn nearest(m: &[Vec<Option<Cost>>], from: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..m.len()).collect();
    v.sort_by_key(|&x| (m[from][x].unwrap_or(Cost::MAX), x));
    v.truncate(k);
    v
}

#[derive(Default)]
struct Agreement {
    total: u32,
    agree: u32,
    unsound: u32,
    feasible: u32,
}

impl Agreement {
    fn rate(&self) -> f64 {
        f64::from(self.agree) / f64::from(self.total)
    }

    fn describe(&self) -> String {
        format!(
            "{} instances ({:.1}% feasible by enumeration), agreement {:.2}%, unsound {}",
            self.total,
            100.0 * f64::from(self.feasible) / f64::from(self.total),
            100.0 * self.rate(),
            self.unsound
        )
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Spread {
    /// Endpoints anywhere on the graph.
    Uniform,
    /// Origins within the default pickup reach of the vehicle, destinations
    /// anywhere: the groups candidate generation actually routes.
    Reach,
    /// Origins from one 8-node neighbourhood and destinations from another,
    /// the hard case for the greedy order.
    Clustered,
}

/// NN and enumeration verdicts on random instances, every rider allowed the
/// default 300 s until pickup.
fn nn_agreement(spread: Spread, seed: u64) -> Result<Agreement, String> {
    let reach = SimConfig::default().match_params().max_pickup_cost;
    let mut a = Agreement::default();
    for g in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + g);
        let net = synth::random_connected(100, 3, &mut rng, WeightMode::Distance);
        let m = all_pairs(&net);
        let deadline = (300_000.0 * net.cost_per_ms()) as Cost;
        let everywhere: Vec<usize> = (0..100).collect();
        while a.total < (g as u32 + 1) * 60 {
            let at = rng.random_range(0..100);
            let (pick_o, pick_d) = match spread {
                Spread::Uniform => (everywhere.clone(), everywhere.clone()),
                Spread::Reach => {
                    let near: Vec<usize> = (0..100).filter(|&x| m[at][x].is_some_and(|c| c <= reach)).collect();
                    (near, everywhere.clone())
                }
                Spread::Clustered => {
                    let d = rng.random_range(0..100);
                    (nearest(&m, at, 8), nearest(&m, d, 8))
                }
            };
            let k = rng.random_range(2..=4);
            let riders: Vec<Rider> = (0..k)
                .map(|i| {
                    let o = pick_o[rng.random_range(0..pick_o.len())];
                    let d = pick_d[rng.random_range(0..pick_d.len())];
                    Rider {
                        id: RequestId(i),
                        origin: NodeId(o as u32),
                        destination: NodeId(d as u32),
                        direct_cost: m[o][d].unwrap(),
                        max_detour_ratio: 0.3,
                        pickup_deadline: Some(deadline),
                    }
                })
                .collect();
            if riders.iter().any(|r| r.origin == r.destination) {
                continue;
            }
            let ctx = RouteContext::empty_at(NodeId(at as u32), 4);
            let nn = nn_route(&m, &ctx, &riders).is_feasible();
            let en = enumerate_route(&m, &ctx, &riders).map_err(|e| e.to_string())?.is_feasible();
            a.total += 1;
            a.agree += u32::from(nn == en);
            a.unsound += u32::from(nn && !en);
            a.feasible += u32::from(en);
        }
    }
    Ok(a)
}

/// Gated on reach-limited groups; the other spreads are reported alongside
/// and must stay sound.
fn nn_accuracy() -> Verdict {
    let reach = nn_agreement(Spread::Reach, 100)?;
    let uniform = nn_agreement(Spread::Uniform, 200)?;
    let clustered = nn_agreement(Spread::Clustered, 300)?;
    check(
        reach.total >= 1000 && reach.rate() >= 0.95 && [&reach, &uniform, &clustered].iter().all(|a| a.unsound == 0),
        format!(
            "reach-limited: {}; uniform: {}; clustered: {}",
            reach.describe(),
            uniform.describe(),
            clustered.describe()
        ),
    )
}

type Packing = Vec<(u64, Vec<RequestId>, i64)>;

fn brute_packing(c: &Packing) -> i64 {
    let mut best = 0;
    for mask in 0u32..(1 << c.len()) {
        let (mut veh, mut req, mut sum) = (0u64, 0u64, 0i64);
        let mut ok = true;
        for (i, (v, rs, u)) in c.iter().enumerate() {
            if mask >> i & 1 == 0 {
                continue;
            }
            let rbits = rs.iter().fold(0u64, |acc, r| acc | 1 << r.0);
            if veh >> v & 1 == 1 || req & rbits != 0 {
                ok = false;
                break;
            }
            veh |= 1 << v;
            req |= rbits;
            sum += u;
        }
        if ok {
            best = best.max(sum);
        }
    }
    best
}

fn solver_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..500 {
        let nv = rng.random_range(1..=8u64);
        let nr = rng.random_range(1..=10u64);
        let nc = rng.random_range(0..=12);
        let cands: Packing = (0..nc)
            .map(|_| {
                let size = rng.random_range(1..=3.min(nr));
                let mut rs: Vec<RequestId> = rand::seq::index::sample(&mut rng, nr as usize, size as usize)
                    .into_iter()
                    .map(|r| RequestId(r as u64))
                    .collect();
                rs.sort();
                (rng.random_range(0..nv), rs, rng.random_range(-20..100))
            })
            .collect();
        let got = solve_packing(&cands, u64::MAX);
        if got.objective != brute_packing(&cands) || !got.proven_optimal {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("500 instances, {mismatches} differ from subset enumeration"))
}

/// Best (cardinality, -cost) over all injective partial assignments.
fn brute_matching(m: &[Vec<Option<Cost>>], row: usize, used: &mut Vec<bool>) -> (usize, Cost) {
    if row == m.len() {
        return (0, 0);
    }
    let mut best = brute_matching(m, row + 1, used);
    for col in 0..used.len() {
        if let (false, Some(c)) = (used[col], m[row][col]) {
            used[col] = true;
            let (k, s) = brute_matching(m, row + 1, used);
            used[col] = false;
            if (k + 1, -(s + c)) > (best.0, -best.1) {
                best = (k + 1, s + c);
            }
        }
    }
    best
}

fn repositioning_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..500 {
        let nv = rng.random_range(0..=7);
        let nw = rng.random_range(0..=7);
        // Vehicles sit on nodes 0..nv, passengers on nodes nv..nv+nw; some
        // passengers share a node.
        let n = nv + nw;
        let table: Vec<Vec<Option<Cost>>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..10_000)))
                    .collect()
            })
            .collect();
        let idle: Vec<(VehicleId, NodeId)> = (0..nv).map(|v| (VehicleId(v as u32), NodeId(v as u32))).collect();
        let waiting: Vec<(RequestId, NodeId)> = (0..nw)
            .map(|w| {
                let node = if w > 0 && rng.random_bool(0.2) { nv + w - 1 } else { nv + w };
                (RequestId(w as u64), NodeId(node as u32))
            })
            .collect();
        let matrix: Vec<Vec<Option<Cost>>> = idle
            .iter()
            .map(|(_, a)| waiting.iter().map(|(_, b)| table[a.index()][b.index()]).collect())
            .collect();
        let want = brute_matching(&matrix, 0, &mut vec![false; nw]);
        let plan = plan_to_waiting(&table, &idle, &waiting);
        let mut seen_v = vec![false; nv];
        let mut seen_w = vec![false; nw];
        let valid = plan.moves.iter().all(|mv| {
            let v = mv.vehicle.0 as usize;
            let w = mv.request.expect("to-waiting moves name a passenger").0 as usize;
            let fresh = !seen_v[v] && !seen_w[w];
            seen_v[v] = true;
            seen_w[w] = true;
            fresh && mv.target == waiting[w].1 && matrix[v][w] == Some(mv.cost)
        });
        let total: Cost = plan.moves.iter().map(|mv| mv.cost).sum();
        if !valid || (plan.moves.len(), total) != want || plan.total_distance != total {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("500 instances, {mismatches} differ from permutation brute force"))
}

fn keep(kept: &mut Vec<Kept>, label: String, out: &RunOutcome, emission: EmissionModel) {
    kept.push(Kept {
        label,
        jsonl: to_jsonl(&out.events),
        metrics: out.metrics.clone(),
        emission,
    });
}

/// Conservation, capacity and detour checks read straight off the trace.
fn audit_trace(out: &RunOutcome, capacity: usize) -> Result<(), String> {
    let mut created: BTreeMap<RequestId, (Cost, f64)> = BTreeMap::new();
    let mut terminal: HashMap<RequestId, &'static str> = HashMap::new();
    let mut aboard: HashMap<VehicleId, usize> = HashMap::new();
    let mut finish = |r: RequestId, how: &'static str| match terminal.insert(r, how) {
        None => Ok(()),
        Some(prev) => Err(format!("request {} ended twice ({prev}, {how})", r.0)),
    };
    for e in &out.events {
        match &e.kind {
            EventKind::RequestCreated { request, direct_cost, .. } => {
                created.insert(*request, (*direct_cost, 0.0));
            }
            EventKind::ModeDecided {
                request,
                mode,
                max_detour_ratio,
                ..
            } => {
                created.get_mut(request).ok_or("decision before creation")?.1 = *max_detour_ratio;
                if *mode == Mode::Rejected {
                    finish(*request, "rejected")?;
                }
            }
            EventKind::PickedUp { vehicle, .. } => {
                let n = aboard.entry(*vehicle).or_default();
                *n += 1;
                if *n > capacity {
                    return Err(format!("vehicle {} carries {n} > {capacity} at t = {} ms", vehicle.0, e.t));
                }
            }
            EventKind::DroppedOff {
                vehicle,
                request,
                ride_cost,
                ..
            } => {
                let n = aboard.get_mut(vehicle).filter(|n| **n > 0).ok_or("drop-off from an empty vehicle")?;
                *n -= 1;
                let (direct, ratio) = created[request];
                if *ride_cost as f64 > (1.0 + ratio) * direct as f64 + 1e-9 {
                    return Err(format!(
                        "request {} rode {ride_cost} against direct {direct}, bound {ratio}",
                        request.0
                    ));
                }
                finish(*request, "completed")?;
            }
            EventKind::Cancelled { request } => finish(*request, "cancelled")?,
            _ => {}
        }
    }
    let open = created.keys().filter(|r| !terminal.contains_key(r)).count();
    if open > 0 {
        return Err(format!("{open} requests never reached a terminal state"));
    }
    Ok(())
}

fn invariant_battery(kept: &mut Vec<Kept>) -> Verdict {
    let start = Instant::now();
    let net = synth::grid(20, 20, 200.0, 10.0, WeightMode::Distance);
    let cfg = |seed| SimConfig {
        fleet_size: 150,
        capacity: 4,
        horizon_s: 3600,
        seed,
        ..SimConfig::default()
    };
    let mut first = Vec::new();
    let mut completed = 0;
    for seed in 0..10 {
        let reqs = uniform_requests(&net, 2000, seed);
        let out = simulate(&net, cfg(seed), ElasticitySurface::default(), reqs).map_err(|e| e.to_string())?;
        audit_trace(&out, 4).map_err(|e| format!("seed {seed}: {e}"))?;
        completed += out.metrics.tallies.completed;
        if seed == 0 {
            first = to_jsonl(&out.events);
        }
        keep(kept, format!("battery seed {seed}"), &out, EmissionModel::default());
    }
    let again = simulate(&net, cfg(0), ElasticitySurface::default(), uniform_requests(&net, 2000, 0))
        .map_err(|e| e.to_string())?;
    if to_jsonl(&again.events) != first {
        return Err("repeat run of seed 0 produced a different trace".into());
    }
    Ok(format!(
        "10 runs, {completed} completed trips audited, repeat run byte-identical, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

struct Service {
    name: &'static str,
    capacity: u32,
    shared: bool,
}

/// Emissions per passenger-km for each service at the smallest fleet that
/// reaches the target service rate.
fn emission_direction(kept: &mut Vec<Kept>) -> Verdict {
    const TARGET: f64 = 0.9;
    let net = synth::grid(20, 20, 200.0, 10.0, WeightMode::Distance);
    let reqs = uniform_requests(&net, 2000, 42);
    let services = [
        Service {
            name: "solo",
            capacity: 1,
            shared: false,
        },
        Service {
            name: "rs2",
            capacity: 2,
            shared: true,
        },
        Service {
            name: "rs4",
            capacity: 4,
            shared: true,
        },
    ];
    let mut rows = Vec::new();
    for s in &services {
        let surface = ElasticitySurface::constant(if s.shared { 1.0 } else { 0.0 });
        let mut run = |fleet: usize| {
            let cfg = SimConfig {
                fleet_size: fleet,
                capacity: s.capacity,
                horizon_s: 3600,
                seed: 42,
                ..SimConfig::default()
            };
            simulate(&net, cfg, surface.clone(), reqs.clone()).map(|out| {
                keep(kept, format!("{} fleet {fleet}", s.name), &out, EmissionModel::default());
                out.metrics
            })
        };
        let (mut lo, mut hi) = (10usize, 400usize);
        let mut at_hi = run(hi).map_err(|e| e.to_string())?;
        if at_hi.service_rate < TARGET {
            return Err(format!("{} misses {TARGET} even with {hi} vehicles", s.name));
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let m = run(mid).map_err(|e| e.to_string())?;
            if m.service_rate >= TARGET {
                hi = mid;
                at_hi = m;
            } else {
                lo = mid;
            }
        }
        rows.push((s.name, hi, at_hi));
    }
    let detail = rows
        .iter()
        .map(|(n, f, m)| {
            format!(
                "{n}: fleet {f}, R {:.3}, {:.4} kg/pkm",
                m.service_rate, m.emissions_per_passenger_km
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let e: Vec<f64> = rows.iter().map(|r| r.2.emissions_per_passenger_km).collect();
    let r: Vec<f64> = rows.iter().map(|r| r.2.service_rate).collect();
    let separated = e[0] >= 1.05 * e[1] && e[1] >= 1.05 * e[2];
    let matched = r.iter().all(|x| (x - TARGET).abs() <= 0.02);
    check(separated && matched, detail)
}

fn fit_consistency() -> Verdict {
    // Noiseless recovery, for each default parameter pair.
    let mut worst: f64 = 0.0;
    for c in [2, 4, 6] {
        let truth = ScalingParams::<f64>::defaults(c).unwrap();
        let samples: Vec<(f64, f64)> = [1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0]
            .iter()
            .map(|&u| (u, predict_performance(u, &truth).unwrap().0))
            .collect();
        let fit = fit_scaling(&samples, c).map_err(|e| e.to_string())?;
        worst = worst
            .max((fit.params.alpha - truth.alpha).abs())
            .max((fit.params.beta - truth.beta).abs());
    }
    if worst > 1e-6 {
        return Err(format!("noiseless recovery error {worst:.2e}"));
    }

    // Simulated samples.
    let net = synth::grid(20, 20, 200.0, 10.0, WeightMode::Distance);
    let fleet = 100;
    let run = |rate: f64, seed: u64| -> Result<Metrics, String> {
        let dc = DemandConfig {
            source: DemandSource::Uniform { rate },
            horizon: 3_600_000,
            seed,
        };
        let reqs = synthesize_requests(&net, &dc).map_err(|e| e.to_string())?;
        let cfg = SimConfig {
            fleet_size: fleet,
            capacity: 4,
            horizon_s: 3600,
            seed,
            ..SimConfig::default()
        };
        simulate(&net, cfg, ElasticitySurface::constant(1.0), reqs)
            .map(|o| o.metrics)
            .map_err(|e| e.to_string())
    };
    // Service time grows with load, so each target is first run with a rough
    // estimate and then rerun at the rate its measured service time implies.
    let probe = uniform_requests(&net, 2000, 999);
    let rough = probe.iter().map(|r| r.direct_time_ms as f64 / 1000.0).sum::<f64>() / probe.len() as f64 + 60.0;
    let mut samples = Vec::new();
    for &u in &[0.5, 1.0, 1.5, 2.0, 3.0] {
        let pilot = run(u * fleet as f64 / rough, 100)?;
        let t_bar = pilot.system_load.ok_or("no completed trips")?.t_bar;
        for seed in [1, 2] {
            let m = run(u * fleet as f64 / t_bar, seed)?;
            let load = m.system_load.ok_or("no completed trips")?;
            samples.push((load.u, m.service_rate));
        }
    }
    let pts = samples
        .iter()
        .map(|(u, r)| format!("({u:.2}, {r:.3})"))
        .collect::<Vec<_>>()
        .join(" ");
    let fit = fit_scaling(&samples, 4).map_err(|e| format!("{e}; samples {pts}"))?;
    let sq: f64 = samples
        .iter()
        .map(|&(u, r)| (predict_performance(u, &fit.params).unwrap().0 - r).powi(2))
        .sum();
    let rmse = (sq / samples.len() as f64).sqrt();
    check(
        rmse <= 0.05,
        format!(
            "noiseless error {worst:.1e}; simulated fit alpha {:.3} beta {:.3} from {} informative samples, RMSE {rmse:.4} over {pts}",
            fit.params.alpha, fit.params.beta, fit.used
        ),
    )
}

fn round_trip(kept: &[Kept]) -> Verdict {
    for k in kept {
        let events = read_events(BufReader::new(&k.jsonl[..])).map_err(|e| format!("{}: {e}", k.label))?;
        let m = compute_metrics(&events, &k.emission).map_err(|e| format!("{}: {e}", k.label))?;
        if m != k.metrics {
            return Err(format!("{}: replayed metrics differ", k.label));
        }
    }
    check(!kept.is_empty(), format!("{} traces replayed to identical metrics", kept.len()))
}
