use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use poolsim::demand::{init_fleet, parse_requests, synthesize_requests, DemandConfig, DemandSource, Mode};
use poolsim::netgraph::synth;
use poolsim::pricing::{decide_mode, ElasticitySurface, Tariff};
use poolsim::{Cost, NodeId, RoadNetwork, WeightMode};

#[allow(clippy::needless_range_loop)]
fn floyd_warshall(net: &RoadNetwork) -> Vec<Vec<Option<Cost>>> {
    let n = net.node_count();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for (i, e) in net.edges().iter().enumerate() {
        let w = net.weight(i as u32);
        let cell = &mut d[e.from.index()][e.to.index()];
        *cell = Some(cell.map_or(w, |c: Cost| c.min(w)));
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k][j] {
                    if d[i][j].is_none_or(|c| ik + kj < c) {
                        d[i][j] = Some(ik + kj);
                    }
                }
            }
        }
    }
    d
}

#[test]
fn uniform_origins_pass_chi_square() {
    let net = synth::grid(10, 10, 200.0, 10.0, WeightMode::Distance);
    let cfg = DemandConfig {
        source: DemandSource::Uniform { rate: 10_000.0 / 3600.0 },
        horizon: 3_600_000,
        seed: 17,
    };
    let reqs = synthesize_requests(&net, &cfg).unwrap();
    assert!(reqs.len() > 9000);
    let mut counts = vec![0f64; net.node_count()];
    for r in &reqs {
        counts[r.origin.index()] += 1.0;
    }
    let expected = reqs.len() as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat:.1} >= {critical:.1}");
}

#[test]
fn replayed_direct_costs_match_floyd_warshall() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = synth::random_connected(50, 3, &mut rng, WeightMode::Distance);
    let fw = floyd_warshall(&net);
    let mut text = String::from("request_id,t_request_s,origin_node,dest_node\n");
    for id in 0..100 {
        let o = rng.random_range(0..50u32);
        let d = (o + rng.random_range(1..50u32)) % 50;
        let t = rng.random_range(0..3600);
        let _ = writeln!(text, "{id},{t},{},{}", net.external_id(NodeId(o)), net.external_id(NodeId(d)));
    }
    let reqs = parse_requests(&net, &text, "rows.csv").unwrap();
    assert_eq!(reqs.len(), 100);
    assert!(reqs.windows(2).all(|w| (w[0].t_request, w[0].id) <= (w[1].t_request, w[1].id)));
    for r in &reqs {
        assert_eq!(Some(r.direct_cost), fw[r.origin.index()][r.destination.index()]);
    }
}

#[test]
fn fleet_follows_hot_zone_origins() {
    let net = synth::grid(12, 12, 200.0, 10.0, WeightMode::Distance);
    let zones: Vec<Vec<NodeId>> = (0..10).map(|z| vec![NodeId(z * 13), NodeId(z * 13 + 1)]).collect();
    let weights = vec![0.3, 0.2, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05];
    let cfg = DemandConfig {
        source: DemandSource::HotZones { zones, weights, rate: 5.0 },
        horizon: 600_000,
        seed: 8,
    };
    let reqs = synthesize_requests(&net, &cfg).unwrap();
    let window = 30_000;
    let fleet = init_fleet(&net, 500, 4, &reqs, window, 3);

    let first: Vec<_> = reqs.iter().filter(|r| r.t_request <= window).collect();
    let mut origin_hist: HashMap<NodeId, f64> = HashMap::new();
    for r in &first {
        *origin_hist.entry(r.origin).or_default() += 1.0 / first.len() as f64;
    }
    let mut fleet_hist: HashMap<NodeId, f64> = HashMap::new();
    for v in &fleet {
        *fleet_hist.entry(v.position.node).or_default() += 1.0 / fleet.len() as f64;
    }
    let tv: f64 = origin_hist
        .keys()
        .chain(fleet_hist.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|n| (origin_hist.get(n).unwrap_or(&0.0) - fleet_hist.get(n).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv <= 0.05, "total variation {tv}");
    assert_eq!(fleet, init_fleet(&net, 500, 4, &reqs, window, 3));
}

#[test]
fn synthesis_is_reproducible() {
    let net = synth::grid(8, 8, 200.0, 10.0, WeightMode::Distance);
    let cfg = DemandConfig {
        source: DemandSource::Uniform { rate: 0.5 },
        horizon: 1_800_000,
        seed: 99,
    };
    let a = synthesize_requests(&net, &cfg).unwrap();
    assert_eq!(a, synthesize_requests(&net, &cfg).unwrap());
    let other = synthesize_requests(&net, &DemandConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn no_solo_decisions_without_solo_service() {
    let net = synth::grid(6, 6, 200.0, 10.0, WeightMode::Distance);
    let reqs = synthesize_requests(
        &net,
        &DemandConfig {
            source: DemandSource::Uniform { rate: 1.0 },
            horizon: 1_000_000,
            seed: 1,
        },
    )
    .unwrap();
    let tariff = Tariff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen = HashMap::new();
    for surface in [ElasticitySurface::default(), ElasticitySurface::constant(0.0)] {
        for r in &reqs {
            let d = decide_mode(r, &tariff, &surface, false, &mut rng);
            assert_ne!(d.mode, Mode::Solo);
            *seen.entry(d.mode).or_insert(0) += 1;
        }
    }
    assert!(seen.contains_key(&Mode::Shared) && seen.contains_key(&Mode::Rejected));
}

#[test]
fn shared_decisions_carry_the_offered_detour() {
    let net = synth::grid(6, 6, 200.0, 10.0, WeightMode::Distance);
    let reqs = synthesize_requests(
        &net,
        &DemandConfig {
            source: DemandSource::Uniform { rate: 1.0 },
            horizon: 300_000,
            seed: 4,
        },
    )
    .unwrap();
    let tariff = Tariff::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for r in &reqs {
        let d = decide_mode(r, &tariff, &ElasticitySurface::default(), true, &mut rng);
        match d.mode {
            Mode::Shared => assert_eq!(d.max_detour_ratio, tariff.offered_detour_ratio),
            Mode::Solo => assert_eq!(d.max_detour_ratio, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
