//! Builds the network, request stream and sample sets a command needs.

use std::path::Path;

use anyhow::{anyhow, Context};

use poolsim::config::{DemandKind, SimConfig};
use poolsim::demand::{load_requests, synthesize_requests, DemandConfig, DemandSource, Request};
use poolsim::netgraph::{load_network, synth};
use poolsim::RoadNetwork;

use crate::{exit, Classify, Failure};

pub fn network(cfg: &SimConfig) -> Result<RoadNetwork, Failure> {
    let n = &cfg.network;
    match (&n.nodes, &n.edges) {
        (Some(nodes), Some(edges)) => load_network(nodes, edges, cfg.weight_mode).code(exit::INPUT),
        (None, None) => {
            let (rows, cols) = n.grid.unwrap_or((20, 20));
            Ok(synth::grid(rows, cols, n.grid_spacing_m, n.grid_speed_mps, cfg.weight_mode))
        }
        _ => Err(anyhow!("network.nodes and network.edges must be given together")).code(exit::CONFIG),
    }
}

pub fn requests(net: &RoadNetwork, cfg: &SimConfig) -> Result<Vec<Request>, Failure> {
    let d = &cfg.demand;
    let source = match d.source {
        DemandKind::File => {
            let file = d
                .file
                .as_deref()
                .ok_or_else(|| anyhow!("demand.source = file needs demand.file"))
                .code(exit::CONFIG)?;
            return load_requests(net, file).code(exit::INPUT);
        }
        DemandKind::Uniform => DemandSource::Uniform { rate: d.rate_per_s },
        DemandKind::Hotzones => {
            let zones = d
                .zones
                .iter()
                .map(|z| {
                    z.iter()
                        .map(|&ext| net.node(ext).ok_or_else(|| anyhow!("demand.zones: unknown node {ext}")))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
                .code(exit::INPUT)?;
            DemandSource::HotZones {
                zones,
                weights: d.weights.clone(),
                rate: d.rate_per_s,
            }
        }
    };
    let dc = DemandConfig {
        source,
        horizon: cfg.horizon_ms(),
        seed: cfg.seed,
    };
    synthesize_requests(net, &dc).code(exit::INPUT)
}

/// `u,service_rate` rows; a header line is optional.
pub fn samples(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| path.display().to_string())
        .code(exit::IO)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [u, r] => u.parse::<f64>().and_then(|u| r.parse::<f64>().map(|r| (u, r))).ok(),
            _ => None,
        };
        match parsed {
            Some(p) => out.push(p),
            None if i == 0 => {}
            None => {
                return Err(anyhow!("{}:{}: expected `u,service_rate`", path.display(), i + 1)).code(exit::INPUT)
            }
        }
    }
    Ok(out)
}
