//! Tabular data for offline plots, derived from a trace.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::demand::{Mode, RequestId, VehicleId};
use crate::metrics::MetricsError;
use crate::trace::{Event, EventKind};
use crate::Millis;

pub const EPOCH_HEADER: &str = "epoch,t_s,waiting,assigned,onboard,completed,cancelled,idle_vehicles,occupied_vehicles,vmt_km";
pub const POSITION_HEADER: &str = "t_s,vehicle,node";

/// State at the end of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochRow {
    pub epoch: u64,
    pub t: Millis,
    pub waiting: u64,
    pub assigned: u64,
    pub onboard: u64,
    /// Cumulative.
    pub completed: u64,
    /// Cumulative.
    pub cancelled: u64,
    /// No passenger scheduled or aboard.
    pub idle_vehicles: u64,
    /// At least one passenger aboard.
    pub occupied_vehicles: u64,
    /// Cumulative.
    pub vmt_km: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotExport {
    pub epochs: Vec<EpochRow>,
    /// `(t, vehicle, external node)`: last node each vehicle reached, sampled
    /// every interval. Vehicles that have not moved yet are omitted.
    pub positions: Vec<(Millis, VehicleId, u64)>,
}

impl PlotExport {
    pub fn epochs_csv(&self) -> String {
        let mut s = format!("{EPOCH_HEADER}\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.t as f64 / 1000.0,
                r.waiting,
                r.assigned,
                r.onboard,
                r.completed,
                r.cancelled,
                r.idle_vehicles,
                r.occupied_vehicles,
                r.vmt_km
            );
        }
        s
    }

    pub fn positions_csv(&self) -> String {
        let mut s = format!("{POSITION_HEADER}\n");
        for (t, v, n) in &self.positions {
            let _ = writeln!(s, "{},{},{n}", *t as f64 / 1000.0, v.0);
        }
        s
    }
}

#[derive(Default)]
struct Tally {
    waiting: u64,
    assigned: u64,
    onboard: u64,
    completed: u64,
    cancelled: u64,
    vmt_mm: i64,
    committed: HashMap<VehicleId, (u64, u64)>,
    node: BTreeMap<VehicleId, u64>,
}

impl Tally {
    fn row(&self, epoch: u64, t: Millis, fleet: u64) -> EpochRow {
        let busy = self.committed.values().filter(|(s, o)| s + o > 0).count() as u64;
        EpochRow {
            epoch,
            t,
            waiting: self.waiting,
            assigned: self.assigned,
            onboard: self.onboard,
            completed: self.completed,
            cancelled: self.cancelled,
            idle_vehicles: fleet - busy,
            occupied_vehicles: self.committed.values().filter(|(_, o)| *o > 0).count() as u64,
            vmt_km: self.vmt_mm as f64 / 1e6,
        }
    }

    fn apply(&mut self, e: &Event, modes: &mut HashMap<RequestId, Mode>) {
        match &e.kind {
            EventKind::ModeDecided { request, mode, .. } => {
                modes.insert(*request, *mode);
                if *mode != Mode::Rejected {
                    self.waiting += 1;
                }
            }
            EventKind::Matched { vehicle, requests, .. } => {
                let k = requests.len() as u64;
                self.waiting -= k;
                self.assigned += k;
                self.committed.entry(*vehicle).or_default().0 += k;
            }
            EventKind::PickedUp { vehicle, node, .. } => {
                self.assigned -= 1;
                self.onboard += 1;
                let c = self.committed.entry(*vehicle).or_default();
                c.0 -= 1;
                c.1 += 1;
                self.node.insert(*vehicle, *node);
            }
            EventKind::DroppedOff { vehicle, node, .. } => {
                self.onboard -= 1;
                self.completed += 1;
                self.committed.entry(*vehicle).or_default().1 -= 1;
                self.node.insert(*vehicle, *node);
            }
            EventKind::Cancelled { .. } => {
                self.waiting -= 1;
                self.cancelled += 1;
            }
            EventKind::VehicleMoved {
                vehicle, node, length_mm, ..
            } => {
                self.vmt_mm += length_mm;
                self.node.insert(*vehicle, *node);
            }
            EventKind::RunStarted { .. } | EventKind::RequestCreated { .. } | EventKind::RepositionStarted { .. } => {}
        }
    }
}

/// One row per epoch through the last event, and position samples every
/// `sample_every` milliseconds.
pub fn export_plot(events: &[Event], sample_every: Millis) -> Result<PlotExport, MetricsError> {
    // Validates ordering and lifecycle, so the tallies below cannot underflow.
    crate::metrics::compute_metrics(events, &Default::default())?;
    let Some(EventKind::RunStarted {
        fleet, epoch_length_s, ..
    }) = events.first().map(|e| &e.kind)
    else {
        unreachable!("checked by compute_metrics");
    };
    let epoch_ms = *epoch_length_s as Millis * 1000;
    let sample_every = sample_every.max(1);
    let last = events.last().map_or(0, |e| e.t);

    let mut out = PlotExport::default();
    let mut tally = Tally::default();
    let mut modes = HashMap::new();
    let mut i = 1;
    let mut next_sample = 0;
    let mut epoch = 0;
    loop {
        let boundary = (epoch as Millis + 1) * epoch_ms;
        while next_sample <= boundary.min(last) {
            while i < events.len() && events[i].t <= next_sample {
                tally.apply(&events[i], &mut modes);
                i += 1;
            }
            out.positions
                .extend(tally.node.iter().map(|(v, n)| (next_sample, *v, *n)));
            next_sample += sample_every;
        }
        while i < events.len() && events[i].t <= boundary {
            tally.apply(&events[i], &mut modes);
            i += 1;
        }
        out.epochs.push(tally.row(epoch, boundary, u64::from(*fleet)));
        if boundary >= last {
            break;
        }
        epoch += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::demand::{synthesize_requests, DemandConfig, DemandSource};
    use crate::engine::simulate;
    use crate::netgraph::{synth, WeightMode};
    use crate::pricing::ElasticitySurface;

    #[test]
    fn consistent_with_metrics() {
        let net = synth::grid(5, 5, 200.0, 10.0, WeightMode::Distance);
        let reqs = synthesize_requests(
            &net,
            &DemandConfig {
                source: DemandSource::Uniform { rate: 0.05 },
                horizon: 600_000,
                seed: 2,
            },
        )
        .unwrap();
        let cfg = SimConfig {
            horizon_s: 600,
            fleet_size: 5,
            ..SimConfig::default()
        };
        let out = simulate(&net, cfg, ElasticitySurface::default(), reqs).unwrap();
        let p = export_plot(&out.events, 60_000).unwrap();
        let last = p.epochs.last().unwrap();
        assert_eq!(last.completed, out.metrics.tallies.completed);
        assert_eq!(last.cancelled, out.metrics.tallies.cancelled);
        assert!((last.vmt_km - out.metrics.vmt_km).abs() < 1e-9);
        assert!(p.epochs.windows(2).all(|w| w[0].t + 30_000 == w[1].t));
        assert!(p.epochs.iter().all(|r| r.idle_vehicles + r.occupied_vehicles <= 5));
        let csv = p.epochs_csv();
        assert!(csv.starts_with(EPOCH_HEADER));
        assert_eq!(csv.lines().count(), p.epochs.len() + 1);
        assert!(p.positions.iter().all(|(t, _, _)| t % 60_000 == 0));
    }
}
