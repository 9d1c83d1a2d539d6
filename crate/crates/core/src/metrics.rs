//! Performance metrics recomputed from an event trace.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{Mode, RequestId, VehicleId};
use crate::scaling::{system_load, SystemLoad};
use crate::trace::{Event, EventKind, Leg};
use crate::{Millis, Money};

pub const DEFAULT_GRAMS_PER_VEHICLE_KM: f64 = 150.0;

/// Tailpipe CO₂ per vehicle-kilometre. The default is a placeholder for a
/// typical passenger car, not a calibrated value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    pub grams_per_vehicle_km: f64,
}

impl Default for EmissionModel {
    fn default() -> Self {
        Self {
            grams_per_vehicle_km: DEFAULT_GRAMS_PER_VEHICLE_KM,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("malformed trace at event {index}: {reason}")]
    MalformedTrace { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tallies {
    pub created: u64,
    pub rejected: u64,
    pub solo: u64,
    pub shared: u64,
    pub matched: u64,
    pub picked_up: u64,
    pub completed: u64,
    pub cancelled: u64,
    /// Entered matching but neither completed nor cancelled by trace end.
    pub unfinished: u64,
}

impl Tallies {
    /// Requests that reached matching (not rejected at pricing).
    pub fn entering(&self) -> u64 {
        self.solo + self.shared
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Completed over entering matching; 1.0 when nothing entered.
    pub service_rate: f64,
    pub service_rate_undefined: bool,
    /// Time-average over the horizon of scheduled plus onboard passengers per vehicle.
    pub avg_scheduled_per_vehicle: f64,
    /// Over completed shared requests, relative to their direct trips.
    pub avg_detour_time_s: f64,
    pub avg_detour_distance_km: f64,
    pub vmt_km: f64,
    pub vmt_occupied_km: f64,
    pub vmt_empty_km: f64,
    pub vmt_reposition_km: f64,
    pub avg_revenue_per_vehicle: Money,
    /// Request to pickup, over picked-up requests.
    pub avg_wait_s: f64,
    pub emissions_total_kg: f64,
    /// Emissions over the direct distance of completed requests.
    pub emissions_per_passenger_km: f64,
    pub passenger_km: f64,
    /// Measured from the trace; absent when any component is zero.
    pub system_load: Option<SystemLoad<f64>>,
    pub tallies: Tallies,
}

impl Metrics {
    /// `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let v = serde_json::to_value(self).expect("metrics serialize");
        flatten("", &v, &mut s);
        s
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        other => {
            let _ = writeln!(out, "{prefix} = {other}");
        }
    }
}

#[derive(Default)]
struct RequestTrack {
    created: Millis,
    direct_length_mm: i64,
    direct_time_ms: Millis,
    mode: Option<Mode>,
    price: Money,
    matched: Option<Millis>,
    picked: bool,
    done: bool,
}

fn track<'a>(reqs: &'a mut HashMap<RequestId, RequestTrack>, id: &RequestId, index: usize) -> Result<&'a mut RequestTrack, MetricsError> {
    reqs.get_mut(id).ok_or_else(|| MetricsError::MalformedTrace {
        index,
        reason: format!("unknown request {}", id.0),
    })
}

pub fn compute_metrics(events: &[Event], emission: &EmissionModel) -> Result<Metrics, MetricsError> {
    let bad = |index: usize, reason: String| MetricsError::MalformedTrace { index, reason };
    let Some(Event {
        kind: EventKind::RunStarted {
            fleet, horizon_s, ..
        },
        ..
    }) = events.first()
    else {
        return Err(bad(0, "trace must start with RunStarted".into()));
    };
    let fleet = f64::from(*fleet);
    let horizon_ms = *horizon_s as Millis * 1000;

    let mut reqs: HashMap<RequestId, RequestTrack> = HashMap::new();
    let mut t = Tallies::default();
    let mut last_t = 0;
    let (mut occ, mut empty, mut repo) = (0i64, 0i64, 0i64);
    let (mut detour_t, mut detour_d, mut n_detour) = (0i64, 0i64, 0u64);
    let (mut wait_sum, mut service_sum) = (0i64, 0i64);
    let mut revenue = 0.0;
    let mut passenger_mm = 0i64;
    // Integral of committed passengers over [0, horizon], in passenger-ms.
    let (mut level, mut area) = (0i64, 0i128);
    let mut per_vehicle: HashMap<VehicleId, i64> = HashMap::new();

    for (i, e) in events.iter().enumerate().skip(1) {
        if e.t < last_t {
            return Err(bad(i, format!("time goes backwards ({} < {last_t})", e.t)));
        }
        let lo = last_t.min(horizon_ms);
        let hi = e.t.min(horizon_ms);
        area += i128::from(level) * i128::from(hi - lo);
        last_t = e.t;
        match &e.kind {
            EventKind::RunStarted { .. } => return Err(bad(i, "second RunStarted".into())),
            EventKind::RequestCreated {
                request,
                direct_length_mm,
                direct_time_ms,
                ..
            } => {
                let fresh = RequestTrack {
                    created: e.t,
                    direct_length_mm: *direct_length_mm,
                    direct_time_ms: *direct_time_ms,
                    ..Default::default()
                };
                if reqs.insert(*request, fresh).is_some() {
                    return Err(bad(i, format!("request {} created twice", request.0)));
                }
                t.created += 1;
            }
            EventKind::ModeDecided { request, mode, price, .. } => {
                let r = track(&mut reqs, request, i)?;
                if r.mode.replace(*mode).is_some() {
                    return Err(bad(i, format!("request {} decided twice", request.0)));
                }
                r.price = *price;
                match mode {
                    Mode::Solo => t.solo += 1,
                    Mode::Shared => t.shared += 1,
                    Mode::Rejected => t.rejected += 1,
                    Mode::Undecided => return Err(bad(i, "undecided mode".into())),
                }
            }
            EventKind::Matched { vehicle, requests, .. } => {
                for id in requests {
                    let r = track(&mut reqs, id, i)?;
                    if r.matched.replace(e.t).is_some() {
                        return Err(bad(i, format!("request {} matched twice", id.0)));
                    }
                }
                t.matched += requests.len() as u64;
                level += requests.len() as i64;
                *per_vehicle.entry(*vehicle).or_default() += requests.len() as i64;
            }
            EventKind::PickedUp { request, .. } => {
                let r = track(&mut reqs, request, i)?;
                if r.matched.is_none() || r.picked {
                    return Err(bad(i, format!("request {} picked up out of order", request.0)));
                }
                r.picked = true;
                wait_sum += e.t - r.created;
                t.picked_up += 1;
            }
            EventKind::DroppedOff {
                vehicle,
                request,
                ride_length_mm,
                ride_time_ms,
                ..
            } => {
                let r = track(&mut reqs, request, i)?;
                if !r.picked || r.done {
                    return Err(bad(i, format!("request {} dropped off out of order", request.0)));
                }
                r.done = true;
                t.completed += 1;
                service_sum += e.t - r.matched.expect("picked implies matched");
                revenue += r.price;
                passenger_mm += r.direct_length_mm;
                if r.mode == Some(Mode::Shared) {
                    detour_t += ride_time_ms - r.direct_time_ms;
                    detour_d += ride_length_mm - r.direct_length_mm;
                    n_detour += 1;
                }
                level -= 1;
                let c = per_vehicle.entry(*vehicle).or_default();
                *c -= 1;
                if *c < 0 {
                    return Err(bad(i, format!("vehicle {} dropped off more than it carried", vehicle.0)));
                }
            }
            EventKind::Cancelled { request } => {
                let r = track(&mut reqs, request, i)?;
                if r.matched.is_some() || r.done {
                    return Err(bad(i, format!("request {} cancelled after assignment", request.0)));
                }
                r.done = true;
                t.cancelled += 1;
            }
            EventKind::RepositionStarted { .. } => {}
            EventKind::VehicleMoved { length_mm, leg, .. } => match leg {
                Leg::Occupied => occ += length_mm,
                Leg::Empty => empty += length_mm,
                Leg::Reposition => repo += length_mm,
            },
        }
    }
    if last_t < horizon_ms {
        area += i128::from(level) * i128::from(horizon_ms - last_t);
    }
    t.unfinished = t.entering() - t.completed - t.cancelled;

    let km = |mm: i64| mm as f64 / 1e6;
    let mean = |sum: f64, n: u64| if n == 0 { 0.0 } else { sum / n as f64 };
    let entering = t.entering();
    let vmt_mm = occ + empty + repo;
    let emissions_total_kg = emission.grams_per_vehicle_km * km(vmt_mm) / 1000.0;
    let passenger_km = km(passenger_mm);
    let horizon_sf = *horizon_s as f64;
    let t_bar = mean(service_sum as f64 / 1000.0, t.completed);
    let system_load = if horizon_sf > 0.0 { system_load(entering as f64 / horizon_sf, fleet, t_bar).ok() } else { None };

    Ok(Metrics {
        service_rate: if entering == 0 { 1.0 } else { t.completed as f64 / entering as f64 },
        service_rate_undefined: entering == 0,
        avg_scheduled_per_vehicle: if horizon_ms > 0 && fleet > 0.0 {
            area as f64 / horizon_ms as f64 / fleet
        } else {
            0.0
        },
        avg_detour_time_s: mean(detour_t as f64 / 1000.0, n_detour),
        avg_detour_distance_km: mean(km(detour_d), n_detour),
        vmt_km: km(vmt_mm),
        vmt_occupied_km: km(occ),
        vmt_empty_km: km(empty),
        vmt_reposition_km: km(repo),
        avg_revenue_per_vehicle: if fleet > 0.0 { revenue / fleet } else { 0.0 },
        avg_wait_s: mean(wait_sum as f64 / 1000.0, t.picked_up),
        emissions_total_kg,
        emissions_per_passenger_km: if passenger_km > 0.0 { emissions_total_kg / passenger_km } else { 0.0 },
        passenger_km,
        system_load,
        tallies: t,
    })
}
