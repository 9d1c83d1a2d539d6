//! Event trace: one JSON object per line, ordered by time.
//!
//! Node fields carry external node ids. Times are written in seconds with
//! millisecond resolution and read back exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{Mode, RequestId, VehicleId};
use crate::netgraph::WeightMode;
use crate::{Cost, Millis, Money};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(with = "seconds")]
    pub t: Millis,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Which tally a stretch of driving counts toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    /// At least one passenger aboard.
    Occupied,
    /// Empty, heading to a pickup.
    Empty,
    Reposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    /// Always first.
    RunStarted {
        fleet: u32,
        capacity: u32,
        horizon_s: u64,
        epoch_length_s: u64,
        weight_mode: WeightMode,
        seed: u64,
    },
    RequestCreated {
        request: RequestId,
        origin: u64,
        destination: u64,
        direct_cost: Cost,
        direct_length_mm: i64,
        direct_time_ms: Millis,
    },
    ModeDecided {
        request: RequestId,
        mode: Mode,
        price: Money,
        max_detour_ratio: f64,
    },
    Matched {
        vehicle: VehicleId,
        requests: Vec<RequestId>,
        route_cost: Cost,
        utility: Money,
    },
    PickedUp {
        vehicle: VehicleId,
        request: RequestId,
        node: u64,
    },
    DroppedOff {
        vehicle: VehicleId,
        request: RequestId,
        node: u64,
        ride_cost: Cost,
        ride_length_mm: i64,
        ride_time_ms: Millis,
    },
    Cancelled {
        request: RequestId,
    },
    RepositionStarted {
        vehicle: VehicleId,
        target: u64,
        request: Option<RequestId>,
        cost: Cost,
    },
    /// Driving completed since the vehicle's previous movement event.
    VehicleMoved {
        vehicle: VehicleId,
        node: u64,
        length_mm: i64,
        time_ms: Millis,
        leg: Leg,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RunStarted { .. } => "RunStarted",
            Self::RequestCreated { .. } => "RequestCreated",
            Self::ModeDecided { .. } => "ModeDecided",
            Self::Matched { .. } => "Matched",
            Self::PickedUp { .. } => "PickedUp",
            Self::DroppedOff { .. } => "DroppedOff",
            Self::Cancelled { .. } => "Cancelled",
            Self::RepositionStarted { .. } => "RepositionStarted",
            Self::VehicleMoved { .. } => "VehicleMoved",
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("trace line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

pub fn write_events<W: Write>(out: W, events: &[Event]) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_jsonl(events: &[Event]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events(&mut buf, events).expect("writing to memory");
    buf
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(|err| TraceError::Malformed {
            line: i + 1,
            reason: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<Event>, TraceError> {
    read_events(BufReader::new(File::open(path)?))
}

mod seconds {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::Millis;

    pub fn serialize<S: Serializer>(ms: &Millis, s: S) -> Result<S::Ok, S::Error> {
        if ms % 1000 == 0 {
            s.serialize_i64(ms / 1000)
        } else {
            s.serialize_f64(*ms as f64 / 1000.0)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Millis, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() {
            return Err(serde::de::Error::custom("non-finite time"));
        }
        Ok((secs * 1000.0).round() as Millis)
    }
}
