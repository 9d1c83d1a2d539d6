//! Batch, agent-based simulation of pooled (ride-sharing) and solo ride-hailing
//! fleets on road networks.
//!
//! One decision epoch runs the pipeline
//! pricing → candidate routing → trip/vehicle assignment → repositioning,
//! then vehicles move along shortest paths until the next epoch. Every run
//! produces an event trace from which all reported metrics are recomputed.
//!
//! The combinatorial solvers ([`matching::solve_assignment`],
//! [`repositioning::min_cost_max_matching`]) and the scaling-law predictor
//! ([`scaling`]) are generic over their scalar type; the aliases below fix the
//! types the simulator itself uses.
//!
//! ```
//! use poolsim::config::SimConfig;
//! use poolsim::demand::{synthesize_requests, DemandConfig, DemandSource};
//! use poolsim::engine::simulate;
//! use poolsim::netgraph::{synth, WeightMode};
//! use poolsim::pricing::ElasticitySurface;
//!
//! let net = synth::grid(8, 8, 200.0, 10.0, WeightMode::Distance);
//! let cfg = SimConfig { horizon_s: 600, fleet_size: 10, ..SimConfig::default() };
//! let demand = DemandConfig {
//!     source: DemandSource::Uniform { rate: 0.05 },
//!     horizon: cfg.horizon_ms(),
//!     seed: cfg.seed,
//! };
//! let requests = synthesize_requests(&net, &demand)?;
//! let out = simulate(&net, cfg, ElasticitySurface::default(), requests)?;
//! assert!(out.metrics.service_rate > 0.0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod config;
pub mod demand;
pub mod engine;
pub mod matching;
pub mod metrics;
pub mod netgraph;
pub mod plot;
pub mod pricing;
pub mod repositioning;
pub mod rng;
pub mod routing;
pub mod scalar;
pub mod scaling;
pub mod trace;

mod tabular;

pub use scalar::Scalar;

/// Network cost in integer millimetres (distance mode) or milliseconds
/// (travel-time mode).
pub type Cost = i64;

/// Currency amounts.
pub type Money = f64;

/// Simulation clock, in milliseconds since the start of the run.
pub type Millis = i64;

pub type CandidateMatchF64 = matching::CandidateMatch<Money>;
pub type AssignmentF64 = matching::Assignment<Money>;
pub type ScalingParamsF64 = scaling::ScalingParams<f64>;
pub type SystemLoadF64 = scaling::SystemLoad<f64>;
pub type ScalingFitF64 = scaling::ScalingFit<f64>;

pub use netgraph::{NodeId, RoadNetwork, WeightMode};
