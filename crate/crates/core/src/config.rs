//! Run configuration: an INI-like text file plus `key=value` overrides.
//!
//! ```text
//! # comment
//! horizon_s = 3600
//! [fleet]
//! n = 200
//! capacity = 4
//! ```
//!
//! A key inside `[section]` is addressed as `section.key`. Unknown keys are
//! errors. Relative paths resolve against the config file's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{CostModel, MatchParams, DEFAULT_NODE_LIMIT};
use crate::metrics::EmissionModel;
use crate::netgraph::WeightMode;
use crate::pricing::{ElasticitySurface, PricingError, Tariff};
use crate::repositioning::RepositionStrategy;
use crate::{Cost, Millis};

/// Where a setting came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
    Defaults,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Line(n) => write!(f, "line {n}"),
            Self::Override => f.write_str("--set"),
            Self::Defaults => f.write_str("defaults"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: expected `key = value` or `[section]`, got `{text}`")]
    Syntax { origin: Origin, text: String },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { key: String, origin: Origin },
    #[error("{origin}: `{key}` expects {expected}, got `{value}`")]
    TypeError {
        key: String,
        origin: Origin,
        expected: &'static str,
        value: String,
    },
    #[error("{origin}: `{key}` {reason}")]
    RangeError { key: String, origin: Origin, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandKind {
    File,
    Uniform,
    Hotzones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSettings {
    pub source: DemandKind,
    pub file: Option<PathBuf>,
    /// Requests per second, for synthetic sources.
    pub rate_per_s: f64,
    /// External node ids per zone.
    pub zones: Vec<Vec<u64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSettings {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Synthetic grid `(rows, cols)`, used when no files are given.
    pub grid: Option<(usize, usize)>,
    pub grid_spacing_m: f64,
    pub grid_speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Logistic,
    Constant,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingSettings {
    pub surface: SurfaceKind,
    pub a0: f64,
    pub a_discount: f64,
    pub a_detour: f64,
    /// Probability for the constant surface.
    pub p: f64,
    pub grid_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSettings {
    /// Reach bound from vehicle to pickup, in metres (distance mode) or
    /// seconds (travel-time mode).
    pub max_pickup: f64,
    pub max_combos_per_vehicle: usize,
    pub max_requests_per_vehicle: usize,
    /// Operating cost per metre or per second of added route.
    pub cost_per_unit: f64,
    pub wait_bonus_per_s: f64,
    pub node_limit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epoch_length_s: u64,
    pub horizon_s: u64,
    pub max_wait_s: u64,
    /// Extra time after the horizon to finish trips already underway.
    pub drain_cap_s: u64,
    pub allow_solo: bool,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub fleet_size: usize,
    pub capacity: u32,
    pub tariff: Tariff,
    pub pricing: PricingSettings,
    pub matching: MatchingSettings,
    pub reposition: RepositionStrategy,
    pub emission: EmissionModel,
    pub demand: DemandSettings,
    pub network: NetworkSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        let m = MatchParams::default();
        let ElasticitySurface::Logistic { a0, a_discount, a_detour } = ElasticitySurface::default() else {
            unreachable!("the default surface is logistic")
        };
        Self {
            epoch_length_s: 30,
            horizon_s: 3600,
            max_wait_s: 300,
            drain_cap_s: 7200,
            allow_solo: true,
            seed: 0,
            weight_mode: WeightMode::Distance,
            fleet_size: 100,
            capacity: 4,
            tariff: Tariff::default(),
            pricing: PricingSettings {
                surface: SurfaceKind::Logistic,
                a0,
                a_discount,
                a_detour,
                p: 1.0,
                grid_file: None,
            },
            matching: MatchingSettings {
                max_pickup: m.max_pickup_cost as f64 / 1000.0,
                max_combos_per_vehicle: m.max_combos_per_vehicle,
                max_requests_per_vehicle: m.max_requests_per_vehicle,
                cost_per_unit: m.cost_model.per_unit * 1000.0,
                wait_bonus_per_s: 0.0,
                node_limit: DEFAULT_NODE_LIMIT,
            },
            reposition: RepositionStrategy::Stay,
            emission: EmissionModel::default(),
            demand: DemandSettings {
                source: DemandKind::Uniform,
                file: None,
                rate_per_s: 1.0,
                zones: Vec::new(),
                weights: Vec::new(),
            },
            network: NetworkSettings {
                nodes: None,
                edges: None,
                grid: Some((20, 20)),
                grid_spacing_m: 200.0,
                grid_speed_mps: 10.0,
            },
        }
    }
}

impl SimConfig {
    pub fn epoch_ms(&self) -> Millis {
        self.epoch_length_s as Millis * 1000
    }

    pub fn horizon_ms(&self) -> Millis {
        self.horizon_s as Millis * 1000
    }

    pub fn max_wait_ms(&self) -> Millis {
        self.max_wait_s as Millis * 1000
    }

    pub fn drain_cap_ms(&self) -> Millis {
        self.drain_cap_s as Millis * 1000
    }

    /// Matching parameters in network cost units.
    pub fn match_params(&self) -> MatchParams {
        let per = self.weight_mode.units_per_base();
        MatchParams {
            max_pickup_cost: (self.matching.max_pickup * per).round() as Cost,
            max_combos_per_vehicle: self.matching.max_combos_per_vehicle,
            max_requests_per_vehicle: self.matching.max_requests_per_vehicle,
            cost_model: CostModel {
                per_unit: self.matching.cost_per_unit / per,
                wait_bonus_per_ms: self.matching.wait_bonus_per_s / 1000.0,
            },
        }
    }

    pub fn surface(&self) -> Result<ElasticitySurface, PricingError> {
        let p = &self.pricing;
        let s = match p.surface {
            SurfaceKind::Logistic => ElasticitySurface::Logistic {
                a0: p.a0,
                a_discount: p.a_discount,
                a_detour: p.a_detour,
            },
            SurfaceKind::Constant => ElasticitySurface::constant(p.p),
            SurfaceKind::Grid => {
                let path = p
                    .grid_file
                    .as_deref()
                    .ok_or_else(|| PricingError::Surface("pricing.grid_file is required for a grid surface".into()))?;
                ElasticitySurface::load_grid(path)?
            }
        };
        s.validate()?;
        Ok(s)
    }

    /// `section.key = value` lines that parse back to this configuration.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{} = {}\n", k.name, (k.get)(self))).collect()
    }
}

type Setter = fn(&mut SimConfig, &str, &Path) -> Result<(), Bad>;
type Getter = fn(&SimConfig) -> String;

enum Bad {
    Type(&'static str),
    Range(String),
}

struct Key {
    name: &'static str,
    set: Setter,
    get: Getter,
}

fn num<T: std::str::FromStr>(v: &str, what: &'static str) -> Result<T, Bad> {
    v.parse().map_err(|_| Bad::Type(what))
}

fn positive_u64(v: &str) -> Result<u64, Bad> {
    let x: i64 = num(v, "an integer")?;
    if x <= 0 {
        return Err(Bad::Range(format!("must be positive, got {x}")));
    }
    Ok(x as u64)
}

fn finite(v: &str) -> Result<f64, Bad> {
    let x: f64 = num(v, "a number")?;
    if !x.is_finite() {
        return Err(Bad::Type("a finite number"));
    }
    Ok(x)
}

fn non_negative(v: &str) -> Result<f64, Bad> {
    let x = finite(v)?;
    if x < 0.0 {
        return Err(Bad::Range(format!("must be >= 0, got {x}")));
    }
    Ok(x)
}

fn positive(v: &str) -> Result<f64, Bad> {
    let x = finite(v)?;
    if x <= 0.0 {
        return Err(Bad::Range(format!("must be > 0, got {x}")));
    }
    Ok(x)
}

fn boolean(v: &str) -> Result<bool, Bad> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Bad::Type("a boolean")),
    }
}

fn path(v: &str, base: &Path) -> Option<PathBuf> {
    if v.is_empty() {
        return None;
    }
    let p = PathBuf::from(v);
    Some(if p.is_relative() { base.join(p) } else { p })
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(v: &str, what: &'static str) -> Result<Vec<T>, Bad> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(s, what))
        .collect()
}

macro_rules! key {
    ($name:literal, |$c:ident, $v:ident, $base:ident| $set:expr, |$g:ident| $get:expr) => {
        Key {
            name: $name,
            set: |$c, $v, $base| {
                let _ = $base;
                $set;
                Ok(())
            },
            get: |$g| $get,
        }
    };
}

static KEYS: &[Key] = &[
    key!("epoch_length_s", |c, v, b| c.epoch_length_s = positive_u64(v)?, |c| c.epoch_length_s.to_string()),
    key!("horizon_s", |c, v, b| c.horizon_s = positive_u64(v)?, |c| c.horizon_s.to_string()),
    key!("max_wait_s", |c, v, b| c.max_wait_s = positive_u64(v)?, |c| c.max_wait_s.to_string()),
    key!("drain_cap_s", |c, v, b| c.drain_cap_s = num(v, "a non-negative integer")?, |c| c.drain_cap_s.to_string()),
    key!("allow_solo", |c, v, b| c.allow_solo = boolean(v)?, |c| c.allow_solo.to_string()),
    key!("seed", |c, v, b| c.seed = num(v, "a non-negative integer")?, |c| c.seed.to_string()),
    key!(
        "weight_mode",
        |c, v, b| c.weight_mode = match v {
            "distance" => WeightMode::Distance,
            "travel_time" => WeightMode::TravelTime,
            _ => return Err(Bad::Type("`distance` or `travel_time`")),
        },
        |c| match c.weight_mode {
            WeightMode::Distance => "distance".into(),
            WeightMode::TravelTime => "travel_time".into(),
        }
    ),
    key!("fleet.n", |c, v, b| c.fleet_size = positive_u64(v)? as usize, |c| c.fleet_size.to_string()),
    key!(
        "fleet.capacity",
        |c, v, b| c.capacity = {
            let x = positive_u64(v)?;
            u32::try_from(x).map_err(|_| Bad::Range(format!("too large: {x}")))?
        },
        |c| c.capacity.to_string()
    ),
    key!("tariff.base_fare", |c, v, b| c.tariff.base_fare = non_negative(v)?, |c| c.tariff.base_fare.to_string()),
    key!("tariff.per_km", |c, v, b| c.tariff.per_km = non_negative(v)?, |c| c.tariff.per_km.to_string()),
    key!(
        "tariff.shared_discount",
        |c, v, b| c.tariff.shared_discount = {
            let x = non_negative(v)?;
            if x >= 1.0 {
                return Err(Bad::Range(format!("must be below 1, got {x}")));
            }
            x
        },
        |c| c.tariff.shared_discount.to_string()
    ),
    key!(
        "tariff.offered_detour_ratio",
        |c, v, b| c.tariff.offered_detour_ratio = non_negative(v)?,
        |c| c.tariff.offered_detour_ratio.to_string()
    ),
    key!(
        "pricing.surface",
        |c, v, b| c.pricing.surface = match v {
            "logistic" => SurfaceKind::Logistic,
            "constant" => SurfaceKind::Constant,
            "grid" => SurfaceKind::Grid,
            _ => return Err(Bad::Type("`logistic`, `constant` or `grid`")),
        },
        |c| match c.pricing.surface {
            SurfaceKind::Logistic => "logistic".into(),
            SurfaceKind::Constant => "constant".into(),
            SurfaceKind::Grid => "grid".into(),
        }
    ),
    key!("pricing.a0", |c, v, b| c.pricing.a0 = finite(v)?, |c| c.pricing.a0.to_string()),
    key!("pricing.a_discount", |c, v, b| c.pricing.a_discount = non_negative(v)?, |c| c.pricing.a_discount.to_string()),
    key!("pricing.a_detour", |c, v, b| c.pricing.a_detour = non_negative(v)?, |c| c.pricing.a_detour.to_string()),
    key!(
        "pricing.p",
        |c, v, b| c.pricing.p = {
            let x = non_negative(v)?;
            if x > 1.0 {
                return Err(Bad::Range(format!("must be a probability, got {x}")));
            }
            x
        },
        |c| c.pricing.p.to_string()
    ),
    key!("pricing.grid_file", |c, v, b| c.pricing.grid_file = path(v, b), |c| show_path(&c.pricing.grid_file)),
    key!("matching.max_pickup", |c, v, b| c.matching.max_pickup = positive(v)?, |c| c.matching.max_pickup.to_string()),
    key!(
        "matching.max_combos_per_vehicle",
        |c, v, b| c.matching.max_combos_per_vehicle = positive_u64(v)? as usize,
        |c| c.matching.max_combos_per_vehicle.to_string()
    ),
    key!(
        "matching.max_requests_per_vehicle",
        |c, v, b| c.matching.max_requests_per_vehicle = positive_u64(v)? as usize,
        |c| c.matching.max_requests_per_vehicle.to_string()
    ),
    key!(
        "matching.cost_per_unit",
        |c, v, b| c.matching.cost_per_unit = non_negative(v)?,
        |c| c.matching.cost_per_unit.to_string()
    ),
    key!(
        "matching.wait_bonus_per_s",
        |c, v, b| c.matching.wait_bonus_per_s = non_negative(v)?,
        |c| c.matching.wait_bonus_per_s.to_string()
    ),
    key!("matching.node_limit", |c, v, b| c.matching.node_limit = positive_u64(v)?, |c| c.matching.node_limit.to_string()),
    key!(
        "reposition.strategy",
        |c, v, b| c.reposition = v.parse().map_err(Bad::Range)?,
        |c| c.reposition.to_string()
    ),
    key!(
        "emission.grams_per_vehicle_km",
        |c, v, b| c.emission.grams_per_vehicle_km = positive(v)?,
        |c| c.emission.grams_per_vehicle_km.to_string()
    ),
    key!(
        "demand.source",
        |c, v, b| c.demand.source = match v {
            "file" => DemandKind::File,
            "uniform" => DemandKind::Uniform,
            "hotzones" => DemandKind::Hotzones,
            _ => return Err(Bad::Type("`file`, `uniform` or `hotzones`")),
        },
        |c| match c.demand.source {
            DemandKind::File => "file".into(),
            DemandKind::Uniform => "uniform".into(),
            DemandKind::Hotzones => "hotzones".into(),
        }
    ),
    key!("demand.file", |c, v, b| c.demand.file = path(v, b), |c| show_path(&c.demand.file)),
    key!("demand.rate_per_s", |c, v, b| c.demand.rate_per_s = positive(v)?, |c| c.demand.rate_per_s.to_string()),
    key!(
        "demand.zones",
        |c, v, b| c.demand.zones = v
            .split('|')
            .map(|z| parse_list(z, "node ids separated by `,`, zones by `|`"))
            .collect::<Result<_, _>>()?,
        |c| c.demand.zones.iter().map(|z| list(z)).collect::<Vec<_>>().join("|")
    ),
    key!(
        "demand.weights",
        |c, v, b| c.demand.weights = parse_list(v, "comma-separated numbers")?,
        |c| list(&c.demand.weights)
    ),
    key!("network.nodes", |c, v, b| c.network.nodes = path(v, b), |c| show_path(&c.network.nodes)),
    key!("network.edges", |c, v, b| c.network.edges = path(v, b), |c| show_path(&c.network.edges)),
    key!(
        "network.grid",
        |c, v, b| c.network.grid = if v.is_empty() {
            None
        } else {
            let (r, k) = v.split_once('x').ok_or(Bad::Type("`<rows>x<cols>`"))?;
            let (r, k) = (positive_u64(r.trim())? as usize, positive_u64(k.trim())? as usize);
            Some((r, k))
        },
        |c| c.network.grid.map(|(r, k)| format!("{r}x{k}")).unwrap_or_default()
    ),
    key!(
        "network.grid_spacing_m",
        |c, v, b| c.network.grid_spacing_m = positive(v)?,
        |c| c.network.grid_spacing_m.to_string()
    ),
    key!(
        "network.grid_speed_mps",
        |c, v, b| c.network.grid_speed_mps = positive(v)?,
        |c| c.network.grid_speed_mps.to_string()
    ),
];

/// Every accepted key, in documentation order.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|k| k.name)
}

fn apply(cfg: &mut SimConfig, key: &str, value: &str, origin: Origin, base: &Path) -> Result<(), ConfigError> {
    let k = KEYS.iter().find(|k| k.name == key).ok_or_else(|| ConfigError::UnknownKey {
        key: key.to_string(),
        origin: origin.clone(),
    })?;
    (k.set)(cfg, value, base).map_err(|e| match e {
        Bad::Type(expected) => ConfigError::TypeError {
            key: key.to_string(),
            origin,
            expected,
            value: value.to_string(),
        },
        Bad::Range(reason) => ConfigError::RangeError {
            key: key.to_string(),
            origin,
            reason,
        },
    })
}

/// Parses config text; `base` anchors relative paths.
pub fn parse_config_text(text: &str, base: &Path, overrides: &[String]) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig::default();
    let mut origins: Vec<(String, Origin)> = Vec::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = Origin::Line(i + 1);
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(s) = line.strip_prefix('[') {
            let name = s.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                origin: origin.clone(),
                text: line.to_string(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: origin.clone(),
            text: line.to_string(),
        })?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        apply(&mut cfg, &key, v.trim(), origin.clone(), base)?;
        origins.push((key, origin));
    }
    let cwd = PathBuf::from(".");
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: Origin::Override,
            text: o.clone(),
        })?;
        apply(&mut cfg, k.trim(), v.trim(), Origin::Override, &cwd)?;
        origins.push((k.trim().to_string(), Origin::Override));
    }
    let origin_of = |key: &str| {
        origins
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map_or(Origin::Defaults, |(_, o)| o.clone())
    };
    validate(&cfg, origin_of)?;
    Ok(cfg)
}

pub fn parse_config(file: &Path, overrides: &[String]) -> Result<SimConfig, ConfigError> {
    let text = fs::read_to_string(file).map_err(|source| ConfigError::Io {
        path: file.display().to_string(),
        source,
    })?;
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_text(&text, &base, overrides)
}

fn validate(cfg: &SimConfig, origin_of: impl Fn(&str) -> Origin) -> Result<(), ConfigError> {
    let range = |key: &str, reason: String| ConfigError::RangeError {
        key: key.to_string(),
        origin: origin_of(key),
        reason,
    };
    if cfg.horizon_s < cfg.epoch_length_s {
        return Err(range("horizon_s", "must be at least one epoch".into()));
    }
    match cfg.demand.source {
        DemandKind::File if cfg.demand.file.is_none() => {
            return Err(range("demand.file", "is required when demand.source = file".into()));
        }
        DemandKind::Hotzones => {
            let d = &cfg.demand;
            if d.zones.is_empty() || d.zones.iter().any(Vec::is_empty) {
                return Err(range("demand.zones", "needs at least one non-empty zone".into()));
            }
            if d.weights.len() != d.zones.len() {
                return Err(range("demand.weights", format!("needs one weight per zone ({})", d.zones.len())));
            }
        }
        _ => {}
    }
    let n = &cfg.network;
    if n.nodes.is_some() != n.edges.is_some() {
        return Err(range("network.edges", "network.nodes and network.edges go together".into()));
    }
    if n.nodes.is_none() && n.grid.is_none() {
        return Err(range("network.grid", "set either a grid or network files".into()));
    }
    if cfg.pricing.surface == SurfaceKind::Grid && cfg.pricing.grid_file.is_none() {
        return Err(range("pricing.grid_file", "is required when pricing.surface = grid".into()));
    }
    Ok(())
}
