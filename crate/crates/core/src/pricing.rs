//! Upfront quotes and the shared/solo mode choice.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{Mode, Request, RequestId};
use crate::tabular::{field, Table, TableError};
use crate::Money;

#[derive(Debug, Error, PartialEq)]
pub enum PricingError {
    #[error("invalid tariff: {0}")]
    Tariff(String),
    #[error("invalid elasticity surface: {0}")]
    Surface(String),
    #[error("{file}:{line}: {reason}")]
    GridFile {
        file: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub base_fare: Money,
    pub per_km: Money,
    pub shared_discount: f64,
    pub offered_detour_ratio: f64,
}

impl Default for Tariff {
    fn default() -> Self {
        Self {
            base_fare: 2.5,
            per_km: 1.5,
            shared_discount: 0.2,
            offered_detour_ratio: 0.3,
        }
    }
}

impl Tariff {
    pub fn validate(&self) -> Result<(), PricingError> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.base_fare) || !nonneg(self.per_km) {
            return Err(PricingError::Tariff("fares must be non-negative".into()));
        }
        if !(nonneg(self.shared_discount) && self.shared_discount < 1.0) {
            return Err(PricingError::Tariff(format!(
                "shared_discount must be in [0, 1), got {}",
                self.shared_discount
            )));
        }
        if !nonneg(self.offered_detour_ratio) {
            return Err(PricingError::Tariff("offered_detour_ratio must be >= 0".into()));
        }
        Ok(())
    }

    /// `(solo, shared)` prices for a direct trip of `direct_km`.
    pub fn quote_km(&self, direct_km: f64) -> (Money, Money) {
        let solo = self.base_fare + self.per_km * direct_km;
        (solo, solo * (1.0 - self.shared_discount))
    }
}

/// Prices a request from the length of its direct path.
pub fn quote(req: &Request, tariff: &Tariff) -> (Money, Money) {
    tariff.quote_km(req.direct_length_mm as f64 / 1_000_000.0)
}

/// Acceptance probability of a shared ride as a function of discount and
/// offered detour ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElasticitySurface {
    /// `P = sigmoid(a0 + a_discount·discount − a_detour·detour)`.
    Logistic {
        a0: f64,
        a_discount: f64,
        a_detour: f64,
    },
    /// Bilinear interpolation over a rectangular grid, clamped at the edges.
    /// `p[i][j]` is the probability at `(discounts[i], detours[j])`.
    Grid {
        discounts: Vec<f64>,
        detours: Vec<f64>,
        p: Vec<Vec<f64>>,
    },
}

impl Default for ElasticitySurface {
    /// Placeholder shape: high acceptance at small detours, falling steeply
    /// as the detour grows. Not calibrated against survey data.
    fn default() -> Self {
        Self::Logistic {
            a0: 0.0,
            a_discount: 6.0,
            a_detour: 5.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ElasticitySurface {
    pub fn constant(p: f64) -> Self {
        Self::Grid {
            discounts: vec![0.0],
            detours: vec![0.0],
            p: vec![vec![p]],
        }
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        match self {
            Self::Logistic {
                a0,
                a_discount,
                a_detour,
            } => {
                if !a0.is_finite() || !(a_discount.is_finite() && *a_discount >= 0.0) {
                    return Err(PricingError::Surface("need finite a0 and a_discount >= 0".into()));
                }
                if !(a_detour.is_finite() && *a_detour >= 0.0) {
                    return Err(PricingError::Surface("need a_detour >= 0".into()));
                }
                Ok(())
            }
            Self::Grid { discounts, detours, p } => {
                let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
                if discounts.is_empty() || detours.is_empty() || !increasing(discounts) || !increasing(detours) {
                    return Err(PricingError::Surface("grid axes must be non-empty and strictly increasing".into()));
                }
                if p.len() != discounts.len() || p.iter().any(|row| row.len() != detours.len()) {
                    return Err(PricingError::Surface("grid values do not match axes".into()));
                }
                if p.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(PricingError::Surface("probabilities must lie in [0, 1]".into()));
                }
                for i in 0..discounts.len() {
                    for j in 0..detours.len() {
                        if i + 1 < discounts.len() && p[i + 1][j] < p[i][j] {
                            return Err(PricingError::Surface("acceptance must not fall as discount grows".into()));
                        }
                        if j + 1 < detours.len() && p[i][j + 1] > p[i][j] {
                            return Err(PricingError::Surface("acceptance must not rise as detour grows".into()));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn probability(&self, discount: f64, detour: f64) -> f64 {
        match self {
            Self::Logistic {
                a0,
                a_discount,
                a_detour,
            } => sigmoid(a0 + a_discount * discount - a_detour * detour),
            Self::Grid { discounts, detours, p } => {
                let (i0, i1, fi) = bracket(discounts, discount);
                let (j0, j1, fj) = bracket(detours, detour);
                let top = p[i0][j0] * (1.0 - fj) + p[i0][j1] * fj;
                let bottom = p[i1][j0] * (1.0 - fj) + p[i1][j1] * fj;
                (top * (1.0 - fi) + bottom * fi).clamp(0.0, 1.0)
            }
        }
    }

    /// Reads a `discount,detour_ratio,p_accept` file covering a full grid.
    pub fn load_grid(path: &Path) -> Result<Self, PricingError> {
        let file = path.display().to_string();
        let err = |e: TableError| match e {
            TableError::Io(e) => PricingError::GridFile {
                file: file.clone(),
                line: 0,
                reason: e.to_string(),
            },
            TableError::Format { line, reason } => PricingError::GridFile {
                file: file.clone(),
                line,
                reason,
            },
        };
        let t = Table::read(path).map_err(err)?;
        let (cd, cr, cp) = (
            t.column("discount").map_err(err)?,
            t.column("detour_ratio").map_err(err)?,
            t.column("p_accept").map_err(err)?,
        );
        let mut pts = Vec::with_capacity(t.rows.len());
        for (line, f) in &t.rows {
            let d: f64 = field(f, cd, *line, "discount").map_err(err)?;
            let r: f64 = field(f, cr, *line, "detour_ratio").map_err(err)?;
            let p: f64 = field(f, cp, *line, "p_accept").map_err(err)?;
            pts.push((d, r, p));
        }
        let mut discounts: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let mut detours: Vec<f64> = pts.iter().map(|p| p.1).collect();
        for v in [&mut discounts, &mut detours] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let mut p = vec![vec![f64::NAN; detours.len()]; discounts.len()];
        for (d, r, v) in pts {
            let i = discounts.iter().position(|&x| x == d).unwrap();
            let j = detours.iter().position(|&x| x == r).unwrap();
            p[i][j] = v;
        }
        if p.iter().flatten().any(|v| v.is_nan()) {
            return Err(PricingError::Surface(format!("{file}: grid has missing cells")));
        }
        let s = Self::Grid { discounts, detours, p };
        s.validate()?;
        Ok(s)
    }
}

fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub request_id: RequestId,
    pub mode: Mode,
    pub quoted_price: Money,
    pub max_detour_ratio: f64,
}

/// Samples the passenger's choice: shared with probability
/// `surface.probability(discount, offered_detour)`, otherwise solo (when
/// offered) or no ride at all.
pub fn decide_mode<R: Rng>(
    req: &Request,
    tariff: &Tariff,
    surface: &ElasticitySurface,
    allow_solo: bool,
    rng: &mut R,
) -> ModeDecision {
    let (solo, shared) = quote(req, tariff);
    let p = surface.probability(tariff.shared_discount, tariff.offered_detour_ratio);
    let u: f64 = rng.random();
    let (mode, price, detour) = if u < p {
        (
            Mode::Shared,
            shared,
            req.detour_override.unwrap_or(tariff.offered_detour_ratio),
        )
    } else if allow_solo {
        (Mode::Solo, solo, 0.0)
    } else {
        (Mode::Rejected, 0.0, 0.0)
    };
    ModeDecision {
        request_id: req.id,
        mode,
        quoted_price: price,
        max_detour_ratio: detour,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::NodeId;
    use rand::SeedableRng;

    fn request_km(km: f64) -> Request {
        let mut r = Request::new(RequestId(1), 0, NodeId(0), NodeId(1));
        r.direct_length_mm = (km * 1_000_000.0) as i64;
        r.direct_cost = r.direct_length_mm;
        r
    }

    #[test]
    fn quotes() {
        let mut t = Tariff {
            base_fare: 2.0,
            per_km: 1.0,
            shared_discount: 0.0,
            offered_detour_ratio: 0.3,
        };
        assert_eq!(quote(&request_km(10.0), &t), (12.0, 12.0));
        t.shared_discount = 0.2;
        let (solo, shared) = quote(&request_km(10.0), &t);
        assert_eq!(solo, 12.0);
        assert!((shared - 9.6).abs() < 1e-12);
        t.shared_discount = 1.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn degenerate_surfaces() {
        let t = Tariff::default();
        let r = request_km(3.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = decide_mode(&r, &t, &ElasticitySurface::constant(1.0), true, &mut rng);
            assert_eq!(d.mode, Mode::Shared);
            assert_eq!(d.max_detour_ratio, t.offered_detour_ratio);
            let d = decide_mode(&r, &t, &ElasticitySurface::constant(0.0), true, &mut rng);
            assert_eq!(d.mode, Mode::Solo);
            assert_eq!(d.max_detour_ratio, 0.0);
            let d = decide_mode(&r, &t, &ElasticitySurface::constant(0.0), false, &mut rng);
            assert_eq!(d.mode, Mode::Rejected);
        }
    }

    #[test]
    fn monte_carlo_matches_sigmoid() {
        let t = Tariff {
            shared_discount: 0.2,
            offered_detour_ratio: 0.3,
            ..Tariff::default()
        };
        let s = ElasticitySurface::default();
        let analytic = 1.0 / (1.0 + (-(6.0 * 0.2 - 5.0 * 0.3f64)).exp());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let r = request_km(5.0);
        let n = 100_000;
        let shared = (0..n)
            .filter(|_| decide_mode(&r, &t, &s, true, &mut rng).mode == Mode::Shared)
            .count();
        let emp = shared as f64 / n as f64;
        assert!((emp - analytic).abs() <= 0.01, "{emp} vs {analytic}");
    }

    #[test]
    fn default_surface_monotone_on_grid() {
        let s = ElasticitySurface::default();
        for i in 0..=20 {
            let d = i as f64 / 20.0;
            for j in 0..40 {
                let (a, b) = (j as f64 / 20.0, (j + 1) as f64 / 20.0);
                assert!(s.probability(d, a) >= s.probability(d, b));
                assert!(s.probability(d + 0.05, a) >= s.probability(d, a));
            }
        }
    }

    #[test]
    fn grid_interpolates_bilinearly() {
        let s = ElasticitySurface::Grid {
            discounts: vec![0.0, 0.5],
            detours: vec![0.0, 1.0],
            p: vec![vec![0.6, 0.2], vec![1.0, 0.4]],
        };
        s.validate().unwrap();
        assert!((s.probability(0.25, 0.5) - 0.55).abs() < 1e-12);
        assert_eq!(s.probability(-1.0, 5.0), 0.2);
        let bad = ElasticitySurface::Grid {
            discounts: vec![0.0],
            detours: vec![0.0, 1.0],
            p: vec![vec![0.2, 0.6]],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        std::fs::write(&p, "discount,detour_ratio,p_accept\n0,0,0.6\n0,1,0.2\n0.5,0,1.0\n0.5,1,0.4\n").unwrap();
        let s = ElasticitySurface::load_grid(&p).unwrap();
        assert!((s.probability(0.25, 0.5) - 0.55).abs() < 1e-12);
    }
}
