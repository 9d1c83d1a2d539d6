//! System load and the service-rate scaling law.
//!
//! With load `u = λ t̄ / N`, the mean service rate `R` and the mean number of
//! scheduled passengers per vehicle `C̄ = uR` satisfy
//! `R = 1` while `C̄ ≤ 1`, else `R = 1 − β((C̄ − 1)/(C − 1))^α`.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveInput { name: &'static str, value: f64 },
    #[error("no fixed point in [{lo}, {hi}]")]
    NoFixedPoint { lo: f64, hi: f64 },
    #[error("need at least {needed} samples with C̄ > 1 and R < 1, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("capacity must be at least 2, got {0}")]
    InvalidCapacity(u32),
    #[error("no default scaling parameters for capacity {0}")]
    NoDefaults(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemLoad<F> {
    pub u: F,
    /// Requests per second.
    pub lambda: F,
    pub fleet: F,
    /// Mean pickup-plus-delivery time per served request, in seconds.
    pub t_bar: F,
}

pub fn system_load<F: Float>(lambda: F, fleet: F, t_bar: F) -> Result<SystemLoad<F>, ScalingError> {
    for (name, v) in [("lambda", lambda), ("fleet", fleet), ("t_bar", t_bar)] {
        if !v.is_finite() || v <= F::zero() {
            return Err(ScalingError::NonPositiveInput {
                name,
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(SystemLoad {
        u: lambda / (fleet / t_bar),
        lambda,
        fleet,
        t_bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams<F> {
    pub capacity: u32,
    pub alpha: F,
    pub beta: F,
}

impl<F: Float> ScalingParams<F> {
    /// Default parameters for capacities 2, 4 and 6.
    pub fn defaults(capacity: u32) -> Result<Self, ScalingError> {
        let (a, b) = match capacity {
            2 => (1.8, 1.7),
            4 => (2.7, 3.5),
            6 => (2.4, 3.6),
            c => return Err(ScalingError::NoDefaults(c)),
        };
        Ok(Self {
            capacity,
            alpha: F::from(a).unwrap(),
            beta: F::from(b).unwrap(),
        })
    }

    fn validate(&self) -> Result<(), ScalingError> {
        if self.capacity < 2 {
            return Err(ScalingError::InvalidCapacity(self.capacity));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if v.is_nan() || v <= F::zero() {
                return Err(ScalingError::NonPositiveInput {
                    name,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }

    /// Right-hand side of the service-rate law at a given `C̄`.
    pub fn rate_at(&self, c_bar: F) -> F {
        if c_bar <= F::one() {
            return F::one();
        }
        let cap = F::from(self.capacity).unwrap();
        F::one() - self.beta * ((c_bar - F::one()) / (cap - F::one())).powf(self.alpha)
    }
}

/// Absolute tolerance of the bisection on `R`.
pub const FIXED_POINT_TOL: f64 = 1e-9;

/// Solves `R = rate_at(uR)`; returns `(R, C̄)`.
///
/// For `u > 1` the root lies in `[1/u, 1]`: below `1/u` the law gives 1,
/// and the residual `R − rate_at(uR)` is increasing in `R`.
pub fn predict_performance<F: Float>(u: F, params: &ScalingParams<F>) -> Result<(F, F), ScalingError> {
    if !u.is_finite() || u <= F::zero() {
        return Err(ScalingError::NonPositiveInput {
            name: "u",
            value: u.to_f64().unwrap_or(f64::NAN),
        });
    }
    params.validate()?;
    if u <= F::one() {
        return Ok((F::one(), u));
    }
    let g = |r: F| r - params.rate_at(u * r);
    let (mut lo, mut hi) = (F::one() / u, F::one());
    if g(lo) > F::zero() || g(hi) < F::zero() {
        return Err(ScalingError::NoFixedPoint {
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
        });
    }
    let tol = F::from(FIXED_POINT_TOL).unwrap();
    let two = F::one() + F::one();
    while hi - lo > tol {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = (lo + hi) / two;
    Ok((r, u * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit<F> {
    pub params: ScalingParams<F>,
    /// Root-mean-square error of predicted against measured `R` over all samples.
    pub rmse: F,
    /// Samples that entered the regression.
    pub used: usize,
}

/// Two parameters plus one residual degree of freedom.
pub const MIN_FIT_SAMPLES: usize = 3;

/// Least squares on `ln(1 − R) = ln β + α ln((uR − 1)/(C − 1))`.
///
/// Only samples with `uR > 1` and `R < 1` carry information and enter the
/// regression; the RMSE covers every sample.
pub fn fit_scaling<F: Float>(samples: &[(F, F)], capacity: u32) -> Result<ScalingFit<F>, ScalingError> {
    if capacity < 2 {
        return Err(ScalingError::InvalidCapacity(capacity));
    }
    let cap = F::from(capacity).unwrap();
    let points: Vec<(F, F)> = samples
        .iter()
        .filter(|&&(u, r)| u * r > F::one() && r < F::one() && r > F::zero())
        .map(|&(u, r)| (((u * r - F::one()) / (cap - F::one())).ln(), (F::one() - r).ln()))
        .collect();
    if points.len() < MIN_FIT_SAMPLES {
        return Err(ScalingError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            got: points.len(),
        });
    }
    let n = F::from(points.len()).unwrap();
    let mx = points.iter().fold(F::zero(), |a, p| a + p.0) / n;
    let my = points.iter().fold(F::zero(), |a, p| a + p.1) / n;
    let sxx = points.iter().fold(F::zero(), |a, p| a + (p.0 - mx) * (p.0 - mx));
    let sxy = points.iter().fold(F::zero(), |a, p| a + (p.0 - mx) * (p.1 - my));
    if sxx.is_nan() || sxx <= F::zero() {
        return Err(ScalingError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            got: 1,
        });
    }
    let alpha = sxy / sxx;
    let params = ScalingParams {
        capacity,
        alpha,
        beta: (my - alpha * mx).exp(),
    };
    let mut sq = F::zero();
    for &(u, r) in samples {
        let (pred, _) = predict_performance(u, &params)?;
        sq = sq + (pred - r) * (pred - r);
    }
    Ok(ScalingFit {
        params,
        rmse: (sq / F::from(samples.len()).unwrap()).sqrt(),
        used: points.len(),
    })
}
