//! Distance deterrence and the physical attractiveness of candidate POIs.
//!
//! The deterrence kernel is a shifted power law with an exponential cutoff:
//! `f(d) = (d + r0)^(-beta) * exp(-d / k)`. The shift `r0` keeps the kernel
//! finite at d = 0, `beta` controls the power-law decay, and `k` caps the
//! travel range; `k = +inf` disables the cutoff. A POI's spatial weight
//! combines the kernel value with its attraction factor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("r0_km must be > 0, got {0}")]
    NonPositiveShift(f64),
    #[error("beta must be >= 0 and finite, got {0}")]
    InvalidExponent(f64),
    #[error("k_km must be > 0 (or +inf), got {0}")]
    NonPositiveCutoff(f64),
}

/// How the deterrence kernel enters the spatial weight.
///
/// `Multiply` treats nearness as favorable (`V * f(d)`); `Divide` treats the
/// kernel as a cost (`V / f(d)`), which inverts the distance preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeterrenceMode {
    #[default]
    Multiply,
    Divide,
}

/// Validated parameters of the deterrence kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceParams {
    r0_km: f64,
    beta: f64,
    k_km: f64,
}

impl ImpedanceParams {
    pub fn new(r0_km: f64, beta: f64, k_km: f64) -> Result<Self, SpatialError> {
        if !(r0_km > 0.0) || !r0_km.is_finite() {
            return Err(SpatialError::NonPositiveShift(r0_km));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(SpatialError::InvalidExponent(beta));
        }
        // +inf is allowed and disables the exponential cutoff.
        if !(k_km > 0.0) {
            return Err(SpatialError::NonPositiveCutoff(k_km));
        }
        Ok(Self { r0_km, beta, k_km })
    }

    pub fn r0_km(&self) -> f64 {
        self.r0_km
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k_km(&self) -> f64 {
        self.k_km
    }
}

/// Deterrence kernel value at distance `d_km` >= 0.
pub fn impedance(d_km: f64, params: &ImpedanceParams) -> f64 {
    assert!(d_km >= 0.0, "distance must be nonnegative");
    let power = (d_km + params.r0_km).powf(-params.beta);
    let cutoff = if params.k_km.is_infinite() { 1.0 } else { (-d_km / params.k_km).exp() };
    power * cutoff
}

/// Spatial weight of a POI with attraction `attraction` at distance `d_km`.
pub fn spatial_weight(
    attraction: f64,
    d_km: f64,
    params: &ImpedanceParams,
    mode: DeterrenceMode,
) -> f64 {
    let f = impedance(d_km, params);
    match mode {
        DeterrenceMode::Multiply => attraction * f,
        DeterrenceMode::Divide => attraction / f,
    }
}
