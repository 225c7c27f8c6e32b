//! Analytic mean squared error of the recovered gradient.
//!
//! With aggregation level `G_k = sqrt(p_k / (eta * alpha)) * |h_k|` — the
//! weight device k's gradient carries in the recovered average, ideally 1 —
//! the error splits into three non-negative terms:
//!
//! - individual misalignment, `sum_d sigma_d^2 * sum_k (G_k - 1)^2`;
//! - composite misalignment,  `sum_d m_d^2 * (sum_k G_k - K)^2`;
//! - noise,                   `D * sigma_n^2 / eta`.
//!
//! [`mse_raw`] evaluates the per-dimension form directly from the moments;
//! [`mse_ab`] evaluates the equivalent `(alpha, beta)` form whose term
//! weights are `beta*alpha/(beta+1)` and `alpha/(beta+1)`. Canonical values
//! are unscaled; the `1/K^2` averaging prefactor is applied on request via
//! [`MseBreakdown::scaled_by_device_count`].

use thiserror::Error;

use crate::channel::{DeviceChannel, NoiseSpec};
use crate::stats::{GradientMoments, GradientStats};

#[derive(Debug, Error, PartialEq)]
pub enum MseError {
    #[error("denoising factor must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("powers and channels must have equal length ({powers} vs {channels})")]
    LengthMismatch { powers: usize, channels: usize },
    #[error("device set must be non-empty")]
    EmptyDeviceSet,
    #[error("transmit power at device {0} is negative or non-finite")]
    InvalidPower(usize),
    #[error("MSN must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("moment dimension {moments} disagrees with noise dimension {noise}")]
    DimensionMismatch { moments: usize, noise: usize },
}

/// The three error terms and their sum. `scaled_by_k2` records whether the
/// `1/K^2` averaging prefactor has been applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseBreakdown {
    pub individual: f64,
    pub composite: f64,
    pub noise: f64,
    pub total: f64,
    pub scaled_by_k2: bool,
}

impl MseBreakdown {
    fn from_terms(individual: f64, composite: f64, noise: f64) -> Self {
        Self { individual, composite, noise, total: individual + composite + noise, scaled_by_k2: false }
    }

    /// Apply the `1/K^2` prefactor of the averaged-gradient error.
    pub fn scaled_by_device_count(self, device_count: usize) -> Self {
        assert!(!self.scaled_by_k2, "already scaled");
        let s = 1.0 / (device_count as f64 * device_count as f64);
        Self {
            individual: self.individual * s,
            composite: self.composite * s,
            noise: self.noise * s,
            total: self.total * s,
            scaled_by_k2: true,
        }
    }
}

fn validate(powers: &[f64], channels: &[DeviceChannel], eta: f64) -> Result<(), MseError> {
    if powers.len() != channels.len() {
        return Err(MseError::LengthMismatch { powers: powers.len(), channels: channels.len() });
    }
    if powers.is_empty() {
        return Err(MseError::EmptyDeviceSet);
    }
    if !eta.is_finite() || eta <= 0.0 {
        return Err(MseError::NonPositiveEta(eta));
    }
    for (k, &p) in powers.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(MseError::InvalidPower(k));
        }
    }
    Ok(())
}

fn misalignment_sums(
    powers: &[f64],
    channels: &[DeviceChannel],
    eta: f64,
    alpha: f64,
) -> (f64, f64) {
    let k = powers.len() as f64;
    let mut sum_sq_dev = 0.0; // sum_k (G_k - 1)^2
    let mut sum_levels = 0.0; // sum_k G_k
    for (&p, ch) in powers.iter().zip(channels) {
        let g = (p / (eta * alpha)).sqrt() * ch.magnitude;
        sum_sq_dev += (g - 1.0) * (g - 1.0);
        sum_levels += g;
    }
    let dev = sum_levels - k;
    (sum_sq_dev, dev * dev)
}

/// Evaluate the error from per-dimension moments (unscaled).
pub fn mse_raw(
    moments: &GradientMoments,
    powers: &[f64],
    channels: &[DeviceChannel],
    eta: f64,
    noise: &NoiseSpec,
) -> Result<MseBreakdown, MseError> {
    validate(powers, channels, eta)?;
    if moments.dimension() != noise.dimension {
        return Err(MseError::DimensionMismatch {
            moments: moments.dimension(),
            noise: noise.dimension,
        });
    }
    let s = moments.variance_sum();
    let m = moments.mean_square_sum();
    let alpha = s + m;
    if alpha <= 0.0 {
        return Err(MseError::NonPositiveAlpha(alpha));
    }
    let (ind_sum, comp_sq) = misalignment_sums(powers, channels, eta, alpha);
    Ok(MseBreakdown::from_terms(s * ind_sum, m * comp_sq, noise.block_energy() / eta))
}

/// Evaluate the error from `(alpha, beta)` (unscaled). `beta` may be zero,
/// finite, or the infinity sentinel; the sentinel zeroes the composite
/// weight exactly instead of approximating with a large float.
pub fn mse_ab(
    stats: &GradientStats,
    powers: &[f64],
    channels: &[DeviceChannel],
    eta: f64,
    noise: &NoiseSpec,
) -> Result<MseBreakdown, MseError> {
    validate(powers, channels, eta)?;
    if !(stats.alpha > 0.0) {
        return Err(MseError::NonPositiveAlpha(stats.alpha));
    }
    let (w_individual, w_composite) = stats.error_weights();
    let (ind_sum, comp_sq) = misalignment_sums(powers, channels, eta, stats.alpha);
    Ok(MseBreakdown::from_terms(
        w_individual * ind_sum,
        w_composite * comp_sq,
        noise.block_energy() / eta,
    ))
}
