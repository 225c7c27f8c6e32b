//! Gradient statistics: the mean squared norm (MSN) and the squared
//! multivariate coefficient of variation (SMCV), their online estimators, and
//! synthetic gradient generators.
//!
//! With per-dimension means `m_d` and variances `sigma_d^2`,
//!
//! - MSN:  `alpha = sum_d (sigma_d^2 + m_d^2)` — average gradient energy;
//! - SMCV: `beta = sum_d sigma_d^2 / sum_d m_d^2` — relative dispersion.
//!
//! `beta` ranges over `[0, +inf]`; the infinity case (zero mean gradient) is
//! kept as an exact `f64::INFINITY` sentinel and handled symbolically
//! downstream rather than approximated by a large float.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::seed::derive_rng;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("means and variances must have equal length ({means} vs {variances})")]
    LengthMismatch { means: usize, variances: usize },
    #[error("moment vectors must be non-empty")]
    Empty,
    #[error("variance at dimension {0} is negative or non-finite")]
    InvalidVariance(usize),
    #[error("mean at dimension {0} is non-finite")]
    InvalidMean(usize),
    #[error("all-zero moments: the gradient is degenerate")]
    DegenerateMoments,
    #[error("gradient norm list must be non-empty")]
    NoNorms,
    #[error("norm at index {0} is negative or non-finite")]
    InvalidNorm(usize),
    #[error("previous-round MSN must be positive, got {0}")]
    NonPositiveAlpha(f64),
}

/// Per-dimension first and second order statistics of the gradient entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMoments {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GradientMoments {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self, StatsError> {
        if means.len() != variances.len() {
            return Err(StatsError::LengthMismatch {
                means: means.len(),
                variances: variances.len(),
            });
        }
        if means.is_empty() {
            return Err(StatsError::Empty);
        }
        for (d, &m) in means.iter().enumerate() {
            if !m.is_finite() {
                return Err(StatsError::InvalidMean(d));
            }
        }
        for (d, &v) in variances.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(StatsError::InvalidVariance(d));
            }
        }
        Ok(Self { means, variances })
    }

    pub fn dimension(&self) -> usize {
        self.means.len()
    }

    /// `sum_d sigma_d^2`.
    pub fn variance_sum(&self) -> f64 {
        self.variances.iter().sum()
    }

    /// `sum_d m_d^2`.
    pub fn mean_square_sum(&self) -> f64 {
        self.means.iter().map(|m| m * m).sum()
    }
}

/// The `(alpha, beta)` pair that drives the power optimizer. `beta` may be
/// `f64::INFINITY` (zero-mean gradient).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStats {
    pub alpha: f64,
    pub beta: f64,
}

impl GradientStats {
    pub fn new(alpha: f64, beta: f64) -> Self {
        debug_assert!(alpha >= 0.0);
        debug_assert!(beta >= 0.0 || beta.is_infinite());
        Self { alpha, beta }
    }

    /// Weights of the two misalignment error terms,
    /// `(beta*alpha/(beta+1), alpha/(beta+1))`, with the `beta = inf` case
    /// evaluated symbolically as `(alpha, 0)`.
    pub fn error_weights(&self) -> (f64, f64) {
        if self.beta.is_infinite() {
            (self.alpha, 0.0)
        } else {
            (self.beta * self.alpha / (self.beta + 1.0), self.alpha / (self.beta + 1.0))
        }
    }
}

/// Convert per-dimension moments to `(alpha, beta)`.
///
/// `beta` is the infinity sentinel when the mean energy is zero but variance
/// is not; all-zero moments are rejected as degenerate.
pub fn moments_to_stats(moments: &GradientMoments) -> Result<GradientStats, StatsError> {
    let s = moments.variance_sum();
    let m = moments.mean_square_sum();
    if s == 0.0 && m == 0.0 {
        return Err(StatsError::DegenerateMoments);
    }
    let beta = if m > 0.0 { s / m } else { f64::INFINITY };
    Ok(GradientStats::new(s + m, beta))
}

/// Estimate the MSN as the mean of the squared per-device gradient norms.
pub fn estimate_alpha(norms: &[f64]) -> Result<f64, StatsError> {
    if norms.is_empty() {
        return Err(StatsError::NoNorms);
    }
    for (k, &b) in norms.iter().enumerate() {
        if !b.is_finite() || b < 0.0 {
            return Err(StatsError::InvalidNorm(k));
        }
    }
    Ok(norms.iter().map(|b| b * b).sum::<f64>() / norms.len() as f64)
}

/// Estimate the SMCV from the previous round's MSN estimate and aggregated
/// gradient: `(alpha_prev - sum_d g_d^2) / sum_d g_d^2`.
///
/// The raw value can dip below zero when noise inflates the aggregate energy
/// past `alpha_prev`; it is clamped to 0 since the SMCV is non-negative by
/// definition. A zero aggregate yields the infinity sentinel, which callers
/// flag in their traces.
pub fn estimate_beta(alpha_prev: f64, aggregated_prev: &[f64]) -> Result<f64, StatsError> {
    if !alpha_prev.is_finite() || alpha_prev <= 0.0 {
        return Err(StatsError::NonPositiveAlpha(alpha_prev));
    }
    let energy: f64 = aggregated_prev.iter().map(|g| g * g).sum();
    if energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(((alpha_prev - energy) / energy).max(0.0))
}

/// Sample `device_count` IID gradient vectors with entry `(k, d)` drawn from
/// `N(m_d, sigma_d^2)`, independently across devices and dimensions.
pub fn sample_gradients(
    moments: &GradientMoments,
    device_count: usize,
    rng_seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = derive_rng(rng_seed, &[]);
    sample_gradients_with(moments, device_count, &mut rng)
}

/// As [`sample_gradients`] but drawing from a caller-owned stream.
pub fn sample_gradients_with<R: Rng + ?Sized>(
    moments: &GradientMoments,
    device_count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let stds: Vec<f64> = moments.variances.iter().map(|v| v.sqrt()).collect();
    (0..device_count)
        .map(|_| {
            moments
                .means
                .iter()
                .zip(&stds)
                .map(|(&m, &s)| {
                    if s == 0.0 {
                        m
                    } else {
                        m + s * rng.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect()
        })
        .collect()
}
