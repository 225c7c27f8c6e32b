//! Block-fading channels and the analog aggregation uplink.
//!
//! Each round, `K` devices transmit their gradient vectors simultaneously.
//! Device `k` scales its gradient by the pre-processing factor
//! `b_k = sqrt(p_k / alpha_k) * e^{-j*theta_k}`, which compensates the channel
//! phase and normalizes by the expected squared gradient norm `alpha_k`. The
//! server sees the superposition plus AWGN and divides by `K * sqrt(eta)`,
//! where `eta` is the receive-side denoising factor.
//!
//! Because phase compensation is exact by construction, the simulator works
//! directly on channel magnitudes; phases are carried only so tests can
//! confirm the cancellation.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::seed::derive_rng;

/// Relative slack when checking a transmit power against its peak budget.
const PEAK_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("device count must be at least 1")]
    EmptyDeviceSet,
    #[error("channel magnitude must be finite and non-negative, got {0}")]
    InvalidMagnitude(f64),
    #[error("phase must lie in [-pi, pi), got {0}")]
    InvalidPhase(f64),
    #[error("peak power must be positive, got {0}")]
    InvalidPeakPower(f64),
    #[error("noise variance must be finite and non-negative, got {0}")]
    InvalidNoiseVariance(f64),
    #[error("gradient dimension must be at least 1")]
    ZeroDimension,
    #[error("denoising factor must be positive, got {0}")]
    InvalidDenoisingFactor(f64),
    #[error("device {device}: pre-processing undefined, alpha is zero but gradient is nonzero")]
    ZeroAlphaNonzeroGradient { device: usize },
    #[error("device {device}: alpha must be finite and non-negative, got {alpha}")]
    InvalidAlpha { device: usize, alpha: f64 },
    #[error("device {device}: transmit power {power} outside [0, {peak}]")]
    PowerOutOfRange { device: usize, power: f64, peak: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("per-device field lengths disagree: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One device's uplink: channel magnitude `|h_k|`, phase `theta_k` and peak
/// power budget `P_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceChannel {
    pub magnitude: f64,
    pub phase: f64,
    pub peak_power: f64,
}

impl DeviceChannel {
    pub fn new(magnitude: f64, phase: f64, peak_power: f64) -> Result<Self, ChannelError> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(ChannelError::InvalidMagnitude(magnitude));
        }
        if !phase.is_finite() || !(-std::f64::consts::PI..std::f64::consts::PI).contains(&phase) {
            return Err(ChannelError::InvalidPhase(phase));
        }
        if !peak_power.is_finite() || peak_power <= 0.0 {
            return Err(ChannelError::InvalidPeakPower(peak_power));
        }
        Ok(Self { magnitude, phase, peak_power })
    }

    /// Effective real gain after phase compensation, computed the long way
    /// through complex arithmetic: `h_k * b_k` with
    /// `b_k = sqrt(p/alpha) * e^{-j*theta}`. Returns `(re, im)`; the imaginary
    /// part vanishes up to rounding. The transmit path uses the magnitude
    /// directly; this exists so tests can verify the cancellation.
    pub fn complex_compensated_gain(&self, power: f64, alpha: f64) -> (f64, f64) {
        let scale = (power / alpha).sqrt();
        let (h_re, h_im) = (self.magnitude * self.phase.cos(), self.magnitude * self.phase.sin());
        let (b_re, b_im) = (scale * self.phase.cos(), -scale * self.phase.sin());
        (h_re * b_re - h_im * b_im, h_re * b_im + h_im * b_re)
    }
}

/// Receiver noise: per-element variance `sigma_n^2` over a `D`-dimensional
/// gradient, i.e. one AWGN sample per gradient entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub dimension: usize,
}

impl NoiseSpec {
    pub fn new(variance: f64, dimension: usize) -> Result<Self, ChannelError> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(ChannelError::InvalidNoiseVariance(variance));
        }
        if dimension == 0 {
            return Err(ChannelError::ZeroDimension);
        }
        Ok(Self { variance, dimension })
    }

    /// Total noise energy per block, `D * sigma_n^2`.
    pub fn block_energy(&self) -> f64 {
        self.dimension as f64 * self.variance
    }
}

/// A channel realization before a peak power budget is attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub magnitude: f64,
    pub phase: f64,
}

impl ChannelDraw {
    pub fn with_peak_power(self, peak_power: f64) -> Result<DeviceChannel, ChannelError> {
        DeviceChannel::new(self.magnitude, self.phase, peak_power)
    }
}

/// Draw `count` IID Rayleigh channel realizations: magnitude and phase of a
/// zero-mean unit-variance complex Gaussian, so `E[|h|^2] = 1`.
pub fn sample_rayleigh_channels(count: usize, rng_seed: u64) -> Result<Vec<ChannelDraw>, ChannelError> {
    if count == 0 {
        return Err(ChannelError::EmptyDeviceSet);
    }
    let mut rng = derive_rng(rng_seed, &[]);
    Ok(sample_rayleigh_with(count, &mut rng))
}

/// As [`sample_rayleigh_channels`] but drawing from a caller-owned stream.
pub fn sample_rayleigh_with<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<ChannelDraw> {
    let sigma = std::f64::consts::FRAC_1_SQRT_2; // per-component std of CN(0, 1)
    (0..count)
        .map(|_| {
            let re: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            let im: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            let mut phase = im.atan2(re);
            // atan2 yields (-pi, pi]; fold the single closed endpoint.
            if phase >= std::f64::consts::PI {
                phase = -std::f64::consts::PI;
            }
            ChannelDraw { magnitude: re.hypot(im), phase }
        })
        .collect()
}

/// Everything one aggregation round transmits: per-device gradients, assigned
/// powers, channels, the server-side denoising factor and the `alpha_k`
/// normalizers the devices use in their pre-processing factors.
#[derive(Debug, Clone)]
pub struct AircompRound {
    pub gradients: Vec<Vec<f64>>,
    pub powers: Vec<f64>,
    pub channels: Vec<DeviceChannel>,
    pub denoising_factor: f64,
    pub alphas: Vec<f64>,
}

impl AircompRound {
    fn validate(&self, noise: &NoiseSpec) -> Result<(), ChannelError> {
        let k = self.gradients.len();
        if k == 0 {
            return Err(ChannelError::EmptyDeviceSet);
        }
        for got in [self.powers.len(), self.channels.len(), self.alphas.len()] {
            if got != k {
                return Err(ChannelError::LengthMismatch { expected: k, got });
            }
        }
        for g in &self.gradients {
            if g.len() != noise.dimension {
                return Err(ChannelError::DimensionMismatch {
                    expected: noise.dimension,
                    got: g.len(),
                });
            }
        }
        if !self.denoising_factor.is_finite() || self.denoising_factor <= 0.0 {
            return Err(ChannelError::InvalidDenoisingFactor(self.denoising_factor));
        }
        for (device, ((&p, ch), &alpha)) in
            self.powers.iter().zip(&self.channels).zip(&self.alphas).enumerate()
        {
            if !p.is_finite() || p < 0.0 || p > ch.peak_power * (1.0 + PEAK_SLACK) {
                return Err(ChannelError::PowerOutOfRange { device, power: p, peak: ch.peak_power });
            }
            if !alpha.is_finite() || alpha < 0.0 {
                return Err(ChannelError::InvalidAlpha { device, alpha });
            }
            if alpha == 0.0 && self.gradients[device].iter().any(|&g| g != 0.0) {
                return Err(ChannelError::ZeroAlphaNonzeroGradient { device });
            }
        }
        Ok(())
    }
}

/// Run one aggregation round and recover the gradient estimate:
/// `(1 / (K * sqrt(eta))) * (sum_k sqrt(p_k / alpha_k) * |h_k| * g_k + n)`
/// with `n ~ N(0, sigma_n^2 I_D)`. Phase compensation is exact, so only the
/// channel magnitudes enter.
pub fn aircomp_transmit(
    round: &AircompRound,
    noise: &NoiseSpec,
    rng_seed: u64,
) -> Result<Vec<f64>, ChannelError> {
    let mut rng = derive_rng(rng_seed, &[]);
    aircomp_transmit_with(round, noise, &mut rng)
}

/// As [`aircomp_transmit`] but drawing noise from a caller-owned stream.
pub fn aircomp_transmit_with<R: Rng + ?Sized>(
    round: &AircompRound,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<f64>, ChannelError> {
    round.validate(noise)?;
    let k = round.gradients.len();
    let d = noise.dimension;
    let mut received = vec![0.0_f64; d];
    for (device, gradient) in round.gradients.iter().enumerate() {
        let alpha = round.alphas[device];
        if alpha == 0.0 {
            continue; // all-zero gradient, contributes nothing
        }
        let gain = (round.powers[device] / alpha).sqrt() * round.channels[device].magnitude;
        for (acc, &g) in received.iter_mut().zip(gradient) {
            *acc += gain * g;
        }
    }
    if noise.variance > 0.0 {
        let std = noise.variance.sqrt();
        for acc in received.iter_mut() {
            *acc += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let scale = 1.0 / (k as f64 * round.denoising_factor.sqrt());
    for acc in received.iter_mut() {
        *acc *= scale;
    }
    Ok(received)
}
