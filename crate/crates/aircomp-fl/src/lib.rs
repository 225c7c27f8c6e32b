//! Analog gradient aggregation over fading channels, with transmit power
//! control driven by gradient statistics.
//!
//! When many devices transmit their local gradients simultaneously, the
//! wireless channel sums them for free — but fading means each gradient
//! arrives with a different weight, and the receiver must divide by a
//! denoising factor that trades misalignment against noise. The error of the
//! recovered average depends on the gradient distribution through exactly two
//! scalars: its mean squared norm (`alpha`) and its squared multivariate
//! coefficient of variation (`beta`). This crate provides:
//!
//! - [`channel`]: block-fading Rayleigh channels and the analog uplink;
//! - [`stats`]: the `(alpha, beta)` statistics, estimators and generators;
//! - [`mse`]: the three-term analytic error of the recovered gradient;
//! - [`optimizer`]: the closed-form power/denoising-factor optimum under
//!   per-device peak power constraints;
//! - [`oracle`]: an independent brute-force minimizer used to verify the
//!   closed form;
//! - [`sim`]: an end-to-end federated training loop on a synthetic task,
//!   with adaptive statistics estimation and baseline policies;
//! - [`seed`]: named deterministic RNG streams.

pub mod channel;
pub mod mse;
pub mod optimizer;
pub mod oracle;
pub mod seed;
pub mod sim;
pub mod stats;

pub use channel::{
    aircomp_transmit, aircomp_transmit_with, sample_rayleigh_channels, AircompRound, ChannelDraw,
    ChannelError, DeviceChannel, NoiseSpec,
};
pub use mse::{mse_ab, mse_raw, MseBreakdown, MseError};
pub use optimizer::{
    build_profile, candidate_for_subregion, full_power_solution, lstar_by_interval, solve,
    sweep_beta, verify_lstar_interval, AggregationProfile, OptimizerError, PowerSolution,
    SubregionCandidate,
};
pub use oracle::{oracle_solve, OracleOptions, OracleSolution};
pub use stats::{
    estimate_alpha, estimate_beta, moments_to_stats, sample_gradients, GradientMoments,
    GradientStats, StatsError,
};
