//! Closed-form transmit power control minimizing the aggregation error under
//! per-device peak power constraints.
//!
//! Devices are ranked by aggregation capability `C_k = sqrt(P_k/alpha)*|h_k|`
//! (their aggregation level at peak power and unit denoising factor). The
//! optimum has a threshold structure: the `l*` least capable devices transmit
//! at peak power and the rest back off to share one common aggregation level.
//! The solver enumerates the K candidate thresholds, computes each candidate's
//! denoising factor and tail powers in closed form, discards candidates whose
//! tail powers breach their peaks (such a subregion cannot contain the
//! optimum), and keeps the legal candidate of least error.
//!
//! The `beta = 0` limit (deterministic gradient) collapses to full power at
//! every device; the `beta = inf` limit (zero-mean gradient) collapses to
//! threshold-based channel inversion. Both are dispatched exactly on the
//! sentinel values; nearby finite values go through the general path, which
//! approaches them continuously.

use thiserror::Error;

use crate::channel::{DeviceChannel, NoiseSpec};
use crate::mse::{mse_ab, MseBreakdown, MseError};
use crate::stats::GradientStats;

/// Relative margin for the strict `p < P` legality test; keeps candidates at
/// an exact subregion boundary from flapping on rounding. The adjacent
/// subregion produces the identical solution there, so the choice is
/// error-neutral.
const LEGALITY_MARGIN: f64 = 1e-12;

/// Relative slack on the lower interval bound when classifying a solution's
/// subregion; boundary solutions sit exactly on the bound.
const INTERVAL_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("MSN must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("SMCV must be non-negative (or the infinity sentinel), got {0}")]
    InvalidBeta(f64),
    #[error("device set must be non-empty")]
    EmptyDeviceSet,
    #[error("all channels are zero: no transmission possible")]
    AllChannelsZero,
    #[error("subregion index {l} outside 1..={device_count}")]
    InvalidSubregionIndex { l: usize, device_count: usize },
    #[error("subregion {l}: capability prefix sums to zero, denoising factor undefined")]
    ZeroCapabilityPrefix { l: usize },
    #[error("subregion candidates require finite positive SMCV, got {0}; the limits are dispatched separately")]
    SpecialCaseBeta(f64),
    #[error("sweep grid must be sorted ascending")]
    GridNotSorted,
    #[error(transparent)]
    Mse(#[from] MseError),
}

/// Devices sorted by aggregation capability, with the prefix sums the
/// closed-form candidate expressions consume.
#[derive(Debug, Clone)]
pub struct AggregationProfile {
    alpha: f64,
    /// sorted position -> original device index
    order: Vec<usize>,
    /// channels in capability order
    channels: Vec<DeviceChannel>,
    /// capabilities, ascending
    capabilities: Vec<f64>,
    /// prefix_capability[l] = sum of the l smallest capabilities
    prefix_capability: Vec<f64>,
    prefix_capability_sq: Vec<f64>,
}

impl AggregationProfile {
    pub fn device_count(&self) -> usize {
        self.channels.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Capabilities in ascending order.
    pub fn capabilities(&self) -> &[f64] {
        &self.capabilities
    }

    /// Original device index at each sorted position.
    pub fn sorted_indices(&self) -> &[usize] {
        &self.order
    }

    /// Channels in capability order.
    pub fn sorted_channels(&self) -> &[DeviceChannel] {
        &self.channels
    }

    fn prefix_sums(&self, l: usize) -> (f64, f64) {
        (self.prefix_capability[l], self.prefix_capability_sq[l])
    }

    /// Scatter sorted-order powers back to original device order.
    fn unsort(&self, sorted_powers: &[f64]) -> Vec<f64> {
        let mut powers = vec![0.0; sorted_powers.len()];
        for (pos, &orig) in self.order.iter().enumerate() {
            powers[orig] = sorted_powers[pos];
        }
        powers
    }
}

/// Rank devices by aggregation capability (ascending), breaking ties by
/// original index. Ties are error-neutral: tied devices are symmetric.
pub fn build_profile(
    channels: &[DeviceChannel],
    alpha: f64,
) -> Result<AggregationProfile, OptimizerError> {
    if channels.is_empty() {
        return Err(OptimizerError::EmptyDeviceSet);
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(OptimizerError::NonPositiveAlpha(alpha));
    }
    let capability =
        |ch: &DeviceChannel| (ch.peak_power / alpha).sqrt() * ch.magnitude;
    let mut order: Vec<usize> = (0..channels.len()).collect();
    // stable sort keeps the original index order on ties
    order.sort_by(|&a, &b| {
        capability(&channels[a]).partial_cmp(&capability(&channels[b])).unwrap()
    });
    let sorted: Vec<DeviceChannel> = order.iter().map(|&i| channels[i]).collect();
    let capabilities: Vec<f64> = sorted.iter().map(capability).collect();
    let mut prefix_capability = vec![0.0; sorted.len() + 1];
    let mut prefix_capability_sq = vec![0.0; sorted.len() + 1];
    for (i, &c) in capabilities.iter().enumerate() {
        prefix_capability[i + 1] = prefix_capability[i] + c;
        prefix_capability_sq[i + 1] = prefix_capability_sq[i] + c * c;
    }
    Ok(AggregationProfile {
        alpha,
        order,
        channels: sorted,
        capabilities,
        prefix_capability,
        prefix_capability_sq,
    })
}

/// One enumerated threshold candidate. `powers` are in capability order:
/// positions below `l` sit at their peaks, positions at or above `l` share
/// the aggregation level `common_level`.
#[derive(Debug, Clone)]
pub struct SubregionCandidate {
    pub l: usize,
    pub powers: Vec<f64>,
    pub eta: f64,
    pub value: f64,
    pub legal: bool,
    pub common_level: f64,
}

/// The solved power assignment. `powers` are in the original device order;
/// `l_star` counts the peak-power prefix in capability order; `mse` is the
/// unscaled error at the optimum.
#[derive(Debug, Clone)]
pub struct PowerSolution {
    pub powers: Vec<f64>,
    pub eta: f64,
    pub l_star: usize,
    pub mse: MseBreakdown,
}

/// Closed-form candidate pieces shared by the general and `beta = inf` paths.
struct CandidateCore {
    sqrt_eta: f64,
    common_level: f64,
    /// `sqrt(p)*|h|/sqrt(alpha)` of every tail device = `common_level * sqrt_eta`
    level_scale: f64,
}

fn general_core(
    l: usize,
    profile: &AggregationProfile,
    beta: f64,
    noise: &NoiseSpec,
) -> Result<CandidateCore, OptimizerError> {
    let k = profile.device_count() as f64;
    let (s1, s2) = profile.prefix_sums(l);
    if s1 == 0.0 {
        return Err(OptimizerError::ZeroCapabilityPrefix { l });
    }
    let m = beta + k - l as f64;
    let r = beta / m;
    let a1 = profile.alpha / (beta + 1.0);
    let w_individual = beta * a1;
    let num = w_individual * s2 + a1 * r * s1 * s1 + noise.block_energy();
    let den = a1 * (beta + k) * r * s1;
    let sqrt_eta = num / den;
    let common_level = (beta + k - s1 / sqrt_eta) / m;
    Ok(CandidateCore { sqrt_eta, common_level, level_scale: common_level * sqrt_eta })
}

fn threshold_core(
    l: usize,
    profile: &AggregationProfile,
    noise: &NoiseSpec,
) -> Result<CandidateCore, OptimizerError> {
    let (s1, s2) = profile.prefix_sums(l);
    if s1 == 0.0 {
        return Err(OptimizerError::ZeroCapabilityPrefix { l });
    }
    let sqrt_eta = (profile.alpha * s2 + noise.block_energy()) / (profile.alpha * s1);
    // tail devices invert their channels exactly: unit aggregation level
    Ok(CandidateCore { sqrt_eta, common_level: 1.0, level_scale: sqrt_eta })
}

fn materialize_candidate(
    l: usize,
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
    core: CandidateCore,
) -> Result<SubregionCandidate, OptimizerError> {
    let k = profile.device_count();
    let eta = core.sqrt_eta * core.sqrt_eta;
    let mut powers = Vec::with_capacity(k);
    let mut legal = true;
    for (pos, ch) in profile.channels.iter().enumerate() {
        if pos < l {
            powers.push(ch.peak_power);
        } else {
            let p = core.level_scale * core.level_scale * profile.alpha
                / (ch.magnitude * ch.magnitude);
            if !(p < ch.peak_power * (1.0 - LEGALITY_MARGIN)) {
                legal = false;
            }
            powers.push(p);
        }
    }
    let value = if powers.iter().all(|p| p.is_finite()) {
        mse_ab(stats, &powers, &profile.channels, eta, noise)?.total
    } else {
        f64::INFINITY
    };
    Ok(SubregionCandidate { l, powers, eta, value, legal, common_level: core.common_level })
}

/// Closed-form optimum of the subregion where the `l` least capable devices
/// transmit at peak power. Requires finite positive `beta`; the `beta = 0`
/// and `beta = inf` limits are dispatched in [`solve`].
pub fn candidate_for_subregion(
    l: usize,
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
) -> Result<SubregionCandidate, OptimizerError> {
    validate_stats(stats)?;
    if !(stats.beta > 0.0) || stats.beta.is_infinite() {
        return Err(OptimizerError::SpecialCaseBeta(stats.beta));
    }
    if l == 0 || l > profile.device_count() {
        return Err(OptimizerError::InvalidSubregionIndex {
            l,
            device_count: profile.device_count(),
        });
    }
    let core = general_core(l, profile, stats.beta, noise)?;
    materialize_candidate(l, profile, stats, noise, core)
}

fn validate_stats(stats: &GradientStats) -> Result<(), OptimizerError> {
    if !stats.alpha.is_finite() || stats.alpha <= 0.0 {
        return Err(OptimizerError::NonPositiveAlpha(stats.alpha));
    }
    if stats.beta.is_nan() || stats.beta < 0.0 {
        return Err(OptimizerError::InvalidBeta(stats.beta));
    }
    Ok(())
}

fn candidate_core(
    l: usize,
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
) -> Result<CandidateCore, OptimizerError> {
    if stats.beta.is_infinite() {
        threshold_core(l, profile, noise)
    } else {
        general_core(l, profile, stats.beta, noise)
    }
}

/// Full-power assignment with the error-optimal denoising factor for that
/// assignment (the threshold pinned at `l = K`). This is the solution when
/// `beta = 0`, and a baseline policy otherwise.
pub fn full_power_solution(
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
) -> Result<PowerSolution, OptimizerError> {
    validate_stats(stats)?;
    let k = profile.device_count();
    let (s1, _) = profile.prefix_sums(k);
    if s1 == 0.0 {
        return Err(OptimizerError::AllChannelsZero);
    }
    let core = if stats.beta == 0.0 {
        let kf = k as f64;
        let sqrt_eta =
            (profile.alpha * s1 * s1 + noise.block_energy()) / (profile.alpha * kf * s1);
        let common_level = s1 / (kf * sqrt_eta);
        CandidateCore { sqrt_eta, common_level, level_scale: common_level * sqrt_eta }
    } else {
        candidate_core(k, profile, stats, noise)?
    };
    let candidate = materialize_candidate(k, profile, stats, noise, core)?;
    solution_from_candidate(profile, stats, noise, candidate)
}

fn solution_from_candidate(
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
    candidate: SubregionCandidate,
) -> Result<PowerSolution, OptimizerError> {
    let mse = mse_ab(stats, &candidate.powers, &profile.channels, candidate.eta, noise)?;
    Ok(PowerSolution {
        powers: profile.unsort(&candidate.powers),
        eta: candidate.eta,
        l_star: candidate.l,
        mse,
    })
}

/// Solve the joint power/denoising-factor problem in closed form.
///
/// Enumerates the K thresholds, keeps the legal candidates (the tail powers
/// strictly below their peaks) and returns the one of least error; ties go to
/// the smallest threshold. Exact `beta = 0` yields full power everywhere;
/// exact `beta = inf` yields threshold-based channel inversion.
pub fn solve(
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
) -> Result<PowerSolution, OptimizerError> {
    validate_stats(stats)?;
    let k = profile.device_count();
    let (total_capability, _) = profile.prefix_sums(k);
    if total_capability == 0.0 {
        return Err(OptimizerError::AllChannelsZero);
    }
    if stats.beta == 0.0 {
        return full_power_solution(profile, stats, noise);
    }
    let mut best: Option<SubregionCandidate> = None;
    for l in 1..=k {
        let core = match candidate_core(l, profile, stats, noise) {
            Err(OptimizerError::ZeroCapabilityPrefix { .. }) => continue,
            other => other?,
        };
        let candidate = materialize_candidate(l, profile, stats, noise, core)?;
        if !candidate.legal {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => candidate.value < b.value,
        };
        if better {
            best = Some(candidate);
        }
    }
    // the l = K candidate has no tail and positive capability sum, so it is
    // always present and legal
    let candidate = best.expect("threshold enumeration always yields a legal candidate");
    solution_from_candidate(profile, stats, noise, candidate)
}

/// Check that a solution's tail devices sit inside their subregion's
/// capability interval: `C_{l*} <= sqrt(p_k)*|h_k|/sqrt(alpha) < C_{l*+1}`
/// for every tail device (upper bound skipped at `l* = K`). Holds for every
/// [`solve`] output.
pub fn verify_lstar_interval(
    solution: &PowerSolution,
    profile: &AggregationProfile,
    stats: &GradientStats,
) -> bool {
    let k = profile.device_count();
    let l = solution.l_star;
    if l >= k {
        return true;
    }
    let lower = profile.capabilities[l - 1];
    let upper = profile.capabilities[l];
    let sqrt_alpha = stats.alpha.sqrt();
    profile.order[l..].iter().zip(&profile.channels[l..]).all(|(&orig, ch)| {
        let level_scale = solution.powers[orig].sqrt() * ch.magnitude / sqrt_alpha;
        level_scale >= lower * (1.0 - INTERVAL_SLACK) && level_scale < upper
    })
}

/// Locate the optimal threshold by interval classification alone: the unique
/// `l` whose candidate tail level scale lands in `[C_l, C_{l+1})`, with `K`
/// as the fallback when no proper prefix qualifies. Agrees with the argmin
/// selection in [`solve`].
pub fn lstar_by_interval(
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
) -> Result<usize, OptimizerError> {
    validate_stats(stats)?;
    let k = profile.device_count();
    if stats.beta == 0.0 {
        return Ok(k);
    }
    for l in 1..k {
        let core = match candidate_core(l, profile, stats, noise) {
            Err(OptimizerError::ZeroCapabilityPrefix { .. }) => continue,
            other => other?,
        };
        let lower = profile.capabilities[l - 1];
        let upper = profile.capabilities[l];
        if core.level_scale >= lower * (1.0 - LEGALITY_MARGIN) && core.level_scale < upper {
            return Ok(l);
        }
    }
    Ok(k)
}

/// Solve across an ascending SMCV grid with everything else held fixed.
pub fn sweep_beta(
    profile: &AggregationProfile,
    noise: &NoiseSpec,
    betas: &[f64],
) -> Result<Vec<PowerSolution>, OptimizerError> {
    if betas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(OptimizerError::GridNotSorted);
    }
    betas
        .iter()
        .map(|&beta| solve(profile, &GradientStats::new(profile.alpha, beta), noise))
        .collect()
}
