//! End-to-end federated training over the analog uplink.
//!
//! Each round: the server broadcasts the model; every device takes one local
//! SGD step and uploads its gradient norm over an error-free side channel;
//! the server estimates the gradient MSN from the norms, combines it with the
//! SMCV estimate carried over from the previous round's aggregate, solves for
//! transmit powers and the denoising factor, and the devices transmit
//! simultaneously; the server recovers the average, updates the model, and
//! refreshes the SMCV estimate for the next round.
//!
//! Five power-control schemes share that skeleton:
//!
//! - `adaptive`       — estimated `(alpha, beta)` feed the closed-form solver;
//! - `known_stats`    — the solver is fed the round's true across-device
//!                      statistics instead of estimates;
//! - `threshold_beta_inf` — the solver runs pinned at `beta = inf`
//!                      (threshold-based channel inversion);
//! - `full_power`     — every device at its peak, denoising factor optimal
//!                      for that choice;
//! - `error_free`     — the exact average, no channel at all.

pub mod task;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    aircomp_transmit_with, sample_rayleigh_with, AircompRound, ChannelError, DeviceChannel,
    NoiseSpec,
};
use crate::optimizer::{build_profile, full_power_solution, solve, OptimizerError};
use crate::seed::{derive_rng, derive_seed};
use crate::stats::{estimate_alpha, estimate_beta, GradientStats, StatsError};

pub use task::{
    local_sgd_gradient, partition_data, LocalGradient, LogisticModel, SyntheticTask, TaskConfig,
};

// Stream labels under a replicate's master seed. Scheme identity is absent
// on purpose: schemes compared under the same replicate share every draw.
const STREAM_TASK: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_CHANNEL: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_BATCH: u64 = 5;
const STREAM_INIT: u64 = 6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("cannot split {samples} training samples into {shards} equal shards")]
    PartitionMismatch { samples: usize, shards: usize },
    #[error("device shard is empty")]
    EmptyShard,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn at_round(round: usize, source: impl Into<SimError>) -> SimError {
    SimError::Round { round, source: Box::new(source.into()) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "iid")]
    Iid,
    #[serde(rename = "noniid")]
    NonIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Adaptive,
    KnownStats,
    ThresholdBetaInf,
    FullPower,
    ErrorFree,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Adaptive,
        Scheme::KnownStats,
        Scheme::ThresholdBetaInf,
        Scheme::FullPower,
        Scheme::ErrorFree,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Adaptive => "adaptive",
            Scheme::KnownStats => "known_stats",
            Scheme::ThresholdBetaInf => "threshold_beta_inf",
            Scheme::FullPower => "full_power",
            Scheme::ErrorFree => "error_free",
        }
    }
}

/// Full experiment configuration. `dimension` is the flattened model size and
/// must be a multiple of `class_count`; the average received SNR fixes the
/// common peak power as `P = 10^(snr_db/10) * dimension * noise_variance`
/// (reference noise level 1 when `noise_variance` is zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub device_count: usize,
    pub dimension: usize,
    pub class_count: usize,
    pub sample_count: usize,
    pub test_fraction: f64,
    pub mean_scale: f64,
    pub feature_noise: f64,
    pub nuisance_dim: usize,
    pub nuisance_noise: f64,
    /// Std of the random initial weights; 0 starts at the origin. A large
    /// init gives the early rounds a strong shared descent direction, so the
    /// gradient SMCV starts small and grows as training forgets the init.
    pub init_scale: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub snr_db: f64,
    pub noise_variance: f64,
    /// Draw the channels once per replicate instead of once per round
    /// (block fading off), for fixed-channel studies.
    pub freeze_channels: bool,
    pub partition: Partition,
    pub schemes: Vec<Scheme>,
    pub master_seed: u64,
    pub seeds: usize,
    pub beta_init: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            device_count: 10,
            dimension: 500,
            class_count: 10,
            sample_count: 5000,
            test_fraction: 0.2,
            mean_scale: 0.15,
            feature_noise: 0.5,
            nuisance_dim: 25,
            nuisance_noise: 4.0,
            init_scale: 1.0,
            learning_rate: 0.15,
            batch_size: 100_000,
            rounds: 200,
            snr_db: 10.0,
            noise_variance: 1.0,
            freeze_channels: false,
            partition: Partition::NonIid,
            schemes: Scheme::ALL.to_vec(),
            master_seed: 17,
            seeds: 20,
            beta_init: 1.0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.device_count == 0 {
            return fail("device_count must be at least 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.class_count == 0 || self.dimension % self.class_count != 0 {
            return fail(format!(
                "dimension {} must be a positive multiple of class_count {}",
                self.dimension, self.class_count
            ));
        }
        if self.noise_variance < 0.0 || !self.noise_variance.is_finite() {
            return fail(format!("noise_variance must be finite and >= 0, got {}", self.noise_variance));
        }
        if self.schemes.is_empty() {
            return fail("at least one scheme required".into());
        }
        if self.seeds == 0 {
            return fail("seeds must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        if !(self.beta_init >= 0.0) {
            return fail(format!("beta_init must be >= 0, got {}", self.beta_init));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.dimension / self.class_count
    }

    /// Common per-device peak power implied by the average received SNR.
    pub fn peak_power(&self) -> f64 {
        let reference = if self.noise_variance > 0.0 { self.noise_variance } else { 1.0 };
        10f64.powf(self.snr_db / 10.0) * self.dimension as f64 * reference
    }

    pub fn task_config(&self) -> TaskConfig {
        TaskConfig {
            feature_dim: self.feature_dim(),
            class_count: self.class_count,
            sample_count: self.sample_count,
            test_fraction: self.test_fraction,
            mean_scale: self.mean_scale,
            feature_noise: self.feature_noise,
            nuisance_dim: self.nuisance_dim,
            nuisance_noise: self.nuisance_noise,
        }
    }
}

/// Serialize possibly non-finite floats as the strings "inf"/"-inf"/"nan"
/// (plain JSON numbers otherwise).
mod maybe_nonfinite {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

/// Per-round record. Power-control fields are empty/NaN under `error_free`.
/// `alpha_true`/`beta_true` are the across-device empirical statistics of the
/// round's gradients, recorded for every scheme.
#[derive(Debug, Clone, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub alpha_hat: f64,
    #[serde(with = "maybe_nonfinite")]
    pub beta_hat: f64,
    /// Set when the SMCV estimate degenerated to the infinity sentinel.
    pub beta_hat_infinite: bool,
    pub powers: Vec<f64>,
    #[serde(with = "maybe_nonfinite")]
    pub eta: f64,
    pub l_star: usize,
    /// Analytic error of the chosen assignment, 1/K^2-scaled.
    #[serde(with = "maybe_nonfinite")]
    pub mse_analytic: f64,
    pub recovered_norm: f64,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub alpha_true: f64,
    #[serde(with = "maybe_nonfinite")]
    pub beta_true: f64,
}

/// Across-device empirical moments of one round's gradients: biased
/// per-dimension variance plus squared mean, so `alpha_true` coincides with
/// the norm-based estimate exactly.
fn empirical_stats(gradients: &[Vec<f64>]) -> (f64, f64) {
    let k = gradients.len() as f64;
    let d = gradients[0].len();
    let mut var_sum = 0.0;
    let mut mean_sq_sum = 0.0;
    for dim in 0..d {
        let mean: f64 = gradients.iter().map(|g| g[dim]).sum::<f64>() / k;
        let var: f64 = gradients.iter().map(|g| (g[dim] - mean) * (g[dim] - mean)).sum::<f64>() / k;
        var_sum += var;
        mean_sq_sum += mean * mean;
    }
    let alpha = var_sum + mean_sq_sum;
    let beta = if mean_sq_sum > 0.0 { var_sum / mean_sq_sum } else { f64::INFINITY };
    (alpha, beta)
}

/// One scheme's training trajectory on one replicate.
pub struct TrainingRun<'a> {
    task: &'a SyntheticTask,
    shards: &'a [Vec<usize>],
    scheme: Scheme,
    config: &'a TrainConfig,
    replicate_seed: u64,
    pub model: LogisticModel,
    prev_alpha_hat: Option<f64>,
    prev_recovered: Option<Vec<f64>>,
}

impl<'a> TrainingRun<'a> {
    pub fn new(
        task: &'a SyntheticTask,
        shards: &'a [Vec<usize>],
        scheme: Scheme,
        config: &'a TrainConfig,
        replicate: usize,
    ) -> Self {
        let replicate_seed = derive_seed(config.master_seed, &[replicate as u64]);
        let mut model = LogisticModel::zeros(config.feature_dim(), config.class_count);
        if config.init_scale > 0.0 {
            let mut rng = derive_rng(replicate_seed, &[STREAM_INIT]);
            for w in model.weights.iter_mut() {
                *w = config.init_scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        Self {
            task,
            shards,
            scheme,
            config,
            replicate_seed,
            model,
            prev_alpha_hat: None,
            prev_recovered: None,
        }
    }

    /// Execute round `t` (1-based): local gradients, statistic estimation,
    /// power assignment, transmission, model update.
    pub fn run_round(&mut self, t: usize) -> Result<RoundTrace, SimError> {
        let cfg = self.config;
        let k = cfg.device_count;
        let d = cfg.dimension;
        let noise = NoiseSpec::new(cfg.noise_variance, d).map_err(|e| at_round(t, e))?;

        // block fading: fresh channels every round unless frozen
        let channel_round = if cfg.freeze_channels { 0 } else { t as u64 };
        let mut channel_rng = derive_rng(self.replicate_seed, &[STREAM_CHANNEL, channel_round]);
        let peak = cfg.peak_power();
        let channels: Vec<DeviceChannel> = sample_rayleigh_with(k, &mut channel_rng)
            .into_iter()
            .map(|draw| draw.with_peak_power(peak))
            .collect::<Result<_, _>>()
            .map_err(|e| at_round(t, e))?;

        // local SGD and norm upload
        let mut gradients = Vec::with_capacity(k);
        let mut norms = Vec::with_capacity(k);
        let mut loss_sum = 0.0;
        for device in 0..k {
            let mut batch_rng =
                derive_rng(self.replicate_seed, &[STREAM_BATCH, t as u64, device as u64]);
            let local = local_sgd_gradient(
                &self.model,
                self.task,
                &self.shards[device],
                cfg.batch_size,
                &mut batch_rng,
            )
            .map_err(|e| at_round(t, e))?;
            norms.push(local.norm);
            loss_sum += local.batch_loss;
            gradients.push(local.gradient);
        }
        let train_loss = loss_sum / k as f64;
        let alpha_hat = estimate_alpha(&norms).map_err(|e| at_round(t, e))?;
        let (alpha_true, beta_true) = empirical_stats(&gradients);

        let beta_scheme = match self.scheme {
            Scheme::Adaptive | Scheme::FullPower => match (&self.prev_alpha_hat, &self.prev_recovered) {
                (Some(a), Some(g)) => estimate_beta(*a, g).map_err(|e| at_round(t, e))?,
                _ => cfg.beta_init,
            },
            Scheme::KnownStats => beta_true,
            Scheme::ThresholdBetaInf => f64::INFINITY,
            Scheme::ErrorFree => f64::NAN,
        };
        let alpha_scheme = match self.scheme {
            Scheme::KnownStats => alpha_true,
            _ => alpha_hat,
        };

        let (recovered, powers, eta, l_star, mse_analytic) = if self.scheme == Scheme::ErrorFree {
            let mut mean = vec![0.0; d];
            for g in &gradients {
                for (m, &x) in mean.iter_mut().zip(g) {
                    *m += x / k as f64;
                }
            }
            (mean, Vec::new(), f64::NAN, 0, f64::NAN)
        } else {
            let stats = GradientStats::new(alpha_scheme, beta_scheme);
            let profile = build_profile(&channels, alpha_scheme).map_err(|e| at_round(t, e))?;
            let sol = match self.scheme {
                Scheme::FullPower => {
                    full_power_solution(&profile, &stats, &noise).map_err(|e| at_round(t, e))?
                }
                _ => solve(&profile, &stats, &noise).map_err(|e| at_round(t, e))?,
            };
            let round = AircompRound {
                gradients,
                powers: sol.powers.clone(),
                channels,
                denoising_factor: sol.eta,
                alphas: vec![alpha_scheme; k],
            };
            let mut noise_rng = derive_rng(self.replicate_seed, &[STREAM_NOISE, t as u64]);
            let recovered =
                aircomp_transmit_with(&round, &noise, &mut noise_rng).map_err(|e| at_round(t, e))?;
            let scaled = sol.mse.scaled_by_device_count(k);
            (recovered, sol.powers, sol.eta, sol.l_star, scaled.total)
        };

        let recovered_norm = recovered.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.model.step(&recovered, cfg.learning_rate);
        self.prev_alpha_hat = Some(alpha_hat);
        self.prev_recovered = Some(recovered);

        let test_accuracy = if t % cfg.eval_every == 0 || t == cfg.rounds {
            Some(self.model.accuracy(self.task, &self.task.test_indices))
        } else {
            None
        };
        Ok(RoundTrace {
            round: t,
            alpha_hat,
            beta_hat: beta_scheme,
            beta_hat_infinite: beta_scheme.is_infinite(),
            powers,
            eta,
            l_star,
            mse_analytic,
            recovered_norm,
            train_loss,
            test_accuracy,
            alpha_true,
            beta_true,
        })
    }

    pub fn run(&mut self) -> Result<Vec<RoundTrace>, SimError> {
        (1..=self.config.rounds).map(|t| self.run_round(t)).collect()
    }
}

/// One (scheme, replicate) trajectory plus its final metrics.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub replicate: usize,
    pub final_test_accuracy: f64,
    pub final_train_loss: f64,
    #[serde(skip)]
    pub traces: Vec<RoundTrace>,
}

/// Median and spread of final metrics across replicates.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub replicates: usize,
    pub median_final_accuracy: f64,
    pub min_final_accuracy: f64,
    pub max_final_accuracy: f64,
    pub median_final_loss: f64,
}

#[derive(Debug, Serialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<SchemeSummary>,
}

impl ExperimentOutcome {
    pub fn summary(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme)
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run every configured scheme over every replicate. Replicates draw their
/// own dataset, partition, channels and noise; schemes within a replicate
/// share all of those streams, so cross-scheme comparisons are paired.
pub fn run_experiment(config: &TrainConfig) -> Result<ExperimentOutcome, SimError> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.seeds * config.schemes.len());
    for replicate in 0..config.seeds {
        let replicate_seed = derive_seed(config.master_seed, &[replicate as u64]);
        let task = SyntheticTask::generate(
            &config.task_config(),
            derive_seed(replicate_seed, &[STREAM_TASK]),
        )?;
        let shards = partition_data(
            &task,
            config.device_count,
            config.partition,
            derive_seed(replicate_seed, &[STREAM_PARTITION]),
        )?;
        for &scheme in &config.schemes {
            let mut run = TrainingRun::new(&task, &shards, scheme, config, replicate);
            let traces = run.run()?;
            let final_test_accuracy = traces
                .iter()
                .rev()
                .find_map(|tr| tr.test_accuracy)
                .unwrap_or(f64::NAN);
            let final_train_loss = traces.last().map(|tr| tr.train_loss).unwrap_or(f64::NAN);
            runs.push(RunRecord {
                scheme,
                replicate,
                final_test_accuracy,
                final_train_loss,
                traces,
            });
        }
    }
    let summaries = config
        .schemes
        .iter()
        .map(|&scheme| {
            let acc: Vec<f64> = runs
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| r.final_test_accuracy)
                .collect();
            let loss: Vec<f64> = runs
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| r.final_train_loss)
                .collect();
            SchemeSummary {
                scheme,
                replicates: acc.len(),
                median_final_accuracy: median(&acc),
                min_final_accuracy: acc.iter().copied().fold(f64::INFINITY, f64::min),
                max_final_accuracy: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                median_final_loss: median(&loss),
            }
        })
        .collect();
    Ok(ExperimentOutcome { runs, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            device_count: 4,
            dimension: 30,
            class_count: 3,
            sample_count: 240,
            test_fraction: 0.25,
            mean_scale: 1.0,
            feature_noise: 1.5,
            nuisance_dim: 2,
            nuisance_noise: 3.0,
            init_scale: 0.0,
            learning_rate: 0.05,
            batch_size: 10,
            rounds: 6,
            snr_db: 10.0,
            noise_variance: 1.0,
            freeze_channels: false,
            partition: Partition::Iid,
            schemes: vec![Scheme::Adaptive],
            master_seed: 3,
            seeds: 1,
            beta_init: 1.0,
            eval_every: 3,
        }
    }

    fn build_fixture(cfg: &TrainConfig, replicate: usize) -> (SyntheticTask, Vec<Vec<usize>>) {
        let replicate_seed = derive_seed(cfg.master_seed, &[replicate as u64]);
        let task = SyntheticTask::generate(
            &cfg.task_config(),
            derive_seed(replicate_seed, &[STREAM_TASK]),
        )
        .unwrap();
        let shards = partition_data(
            &task,
            cfg.device_count,
            cfg.partition,
            derive_seed(replicate_seed, &[STREAM_PARTITION]),
        )
        .unwrap();
        (task, shards)
    }

    #[test]
    fn error_free_round_is_a_plain_sgd_step() {
        let mut cfg = tiny_config();
        cfg.schemes = vec![Scheme::ErrorFree];
        let (task, shards) = build_fixture(&cfg, 0);
        let mut run = TrainingRun::new(&task, &shards, Scheme::ErrorFree, &cfg, 0);
        // replay the same gradients by hand
        let replicate_seed = derive_seed(cfg.master_seed, &[0]);
        let model_before = run.model.clone();
        let mut mean = vec![0.0; cfg.dimension];
        for device in 0..cfg.device_count {
            let mut rng = derive_rng(replicate_seed, &[STREAM_BATCH, 1, device as u64]);
            let local =
                local_sgd_gradient(&model_before, &task, &shards[device], cfg.batch_size, &mut rng)
                    .unwrap();
            for (m, g) in mean.iter_mut().zip(&local.gradient) {
                *m += g / cfg.device_count as f64;
            }
        }
        let trace = run.run_round(1).unwrap();
        assert!(trace.powers.is_empty());
        for (i, w) in run.model.weights.iter().enumerate() {
            let expected = model_before.weights[i] - cfg.learning_rate * mean[i];
            assert!((w - expected).abs() < 1e-15, "weight {i}");
        }
    }

    #[test]
    fn noiseless_known_stats_recovers_exact_average() {
        // With zero channel noise the optimum aligns every device exactly,
        // so the recovered gradient equals the plain average.
        let mut cfg = tiny_config();
        cfg.noise_variance = 0.0;
        cfg.schemes = vec![Scheme::KnownStats, Scheme::ErrorFree];
        cfg.rounds = 3;
        let outcome = run_experiment(&cfg).unwrap();
        let known = &outcome.runs[0];
        let ideal = &outcome.runs[1];
        assert_eq!(known.scheme, Scheme::KnownStats);
        for (a, b) in known.traces.iter().zip(&ideal.traces) {
            assert!(
                (a.recovered_norm - b.recovered_norm).abs()
                    <= 1e-9 * b.recovered_norm.max(1e-12),
                "round {}: {} vs {}",
                a.round,
                a.recovered_norm,
                b.recovered_norm
            );
        }
    }

    #[test]
    fn adaptive_and_known_stats_share_round_one_draws() {
        let mut cfg = tiny_config();
        cfg.schemes = vec![Scheme::Adaptive, Scheme::KnownStats];
        cfg.rounds = 1;
        let (task, shards) = build_fixture(&cfg, 0);
        let mut a = TrainingRun::new(&task, &shards, Scheme::Adaptive, &cfg, 0);
        let mut b = TrainingRun::new(&task, &shards, Scheme::KnownStats, &cfg, 0);
        let ta = a.run_round(1).unwrap();
        let tb = b.run_round(1).unwrap();
        // identical gradients and norm uploads -> identical MSN estimates
        assert_eq!(ta.alpha_hat, tb.alpha_hat);
        assert_eq!(ta.alpha_true, tb.alpha_true);
        assert_eq!(ta.beta_true, tb.beta_true);
        // the MSN estimate equals the empirical MSN identically
        assert!((ta.alpha_hat - ta.alpha_true).abs() <= 1e-9 * ta.alpha_true);
        // the two schemes differ only through beta
        assert_eq!(ta.beta_hat, cfg.beta_init);
        assert_eq!(tb.beta_hat, tb.beta_true);
    }

    #[test]
    fn beta_estimator_engages_after_first_round() {
        // Noiseless channels: after one round the SMCV estimate lands much
        // closer to the previous round's truth than the initialization did.
        let mut cfg = tiny_config();
        cfg.noise_variance = 0.0;
        cfg.rounds = 2;
        cfg.beta_init = 1.0;
        let (task, shards) = build_fixture(&cfg, 0);
        let mut run = TrainingRun::new(&task, &shards, Scheme::Adaptive, &cfg, 0);
        let t1 = run.run_round(1).unwrap();
        let t2 = run.run_round(2).unwrap();
        let init_error = (cfg.beta_init - t1.beta_true).abs();
        let engaged_error = (t2.beta_hat - t1.beta_true).abs();
        assert!(
            engaged_error < init_error,
            "estimator should beat the initialization: {engaged_error} vs {init_error} (beta_true {})",
            t1.beta_true
        );
    }

    #[test]
    fn traces_are_bit_identical_across_reruns() {
        let mut cfg = tiny_config();
        cfg.schemes = vec![Scheme::Adaptive, Scheme::FullPower, Scheme::ThresholdBetaInf];
        cfg.rounds = 4;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.scheme, rb.scheme);
            for (ta, tb) in ra.traces.iter().zip(&rb.traces) {
                assert_eq!(ta.powers, tb.powers);
                assert!(ta.eta == tb.eta || (ta.eta.is_nan() && tb.eta.is_nan()));
                assert_eq!(ta.recovered_norm, tb.recovered_norm);
                assert_eq!(ta.train_loss, tb.train_loss);
            }
        }
    }

    #[test]
    fn noniid_beta_exceeds_iid_beta_at_round_one() {
        // Label-sorted shards disperse the device gradients, so the first
        // round's across-device SMCV is larger under the non-IID partition
        // (median over 20 replicates).
        let mut cfg = TrainConfig {
            schemes: vec![Scheme::ErrorFree],
            rounds: 1,
            seeds: 20,
            ..TrainConfig::default()
        };
        let mut diffs = Vec::new();
        for partition in [Partition::Iid, Partition::NonIid] {
            cfg.partition = partition;
            let outcome = run_experiment(&cfg).unwrap();
            let betas: Vec<f64> =
                outcome.runs.iter().map(|r| r.traces[0].beta_true).collect();
            diffs.push(median(&betas));
        }
        assert!(
            diffs[1] > diffs[0],
            "round-1 SMCV: noniid {} should exceed iid {}",
            diffs[1],
            diffs[0]
        );
    }

    #[test]
    fn frozen_channels_repeat_across_rounds() {
        // With the channel freeze on, a policy that depends only on channels
        // and the (nearly constant) MSN estimate assigns the same powers
        // every round; with block fading it does not.
        let mut cfg = tiny_config();
        cfg.schemes = vec![Scheme::ThresholdBetaInf];
        cfg.learning_rate = 1e-9; // keep the model, and hence alpha_hat, still
        cfg.rounds = 2;
        cfg.freeze_channels = true;
        let (task, shards) = build_fixture(&cfg, 0);
        let mut frozen = TrainingRun::new(&task, &shards, Scheme::ThresholdBetaInf, &cfg, 0);
        let f1 = frozen.run_round(1).unwrap();
        let f2 = frozen.run_round(2).unwrap();
        for (a, b) in f1.powers.iter().zip(&f2.powers) {
            assert!((a - b).abs() <= 1e-6 * a.max(1.0), "frozen channels: {a} vs {b}");
        }
        cfg.freeze_channels = false;
        let mut fading = TrainingRun::new(&task, &shards, Scheme::ThresholdBetaInf, &cfg, 0);
        let b1 = fading.run_round(1).unwrap();
        let b2 = fading.run_round(2).unwrap();
        let moved = b1
            .powers
            .iter()
            .zip(&b2.powers)
            .any(|(a, b)| (a - b).abs() > 1e-3 * a.max(1.0));
        assert!(moved, "block fading should redraw the channels");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_config();
        cfg.dimension = 31; // not a multiple of class_count
        assert!(matches!(cfg.validate(), Err(SimError::InvalidConfig(_))));
        let mut cfg = tiny_config();
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.schemes.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_errors_carry_the_round_index() {
        let mut cfg = tiny_config();
        cfg.learning_rate = 1.0; // fine; error comes from an empty shard below
        let (task, _) = build_fixture(&cfg, 0);
        let shards = vec![Vec::new(); cfg.device_count];
        let mut run = TrainingRun::new(&task, &shards, Scheme::Adaptive, &cfg, 0);
        match run.run_round(3) {
            Err(SimError::Round { round, .. }) => assert_eq!(round, 3),
            other => panic!("expected round-tagged error, got {other:?}"),
        }
    }
}
