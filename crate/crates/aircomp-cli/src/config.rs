//! Command configuration files: strict JSON (unknown keys rejected), every
//! field defaulted except where an experiment cannot be defined without it.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use aircomp_fl::sim::{Partition, Scheme, TrainConfig};

use crate::CliError;

/// SMCV value in configs: a JSON number, or the string "inf" for the
/// zero-mean-gradient limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaValue(pub f64);

impl<'de> Deserialize<'de> for BetaValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let v = match Raw::deserialize(d)? {
            Raw::Num(x) => x,
            Raw::Text(s) => match s.as_str() {
                "inf" | "infinity" => f64::INFINITY,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "beta must be a number or \"inf\", got \"{other}\""
                    )))
                }
            },
        };
        if v.is_nan() || v < 0.0 {
            return Err(serde::de::Error::custom(format!(
                "beta must be non-negative, got {v}"
            )));
        }
        Ok(BetaValue(v))
    }
}

impl Serialize for BetaValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl fmt::Display for BetaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// One scheme or a list of schemes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeSpec {
    One(Scheme),
    Many(Vec<Scheme>),
}

impl SchemeSpec {
    pub fn to_vec(&self) -> Vec<Scheme> {
        match self {
            SchemeSpec::One(s) => vec![*s],
            SchemeSpec::Many(v) => v.clone(),
        }
    }
}

fn d_snr_db() -> f64 {
    10.0
}
fn d_noise_variance() -> f64 {
    1.0
}
fn d_alpha() -> f64 {
    1.0
}
fn d_dimension_one() -> usize {
    1
}
fn d_beta_min() -> f64 {
    1e-3
}
fn d_beta_max() -> f64 {
    1e3
}
fn d_beta_step() -> f64 {
    1.01
}
fn d_true() -> bool {
    true
}

/// Config for `solve-once` and `sweep-beta`: an explicit channel instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// Channel magnitudes |h_k|, one per device.
    pub magnitudes: Vec<f64>,
    /// Per-device peak powers; when absent they are derived from `snr_db` as
    /// `10^(snr_db/10) * dimension * noise_variance`.
    #[serde(default)]
    pub peak_powers: Option<Vec<f64>>,
    #[serde(default = "d_snr_db")]
    pub snr_db: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// SMCV for `solve-once` (number or "inf"); ignored by `sweep-beta`.
    #[serde(default)]
    pub beta: Option<BetaValue>,
    #[serde(default = "d_noise_variance")]
    pub noise_variance: f64,
    #[serde(default = "d_dimension_one")]
    pub dimension: usize,
    /// Multiplicative sweep grid for `sweep-beta`.
    #[serde(default = "d_beta_min")]
    pub beta_min: f64,
    #[serde(default = "d_beta_max")]
    pub beta_max: f64,
    #[serde(default = "d_beta_step")]
    pub beta_step: f64,
    /// Prepend beta = 0 and append beta = inf to the sweep grid.
    #[serde(default = "d_true")]
    pub include_limits: bool,
}

impl SolveConfig {
    pub fn peak_powers(&self) -> Result<Vec<f64>, CliError> {
        match &self.peak_powers {
            Some(p) => {
                if p.len() != self.magnitudes.len() {
                    return Err(CliError::Config(format!(
                        "peak_powers length {} disagrees with magnitudes length {}",
                        p.len(),
                        self.magnitudes.len()
                    )));
                }
                Ok(p.clone())
            }
            None => {
                let reference = if self.noise_variance > 0.0 { self.noise_variance } else { 1.0 };
                let p = 10f64.powf(self.snr_db / 10.0) * self.dimension as f64 * reference;
                Ok(vec![p; self.magnitudes.len()])
            }
        }
    }

    pub fn beta_grid(&self) -> Result<Vec<f64>, CliError> {
        if !(self.beta_step > 1.0) {
            return Err(CliError::Config(format!(
                "beta_step must exceed 1 (multiplicative grid), got {}",
                self.beta_step
            )));
        }
        if !(self.beta_min > 0.0 && self.beta_max >= self.beta_min) {
            return Err(CliError::Config(format!(
                "need 0 < beta_min <= beta_max, got [{}, {}]",
                self.beta_min, self.beta_max
            )));
        }
        let mut grid = Vec::new();
        if self.include_limits {
            grid.push(0.0);
        }
        let mut b = self.beta_min;
        while b <= self.beta_max {
            grid.push(b);
            b *= self.beta_step;
        }
        if self.include_limits {
            grid.push(f64::INFINITY);
        }
        Ok(grid)
    }
}

fn d_device_count() -> usize {
    10
}
fn d_dimension() -> usize {
    500
}
fn d_class_count() -> usize {
    10
}
fn d_sample_count() -> usize {
    5000
}
fn d_test_fraction() -> f64 {
    0.2
}
fn d_mean_scale() -> f64 {
    0.15
}
fn d_feature_noise() -> f64 {
    0.5
}
fn d_nuisance_dim() -> usize {
    25
}
fn d_nuisance_noise() -> f64 {
    4.0
}
fn d_init_scale() -> f64 {
    1.0
}
fn d_learning_rate() -> f64 {
    0.15
}
fn d_batch_size() -> usize {
    100_000
}
fn d_rounds() -> usize {
    200
}
fn d_partition() -> Partition {
    Partition::NonIid
}
fn d_scheme() -> SchemeSpec {
    SchemeSpec::Many(Scheme::ALL.to_vec())
}
fn d_master_seed() -> u64 {
    17
}
fn d_seeds() -> usize {
    20
}
fn d_beta_init() -> f64 {
    1.0
}
fn d_eval_every() -> usize {
    10
}

/// Config for the training commands (`fl-run`, `fig2-stats`, `snr-sweep`,
/// `device-sweep`). All fields are defaulted; `snr_grid_db` and
/// `device_grid` are consumed only by their respective sweep commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_device_count")]
    pub device_count: usize,
    #[serde(default = "d_dimension")]
    pub dimension: usize,
    #[serde(default = "d_class_count")]
    pub class_count: usize,
    #[serde(default = "d_sample_count")]
    pub sample_count: usize,
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "d_mean_scale")]
    pub mean_scale: f64,
    #[serde(default = "d_feature_noise")]
    pub feature_noise: f64,
    #[serde(default = "d_nuisance_dim")]
    pub nuisance_dim: usize,
    #[serde(default = "d_nuisance_noise")]
    pub nuisance_noise: f64,
    #[serde(default = "d_init_scale")]
    pub init_scale: f64,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default = "d_snr_db")]
    pub snr_db: f64,
    #[serde(default = "d_noise_variance")]
    pub noise_variance: f64,
    /// Draw channels once per replicate instead of per round.
    #[serde(default)]
    pub freeze_channels: bool,
    #[serde(default = "d_partition")]
    pub partition: Partition,
    #[serde(default = "d_scheme")]
    pub scheme: SchemeSpec,
    #[serde(default = "d_master_seed")]
    pub master_seed: u64,
    #[serde(default = "d_seeds")]
    pub seeds: usize,
    #[serde(default = "d_beta_init")]
    pub beta_init: f64,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// SNR grid for `snr-sweep` (dB).
    #[serde(default)]
    pub snr_grid_db: Option<Vec<f64>>,
    /// Device-count grid for `device-sweep`.
    #[serde(default)]
    pub device_grid: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config populates from defaults")
    }
}

impl RunConfig {
    pub fn to_train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            device_count: self.device_count,
            dimension: self.dimension,
            class_count: self.class_count,
            sample_count: self.sample_count,
            test_fraction: self.test_fraction,
            mean_scale: self.mean_scale,
            feature_noise: self.feature_noise,
            nuisance_dim: self.nuisance_dim,
            nuisance_noise: self.nuisance_noise,
            init_scale: self.init_scale,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            rounds: self.rounds,
            snr_db: self.snr_db,
            noise_variance: self.noise_variance,
            freeze_channels: self.freeze_channels,
            partition: self.partition,
            schemes: self.scheme.to_vec(),
            master_seed: self.master_seed,
            seeds: self.seeds,
            beta_init: self.beta_init,
            eval_every: self.eval_every,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn d_oracle_k() -> usize {
    3
}
fn d_oracle_trials() -> usize {
    100
}
fn d_oracle_seed() -> u64 {
    0xC1
}
fn d_oracle_budget() -> u64 {
    50_000_000
}
fn d_snr_range() -> [f64; 2] {
    [0.0, 20.0]
}
fn d_beta_range() -> [f64; 2] {
    [0.01, 100.0]
}
fn d_alpha_range() -> [f64; 2] {
    [0.1, 10.0]
}

/// Config for `oracle-check`: random-instance comparison of the closed-form
/// solver against the brute-force search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckConfig {
    #[serde(default = "d_oracle_k")]
    pub k: usize,
    #[serde(default = "d_oracle_trials")]
    pub trials: usize,
    #[serde(default = "d_oracle_seed")]
    pub seed: u64,
    #[serde(default = "d_oracle_budget")]
    pub budget: u64,
    #[serde(default = "d_snr_range")]
    pub snr_range_db: [f64; 2],
    #[serde(default = "d_beta_range")]
    pub beta_range: [f64; 2],
    #[serde(default = "d_alpha_range")]
    pub alpha_range: [f64; 2],
    #[serde(default = "d_dimension_one")]
    pub dimension: usize,
    #[serde(default = "d_noise_variance")]
    pub noise_variance: f64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config populates from defaults")
    }
}

/// Parse a strict JSON config file; the error message names the offending
/// key or value.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = serde_json::from_str::<RunConfig>(r#"{"snr_dB": 10}"#).unwrap_err();
        assert!(err.to_string().contains("snr_dB"), "error should name the key: {err}");
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.device_count, 10);
        assert_eq!(cfg.rounds, 200);
        assert_eq!(cfg.scheme.to_vec().len(), 5);
        cfg.to_train_config().unwrap();
    }

    #[test]
    fn config_round_trips() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"device_count": 10, "snr_db": 10.0, "partition": "noniid", "seeds": 20}"#,
        )
        .unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn beta_accepts_inf_and_rejects_negatives() {
        let b: BetaValue = serde_json::from_str("\"inf\"").unwrap();
        assert!(b.0.is_infinite());
        let b: BetaValue = serde_json::from_str("0.5").unwrap();
        assert_eq!(b.0, 0.5);
        assert!(serde_json::from_str::<BetaValue>("-1.0").is_err());
        assert!(serde_json::from_str::<BetaValue>("\"huge\"").is_err());
    }

    #[test]
    fn scheme_spec_accepts_one_or_many() {
        let one: SchemeSpec = serde_json::from_str("\"adaptive\"").unwrap();
        assert_eq!(one.to_vec(), vec![Scheme::Adaptive]);
        let many: SchemeSpec =
            serde_json::from_str(r#"["full_power", "error_free"]"#).unwrap();
        assert_eq!(many.to_vec(), vec![Scheme::FullPower, Scheme::ErrorFree]);
    }

    #[test]
    fn sweep_grid_shape() {
        let cfg: SolveConfig =
            serde_json::from_str(r#"{"magnitudes": [1.0], "beta_min": 1.0, "beta_max": 2.0, "beta_step": 1.5}"#)
                .unwrap();
        let grid = cfg.beta_grid().unwrap();
        assert_eq!(grid[0], 0.0);
        assert!(grid.last().unwrap().is_infinite());
        assert_eq!(&grid[1..grid.len() - 1], &[1.0, 1.5]);
    }
}
