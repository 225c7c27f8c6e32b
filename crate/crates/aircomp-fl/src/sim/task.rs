//! Desk-scale synthetic learning task: a seeded Gaussian-mixture
//! classification dataset with a multinomial logistic-regression model, plus
//! the IID / non-IID device partitioning and local mini-batch gradients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed::derive_rng;

use super::{Partition, SimError};

/// Shape and difficulty knobs of the synthetic dataset.
///
/// The last `nuisance_dim` features carry no class information (zero mean
/// for every class) but have inflated variance `nuisance_noise`; they bound
/// the stable learning rate and couple any weight noise into the logits, so
/// aggregation error degrades accuracy instead of washing out.
#[derive(Debug, Clone)]
pub struct TaskConfig {
    pub feature_dim: usize,
    pub class_count: usize,
    pub sample_count: usize,
    /// Held-out fraction per class.
    pub test_fraction: f64,
    /// Std of the class-mean entries (informative features).
    pub mean_scale: f64,
    /// Within-class per-feature std (informative features).
    pub feature_noise: f64,
    /// Count of trailing uninformative features (must be < feature_dim).
    pub nuisance_dim: usize,
    /// Within-class std of the uninformative features.
    pub nuisance_noise: f64,
}

/// A labeled Gaussian-mixture dataset with a per-class train/test split.
/// Samples are laid out class by class, so label-sorted sharding is a range
/// walk.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    features: Vec<f64>, // sample-major, feature_dim entries per sample
    labels: Vec<usize>,
    pub feature_dim: usize,
    pub class_count: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl SyntheticTask {
    pub fn generate(cfg: &TaskConfig, seed: u64) -> Result<Self, SimError> {
        if cfg.class_count < 2 || cfg.feature_dim == 0 {
            return Err(SimError::InvalidTask(
                "need at least 2 classes and 1 feature".into(),
            ));
        }
        if cfg.sample_count == 0 || cfg.sample_count % cfg.class_count != 0 {
            return Err(SimError::InvalidTask(format!(
                "sample_count {} must be a positive multiple of class_count {}",
                cfg.sample_count, cfg.class_count
            )));
        }
        if !(0.0..1.0).contains(&cfg.test_fraction) {
            return Err(SimError::InvalidTask(format!(
                "test_fraction {} must lie in [0, 1)",
                cfg.test_fraction
            )));
        }
        if cfg.nuisance_dim >= cfg.feature_dim {
            return Err(SimError::InvalidTask(format!(
                "nuisance_dim {} must leave at least one informative feature of {}",
                cfg.nuisance_dim, cfg.feature_dim
            )));
        }
        let per_class = cfg.sample_count / cfg.class_count;
        let test_per_class = (per_class as f64 * cfg.test_fraction).round() as usize;
        let train_per_class = per_class - test_per_class;
        if train_per_class == 0 {
            return Err(SimError::InvalidTask("no training samples left per class".into()));
        }
        let mut rng = derive_rng(seed, &[]);
        let informative = cfg.feature_dim - cfg.nuisance_dim;
        let class_means: Vec<Vec<f64>> = (0..cfg.class_count)
            .map(|_| {
                (0..informative)
                    .map(|_| cfg.mean_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut features = Vec::with_capacity(cfg.sample_count * cfg.feature_dim);
        let mut labels = Vec::with_capacity(cfg.sample_count);
        let mut train_indices = Vec::with_capacity(train_per_class * cfg.class_count);
        let mut test_indices = Vec::with_capacity(test_per_class * cfg.class_count);
        for (class, mean) in class_means.iter().enumerate() {
            for i in 0..per_class {
                let idx = labels.len();
                labels.push(class);
                for &m in mean {
                    features.push(m + cfg.feature_noise * rng.sample::<f64, _>(StandardNormal));
                }
                for _ in 0..cfg.nuisance_dim {
                    features.push(cfg.nuisance_noise * rng.sample::<f64, _>(StandardNormal));
                }
                if i < train_per_class {
                    train_indices.push(idx);
                } else {
                    test_indices.push(idx);
                }
            }
        }
        Ok(Self {
            features,
            labels,
            feature_dim: cfg.feature_dim,
            class_count: cfg.class_count,
            train_indices,
            test_indices,
        })
    }

    pub fn feature(&self, sample: usize) -> &[f64] {
        &self.features[sample * self.feature_dim..(sample + 1) * self.feature_dim]
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample]
    }

    /// Dimension of the flattened classifier weights.
    pub fn model_dimension(&self) -> usize {
        self.feature_dim * self.class_count
    }
}

/// Split the training samples across devices.
///
/// `Iid` deals every device an equal random shard. `NonIid` sorts by label,
/// cuts `2K` equal shards and deals two to each device, so a device sees at
/// most two labels when shards align with class boundaries.
pub fn partition_data(
    task: &SyntheticTask,
    device_count: usize,
    mode: Partition,
    seed: u64,
) -> Result<Vec<Vec<usize>>, SimError> {
    if device_count == 0 {
        return Err(SimError::InvalidTask("device_count must be at least 1".into()));
    }
    let n = task.train_indices.len();
    let mut rng = derive_rng(seed, &[]);
    match mode {
        Partition::Iid => {
            if n < device_count || n % device_count != 0 {
                return Err(SimError::PartitionMismatch {
                    samples: n,
                    shards: device_count,
                });
            }
            let mut indices = task.train_indices.clone();
            indices.shuffle(&mut rng);
            let shard = n / device_count;
            Ok(indices.chunks(shard).map(|c| c.to_vec()).collect())
        }
        Partition::NonIid => {
            let shard_count = 2 * device_count;
            if n < shard_count || n % shard_count != 0 {
                return Err(SimError::PartitionMismatch { samples: n, shards: shard_count });
            }
            let mut indices = task.train_indices.clone();
            indices.sort_by_key(|&i| (task.label(i), i));
            let shard = n / shard_count;
            let mut shard_ids: Vec<usize> = (0..shard_count).collect();
            shard_ids.shuffle(&mut rng);
            Ok(shard_ids
                .chunks(2)
                .map(|pair| {
                    pair.iter()
                        .flat_map(|&s| indices[s * shard..(s + 1) * shard].iter().copied())
                        .collect()
                })
                .collect())
        }
    }
}

/// Flattened multinomial logistic-regression classifier (no bias terms, so
/// the model dimension is exactly `class_count * feature_dim`).
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>, // class-major: weights[c * feature_dim + f]
    pub feature_dim: usize,
    pub class_count: usize,
}

impl LogisticModel {
    pub fn zeros(feature_dim: usize, class_count: usize) -> Self {
        Self { weights: vec![0.0; feature_dim * class_count], feature_dim, class_count }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
            *slot = row.iter().zip(x).map(|(w, xf)| w * xf).sum();
        }
    }

    /// Softmax probabilities in place of the logits buffer; returns the
    /// log-probability of `label`.
    fn softmax_logprob(logits: &mut [f64], label: usize) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in logits.iter_mut() {
            *v /= z;
        }
        logits[label].ln()
    }

    /// Mean cross-entropy loss and its gradient over the given samples.
    pub fn loss_gradient(&self, task: &SyntheticTask, samples: &[usize]) -> (f64, Vec<f64>) {
        assert!(!samples.is_empty());
        let mut gradient = vec![0.0; self.weights.len()];
        let mut probs = vec![0.0; self.class_count];
        let mut loss = 0.0;
        let inv = 1.0 / samples.len() as f64;
        for &s in samples {
            let x = task.feature(s);
            let y = task.label(s);
            self.logits(x, &mut probs);
            loss -= Self::softmax_logprob(&mut probs, y);
            for (c, &p) in probs.iter().enumerate() {
                let coeff = (p - if c == y { 1.0 } else { 0.0 }) * inv;
                let row = &mut gradient[c * self.feature_dim..(c + 1) * self.feature_dim];
                for (g, &xf) in row.iter_mut().zip(x) {
                    *g += coeff * xf;
                }
            }
        }
        (loss * inv, gradient)
    }

    pub fn mean_loss(&self, task: &SyntheticTask, samples: &[usize]) -> f64 {
        let mut probs = vec![0.0; self.class_count];
        let mut loss = 0.0;
        for &s in samples {
            self.logits(task.feature(s), &mut probs);
            loss -= Self::softmax_logprob(&mut probs, task.label(s));
        }
        loss / samples.len() as f64
    }

    pub fn accuracy(&self, task: &SyntheticTask, samples: &[usize]) -> f64 {
        let mut logits = vec![0.0; self.class_count];
        let mut correct = 0usize;
        for &s in samples {
            self.logits(task.feature(s), &mut logits);
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c)
                .unwrap();
            if pred == task.label(s) {
                correct += 1;
            }
        }
        correct as f64 / samples.len() as f64
    }

    pub fn step(&mut self, gradient: &[f64], learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(gradient) {
            *w -= learning_rate * g;
        }
    }
}

/// One device's local SGD result for a round.
#[derive(Debug, Clone)]
pub struct LocalGradient {
    pub gradient: Vec<f64>,
    pub norm: f64,
    pub batch_loss: f64,
}

/// Draw a mini-batch from the shard (without replacement; the whole shard if
/// `batch_size` covers it) and return the local loss gradient and its norm.
pub fn local_sgd_gradient<R: Rng + ?Sized>(
    model: &LogisticModel,
    task: &SyntheticTask,
    shard: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<LocalGradient, SimError> {
    if shard.is_empty() {
        return Err(SimError::EmptyShard);
    }
    let (loss, gradient) = if batch_size >= shard.len() {
        model.loss_gradient(task, shard)
    } else {
        let mut pool = shard.to_vec();
        let (batch, _) = pool.partial_shuffle(rng, batch_size);
        model.loss_gradient(task, batch)
    };
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(LocalGradient { gradient, norm, batch_loss: loss })
}
