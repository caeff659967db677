//! Softmax probe over frozen representations.
//!
//! The probe is multinomial logistic regression: `softmax(W x + b)` trained
//! by mini-batch gradient descent on mean cross-entropy plus
//! `(l2 / 2) ||W||²`. Parameters start at zero, batches are shuffled by a
//! seeded generator, and the epoch with the best dev macro F1 is kept.

mod features;
mod metrics;
mod serialize;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoders::{EmbeddingProvider, EncodeError, RepresentationVector};
use crate::exec::Execution;
use crate::taskgen::{TaskDataset, TaskKind};
use crate::util::derive_seed;

pub use features::{assemble_features, encode_instances, LabeledFeatures, TweetView};
pub use metrics::{chance_macro_f1, class_frequencies, macro_f1, ClassMetrics, Metrics};
pub use serialize::{read_model, write_model};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("feature dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("label {label} outside 0..{class_count}")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("tweet {0} not in corpus")]
    UnknownTweet(String),
    #[error("model line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("probe io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub l2: f64,
    /// Epochs without dev macro-F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// `None` standardizes dense providers and leaves sparse ones alone.
    pub standardize: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 100,
            l2: 1e-4,
            patience: 5,
            seed: 0,
            standardize: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.l2 > 0.0
            && self.l2.is_finite()
            && self.patience > 0
            && self.patience <= self.max_epochs;
        if ok {
            Ok(())
        } else {
            Err(ProbeError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Per-dimension centering and scaling fitted on the training split.
/// Zero-variance dimensions pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(rows: &[RepresentationVector]) -> Self {
        let dim = rows.first().map_or(0, RepresentationVector::dim);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            r.for_each_entry(|i, x| mean[i] += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            let dense = r.to_dense();
            for ((v, x), m) in var.iter_mut().zip(&dense).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        for (v, m) in var.iter().zip(mean.iter_mut()) {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                std.push(s);
            } else {
                *m = 0.0;
                std.push(1.0);
            }
        }
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &RepresentationVector) -> RepresentationVector {
        let mut dense = x.to_dense();
        for ((v, m), s) in dense.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        RepresentationVector::dense(dense)
    }
}

/// Weight matrix (row-major, `class_count × dim`) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub class_count: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient buffers matching [`Parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Parameters {
    pub fn zeros(class_count: usize, dim: usize) -> Self {
        Parameters {
            class_count,
            dim,
            weights: vec![0.0; class_count * dim],
            bias: vec![0.0; class_count],
        }
    }

    pub fn logits(&self, x: &RepresentationVector) -> Vec<f64> {
        (0..self.class_count)
            .map(|c| x.dot(&self.weights[c * self.dim..(c + 1) * self.dim]) + self.bias[c])
            .collect()
    }

    pub fn probabilities(&self, x: &RepresentationVector) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    fn l2_term(&self, l2: f64) -> f64 {
        0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn cross_entropy(&self, x: &RepresentationVector, label: usize) -> f64 {
        let z = self.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        log_sum - z[label]
    }

    /// Mean cross-entropy over `rows` plus the L2 penalty.
    pub fn objective(&self, data: &LabeledFeatures, rows: &[usize], l2: f64) -> f64 {
        let ce: f64 = rows
            .iter()
            .map(|&i| self.cross_entropy(&data.features[i], data.labels[i]))
            .sum();
        ce / rows.len() as f64 + self.l2_term(l2)
    }

    /// Writes the analytic gradient of [`Parameters::objective`] into `grad`
    /// and returns the objective.
    pub fn gradient(&self, data: &LabeledFeatures, rows: &[usize], l2: f64, grad: &mut Gradient) -> f64 {
        let dim = self.dim;
        let scale = 1.0 / rows.len() as f64;
        for (g, w) in grad.weights.iter_mut().zip(&self.weights) {
            *g = l2 * w;
        }
        grad.bias.iter_mut().for_each(|g| *g = 0.0);
        let mut ce = 0.0;
        for &i in rows {
            let x = &data.features[i];
            let label = data.labels[i];
            let mut p = self.logits(x);
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = p.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            ce += log_sum - p[label];
            softmax_in_place(&mut p);
            for (c, pc) in p.iter().enumerate() {
                let coef = (pc - if c == label { 1.0 } else { 0.0 }) * scale;
                grad.bias[c] += coef;
                let row = &mut grad.weights[c * dim..(c + 1) * dim];
                x.for_each_entry(|j, v| row[j] += coef * v);
            }
        }
        ce * scale + self.l2_term(l2)
    }

    /// Flat view: weights first, then bias.
    fn get(&self, idx: usize) -> f64 {
        match idx.checked_sub(self.weights.len()) {
            None => self.weights[idx],
            Some(b) => self.bias[b],
        }
    }

    fn set(&mut self, idx: usize, value: f64) {
        match idx.checked_sub(self.weights.len()) {
            None => self.weights[idx] = value,
            Some(b) => self.bias[b] = value,
        }
    }

    fn empty_gradient(&self) -> Gradient {
        Gradient {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Training objective before the first update.
    pub initial_loss: f64,
    /// Training objective after each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub dev_macro_f1: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// A trained probe. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub task: Option<TaskKind>,
    pub provider: String,
    pub class_labels: Vec<String>,
    pub params: Parameters,
    pub standardization: Option<Standardization>,
    pub config: TrainConfig,
    pub log: TrainingLog,
}

impl ProbeModel {
    pub fn class_count(&self) -> usize {
        self.params.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.params.dim
    }

    fn prepare(&self, x: &RepresentationVector) -> Result<RepresentationVector, ProbeError> {
        if x.dim() != self.params.dim {
            return Err(ProbeError::DimensionMismatch {
                expected: self.params.dim,
                found: x.dim(),
            });
        }
        Ok(match &self.standardization {
            Some(s) => s.apply(x),
            None => x.clone(),
        })
    }

    /// Class probabilities `softmax(W x + b)`.
    pub fn predict(&self, features: &RepresentationVector) -> Result<Vec<f64>, ProbeError> {
        Ok(self.params.probabilities(&self.prepare(features)?))
    }

    pub fn predict_class(&self, features: &RepresentationVector) -> Result<usize, ProbeError> {
        Ok(argmax(&self.params.logits(&self.prepare(features)?)))
    }

    pub fn predict_all(&self, data: &LabeledFeatures, exec: Execution) -> Result<Vec<usize>, ProbeError> {
        exec.try_map(&data.features, |x| self.predict_class(x))
    }

    pub fn evaluate(&self, data: &LabeledFeatures, exec: Execution) -> Result<Metrics, ProbeError> {
        let predictions = self.predict_all(data, exec)?;
        Metrics::compute(&predictions, &data.labels, self.class_count())
    }
}

fn check_split(name: &'static str, data: &LabeledFeatures, dim: usize, class_count: usize) -> Result<(), ProbeError> {
    if data.is_empty() {
        return Err(ProbeError::EmptySplit(name));
    }
    if let Some(x) = data.features.iter().find(|x| x.dim() != dim) {
        return Err(ProbeError::DimensionMismatch {
            expected: dim,
            found: x.dim(),
        });
    }
    if let Some(&l) = data.labels.iter().find(|&&l| l >= class_count) {
        return Err(ProbeError::LabelOutOfRange { label: l, class_count });
    }
    Ok(())
}

fn standardized(data: &LabeledFeatures, s: &Standardization) -> LabeledFeatures {
    LabeledFeatures {
        features: data.features.iter().map(|x| s.apply(x)).collect(),
        labels: data.labels.clone(),
    }
}

/// Trains on pre-assembled features. `standardize` overrides
/// `cfg.standardize` when the latter is unset.
pub fn train_on_features(
    train: &LabeledFeatures,
    dev: &LabeledFeatures,
    class_count: usize,
    cfg: &TrainConfig,
    default_standardize: bool,
) -> Result<ProbeModel, ProbeError> {
    cfg.validate()?;
    let dim = train.dim().ok_or(ProbeError::EmptySplit("train"))?;
    check_split("train", train, dim, class_count)?;
    check_split("dev", dev, dim, class_count)?;

    let standardization = cfg
        .standardize
        .unwrap_or(default_standardize)
        .then(|| Standardization::fit(&train.features));
    let (train_std, dev_std);
    let (train, dev) = match &standardization {
        Some(s) => {
            train_std = standardized(train, s);
            dev_std = standardized(dev, s);
            (&train_std, &dev_std)
        }
        None => (train, dev),
    };

    let mut params = Parameters::zeros(class_count, dim);
    let all: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog {
        initial_loss: params.objective(train, &all, cfg.l2),
        ..TrainingLog::default()
    };
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut grad = params.empty_gradient();
    let mut order = all.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x9b0be));

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let loss = params.gradient(train, batch, cfg.l2, &mut grad);
            if !loss.is_finite() {
                return Err(ProbeError::NonFiniteLoss { epoch, batch: b });
            }
            for (w, g) in params.weights.iter_mut().zip(&grad.weights) {
                *w -= cfg.learning_rate * g;
            }
            for (w, g) in params.bias.iter_mut().zip(&grad.bias) {
                *w -= cfg.learning_rate * g;
            }
        }
        let loss = params.objective(train, &all, cfg.l2);
        if !loss.is_finite() {
            return Err(ProbeError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        let predictions: Vec<usize> = dev.features.iter().map(|x| argmax(&params.logits(x))).collect();
        let f1 = macro_f1(&predictions, &dev.labels, class_count)?;
        log.epoch_losses.push(loss);
        log.dev_macro_f1.push(f1);
        if f1 > best_f1 {
            best_f1 = f1;
            best.clone_from(&params);
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(ProbeModel {
        task: None,
        provider: String::new(),
        class_labels: (0..class_count).map(|c| c.to_string()).collect(),
        params: best,
        standardization,
        config: cfg.clone(),
        log,
    })
}

/// Encoded train/dev/test splits of one dataset under one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub train: LabeledFeatures,
    pub dev: LabeledFeatures,
    pub test: LabeledFeatures,
}

impl EncodedDataset {
    pub fn encode(
        dataset: &TaskDataset,
        provider: &dyn EmbeddingProvider,
        corpus: &Corpus,
        exec: Execution,
    ) -> Result<Self, ProbeError> {
        let enc = |split| encode_instances(split, provider, corpus, TweetView::Original, exec);
        Ok(EncodedDataset {
            train: enc(&dataset.train)?,
            dev: enc(&dataset.dev)?,
            test: enc(&dataset.test)?,
        })
    }
}

/// Trains a probe for `dataset` on `provider`'s frozen vectors.
pub fn train_probe(
    dataset: &TaskDataset,
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<ProbeModel, ProbeError> {
    let encoded = EncodedDataset::encode(dataset, provider, corpus, Execution::default())?;
    train_encoded(dataset, provider, &encoded, cfg)
}

/// As [`train_probe`], reusing already encoded splits.
pub fn train_encoded(
    dataset: &TaskDataset,
    provider: &dyn EmbeddingProvider,
    encoded: &EncodedDataset,
    cfg: &TrainConfig,
) -> Result<ProbeModel, ProbeError> {
    let mut model = train_on_features(
        &encoded.train,
        &encoded.dev,
        dataset.class_count,
        cfg,
        !provider.is_sparse(),
    )?;
    model.task = Some(dataset.kind);
    model.provider = provider.name().to_string();
    model.class_labels = dataset.class_labels.clone();
    Ok(model)
}

/// Largest relative error between the analytic gradient and central finite
/// differences, over a seeded sample of 64 parameters (all of them when
/// there are fewer). `batch` is taken as model input as-is, i.e. after
/// any standardization.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &ProbeModel, batch: &LabeledFeatures, epsilon: f64) -> Result<f64, ProbeError> {
    if batch.is_empty() {
        return Err(ProbeError::EmptyInput);
    }
    check_split("batch", batch, model.params.dim, model.class_count())?;
    for x in &batch.features {
        let mut finite = true;
        x.for_each_entry(|_, v| finite &= v.is_finite());
        if !finite {
            return Err(ProbeError::NonFiniteValue("feature".into()));
        }
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ProbeError::NonFiniteValue(format!("epsilon {epsilon}")));
    }
    let l2 = model.config.l2;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut params = model.params.clone();
    let mut grad = params.empty_gradient();
    params.gradient(batch, &rows, l2, &mut grad);

    let n_weights = params.weights.len();
    let total = n_weights + params.bias.len();
    let mut candidates: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.config.seed, 0x9c));
    candidates.shuffle(&mut rng);
    candidates.truncate(total.min(64));

    let mut worst = 0.0f64;
    for idx in candidates {
        let analytic = if idx < n_weights {
            grad.weights[idx]
        } else {
            grad.bias[idx - n_weights]
        };
        let original = params.get(idx);
        params.set(idx, original + epsilon);
        let plus = params.objective(batch, &rows, l2);
        params.set(idx, original - epsilon);
        let minus = params.objective(batch, &rows, l2);
        params.set(idx, original);
        let numeric = (plus - minus) / (2.0 * epsilon);
        if !(numeric.is_finite() && analytic.is_finite()) {
            return Err(ProbeError::NonFiniteValue(format!("gradient of parameter {idx}")));
        }
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
