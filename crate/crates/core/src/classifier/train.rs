//! Minibatch SGD with momentum and best-validation-accuracy selection.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{argmax, Gradients, Mlp};
use super::{featurize_batch, FeatureNorm};
use crate::error::{Error, Result};
use crate::labels::{apply_policy, SmoothingPolicy};
use crate::seed::{self, stream};
use crate::synth::{DatasetStats, RoiSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    /// Init bound is `weight_init_scale / sqrt(fan_in)`.
    pub weight_init_scale: f64,
    /// Offset added to linear pixel power before `log10`.
    pub feature_floor_offset: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 40,
            seed: 1,
            hidden_dims: vec![64, 64],
            // He-uniform for ReLU layers
            weight_init_scale: 6f64.sqrt(),
            feature_floor_offset: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |name: &str, msg: &str| Err(Error::config(format!("{field}.{name}"), msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden_dims", "layer widths must be positive");
        }
        if !(self.weight_init_scale > 0.0 && self.weight_init_scale.is_finite()) {
            return bad("weight_init_scale", "must be positive");
        }
        if !(self.feature_floor_offset >= 0.0 && self.feature_floor_offset.is_finite()) {
            return bad("feature_floor_offset", "must be >= 0");
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(n_classes))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e).map_err(|e| Error::csv("training log", e))?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "train_loss", "val_accuracy"])
                .map_err(|e| Error::csv("training log", e))?;
        }
        w.flush().map_err(|e| Error::io("<training log>", e))
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).reduce(f64::max)
    }
}

/// A selected network with everything needed to run it on new samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: Mlp,
    pub norm: FeatureNorm,
    pub policy: SmoothingPolicy,
    pub config: TrainConfig,
    /// Epoch whose snapshot was kept; 0 for the untrained initialisation.
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// Heavy-ball SGD: `v <- mu v - lr g`, `w <- w + v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    learning_rate: f64,
    momentum: f64,
    velocity: Gradients,
}

impl SgdMomentum {
    pub fn new(params: &Mlp, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) {
        let v = &mut self.velocity;
        for (v, g) in v.weights.iter_mut().zip(&grads.weights) {
            *v *= self.momentum;
            v.scaled_add(-self.learning_rate, g);
        }
        for (v, g) in v.biases.iter_mut().zip(&grads.biases) {
            *v *= self.momentum;
            v.scaled_add(-self.learning_rate, g);
        }
        params.add_scaled(1.0, &self.velocity);
    }
}

fn accuracy(params: &Mlp, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let probs = params.forward_batch(x.view())?;
    let correct = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p.as_slice().expect("standard layout")) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Trains one network on targets from `policy` and keeps the snapshot with
/// the highest validation accuracy (the earlier epoch wins ties).
pub fn train(
    train_split: &[RoiSample],
    val_split: &[RoiSample],
    policy: &SmoothingPolicy,
    stats: &DatasetStats,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::invalid(
            "training and validation splits must be non-empty",
        ));
    }
    config
        .validate("train")
        .map_err(|e| Error::invalid(e.to_string()))?;
    policy.validate()?;
    let n_classes = stats.n_classes();

    let norm = FeatureNorm::fit(train_split, config.feature_floor_offset)?;
    let train_refs: Vec<&RoiSample> = train_split.iter().collect();
    let val_refs: Vec<&RoiSample> = val_split.iter().collect();
    let x_train = featurize_batch(&train_refs, &norm)?;
    let x_val = featurize_batch(&val_refs, &norm)?;
    let val_labels: Vec<usize> = val_split.iter().map(|s| s.class_id).collect();

    let mut targets = Array2::zeros((train_split.len(), n_classes));
    for (mut row, s) in targets.rows_mut().into_iter().zip(train_split) {
        let label = apply_policy(s, policy, stats)?;
        row.assign(&ndarray::ArrayView1::from(&label.probs));
    }

    let mut init_rng = seed::rng_for(config.seed, &[stream::INIT]);
    let layer_dims = config.layer_dims(norm.dim(), n_classes);
    let mut params = Mlp::init(&layer_dims, config.weight_init_scale, &mut init_rng)?;
    let mut optimizer = SgdMomentum::new(&params, config.learning_rate, config.momentum);

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut log = TrainLog::default();

    let mut shuffle_rng = seed::rng_for(config.seed, &[stream::SHUFFLE]);
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let dim = norm.dim();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut xb = Array2::zeros((batch.len(), dim));
            let mut yb = Array2::zeros((batch.len(), n_classes));
            for (k, &i) in batch.iter().enumerate() {
                xb.row_mut(k).assign(&x_train.row(i));
                yb.row_mut(k).assign(&targets.row(i));
            }
            let (loss, grads) = params
                .loss_and_grad_batch(xb.view(), yb.view())
                .map_err(|e| match e {
                    Error::NumericFailure { message, .. } => {
                        Error::NumericFailure { epoch, message }
                    }
                    other => other,
                })?;
            loss_sum += loss * batch.len() as f64;

            optimizer.step(&mut params, &grads);
        }
        let train_loss = loss_sum / train_split.len() as f64;
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(Error::NumericFailure {
                epoch,
                message: format!("training diverged (loss {train_loss})"),
            });
        }
        let val_accuracy = accuracy(&params, &x_val, &val_labels)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_epoch = epoch;
            best = params.clone();
        }
    }

    Ok(TrainedModel {
        params: best,
        norm,
        policy: policy.clone(),
        config: config.clone(),
        best_epoch,
        log,
    })
}

/// Seed of the `index`-th run derived from a base seed.
pub fn run_seed(base: u64, index: usize) -> u64 {
    seed::derive(base, &[stream::RUN, index as u64])
}

/// `n_seeds` independent runs; run `i` uses `config` with its seed replaced
/// by `run_seed(config.seed, i)`. Results are in run order.
pub fn multi_seed_train(
    train_split: &[RoiSample],
    val_split: &[RoiSample],
    policy: &SmoothingPolicy,
    stats: &DatasetStats,
    config: &TrainConfig,
    n_seeds: usize,
) -> Result<Vec<TrainedModel>> {
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be at least 1"));
    }
    (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = TrainConfig {
                seed: run_seed(config.seed, i),
                ..config.clone()
            };
            train(train_split, val_split, policy, stats, &cfg)
        })
        .collect()
}

/// On-disk model: row-major `(fan_in, fan_out)` weights plus everything
/// needed to featurise and interpret inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub feature_norm: FeatureNorm,
    pub policy: SmoothingPolicy,
    pub config: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
}

impl ModelFile {
    pub fn from_model(model: &TrainedModel) -> Self {
        Self {
            layer_dims: model.params.layer_dims().to_vec(),
            weights: model
                .params
                .weights()
                .iter()
                .map(|w| w.iter().copied().collect())
                .collect(),
            biases: model.params.biases().iter().map(|b| b.to_vec()).collect(),
            feature_norm: model.norm.clone(),
            policy: model.policy.clone(),
            config: model.config.clone(),
            seed: model.config.seed,
            best_epoch: model.best_epoch,
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        let params = Mlp::from_parts(&self.layer_dims, self.weights, self.biases)?;
        if self.feature_norm.dim() != params.input_dim() {
            return Err(Error::invalid(
                "feature normalisation does not match the network input",
            ));
        }
        Ok(TrainedModel {
            params,
            norm: self.feature_norm,
            policy: self.policy,
            config: self.config,
            best_epoch: self.best_epoch,
            log: TrainLog::default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json("model", e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
