//! Mini-batch SGD with classical momentum, metrics tracking, and evaluation.
//!
//! Defaults match the training recipe the networks were tuned with:
//! momentum 0.9, learning rate 0.01, 50 epochs, batch size 64, constant
//! learning rate, mean cross-entropy over the batch, no augmentation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{save_model, GradStore, Model, Precision};
use crate::ops::cross_entropy;
use crate::tensor::{Rng, Tensor};

/// Per-parameter velocity buffers plus the step hyperparameters.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl SgdState {
    /// Zero-initialized velocities mirroring the model's registry.
    pub fn for_model(model: &Model, lr: f64, momentum: f64) -> SgdState {
        let velocity = model
            .params()
            .into_iter()
            .map(|(name, p)| (name, vec![0.0; p.len()]))
            .collect();
        SgdState {
            lr,
            momentum,
            velocity,
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(|v| v.as_slice())
    }
}

/// Classical momentum update kernel: `v <- momentum*v + g; w <- w - lr*v`.
pub fn momentum_update(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, momentum: f64) {
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = momentum * *vi + gi;
        *wi -= lr * *vi;
    }
}

/// Applies one optimizer step to every registered parameter.
pub fn sgd_momentum_step(model: &mut Model, grads: &GradStore, state: &mut SgdState) -> Result<()> {
    let params = model.params_mut();
    if params.len() != grads.entries.len() {
        return Err(Error::Train("optimizer registry mismatch".into()));
    }
    for ((name, w), (gname, g)) in params.into_iter().zip(&grads.entries) {
        if &name != gname || w.len() != g.len() {
            return Err(Error::Train(format!(
                "optimizer registry mismatch at {name} vs {gname}"
            )));
        }
        let v = state
            .velocity
            .get_mut(&name)
            .ok_or_else(|| Error::Train(format!("no velocity buffer for {name}")))?;
        momentum_update(w, v, g, state.lr, state.momentum);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Wall time is kept out of the serialized form so reports from identical
/// seeds serialize identically.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub final_train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Labeled feature tensors with index-based split membership.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    /// One `(1, 1, T, F)` tensor per sample.
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl FeatureSet {
    pub fn split_indices(&self, split: crate::dataset::Split) -> &[usize] {
        match split {
            crate::dataset::Split::Train => &self.train_idx,
            crate::dataset::Split::Val => &self.val_idx,
            crate::dataset::Split::Test => &self.test_idx,
        }
    }
}

fn stack_features(features: &[Tensor], idxs: &[usize]) -> Result<Tensor> {
    let [_, c, h, w] = features[idxs[0]].shape();
    let mut data = Vec::with_capacity(idxs.len() * c * h * w);
    for &i in idxs {
        data.extend_from_slice(features[i].data());
    }
    Tensor::from_vec([idxs.len(), c, h, w], data)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains in place. Deterministic for a given seed: the per-epoch shuffle is
/// the only randomness. When a validation split exists, the weights from the
/// best validation epoch are restored at the end.
pub fn train(model: &mut Model, data: &FeatureSet, cfg: &TrainConfig) -> Result<TrainReport> {
    let started = Instant::now();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        best_val_accuracy: None,
        best_epoch: None,
        final_train_accuracy: None,
        test_accuracy: None,
        wall_time_secs: 0.0,
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if data.train_idx.is_empty() {
        return Err(Error::Train("training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Train("batch size must be nonzero".into()));
    }
    let mut state = SgdState::for_model(model, cfg.lr, cfg.momentum);
    let mut rng = Rng::new(cfg.seed);
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;

    for epoch in 0..cfg.epochs {
        let mut order = data.train_idx.clone();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = stack_features(&data.features, batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let out = model.forward_train(&x)?;
            let caches = out.caches.expect("train mode keeps caches");
            for (row, &label) in out.probs.iter().zip(&labels) {
                let loss = cross_entropy(row, label)?;
                // NaN probabilities slip past the cross-entropy floor, so
                // check the row as well as the loss
                if !loss.is_finite() || row.iter().any(|p| p.is_nan()) {
                    return Err(Error::Train(format!(
                        "non-finite loss at epoch {epoch} batch {batch_no}; \
                         try a lower learning rate"
                    )));
                }
                loss_sum += loss;
                seen += 1;
                if argmax(row) == label {
                    correct += 1;
                }
            }
            let grads = model.backward(&caches, &out.probs, &labels)?;
            sgd_momentum_step(model, &grads, &mut state)?;
        }
        let val_accuracy = if data.val_idx.is_empty() {
            None
        } else {
            Some(evaluate_split(model, data, &data.val_idx)?)
        };
        if let Some(acc) = val_accuracy {
            let better = match &best {
                Some((b, _, _)) => acc > *b,
                None => true,
            };
            if better {
                let snapshot = model.params().iter().map(|(_, p)| p.to_vec()).collect();
                best = Some((acc, epoch, snapshot));
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_accuracy,
        });
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_model(model, &dir.join(format!("epoch_{epoch:03}.tspn")))?;
        }
    }

    report.final_train_accuracy = report.epochs.last().map(|e| e.train_accuracy);
    if let Some((acc, epoch, snapshot)) = best {
        for ((_, w), saved) in model.params_mut().into_iter().zip(&snapshot) {
            w.copy_from_slice(saved);
        }
        report.best_val_accuracy = Some(acc);
        report.best_epoch = Some(epoch);
        if let Some(dir) = &cfg.checkpoint_dir {
            save_model(model, &dir.join("best.tspn"))?;
        }
    }
    if !data.test_idx.is_empty() {
        report.test_accuracy = Some(evaluate_split(model, data, &data.test_idx)?);
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Argmax accuracy over the given samples; ties resolve to the lowest class
/// index. Never mutates the model.
pub fn evaluate(model: &Model, features: &[Tensor], labels: &[usize]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Train("evaluation split is empty".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Train("features/labels length mismatch".into()));
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..features.len()).collect();
    for chunk in all.chunks(64) {
        let x = stack_features(features, chunk)?;
        let probs = model.forward_infer(&x, Precision::F64)?;
        for (row, &i) in probs.iter().zip(chunk) {
            if argmax(row) == labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Accuracy over one split of a feature set.
pub fn evaluate_split(model: &Model, data: &FeatureSet, idxs: &[usize]) -> Result<f64> {
    if idxs.is_empty() {
        return Err(Error::Train("evaluation split is empty".into()));
    }
    let mut correct = 0usize;
    for chunk in idxs.chunks(64) {
        let x = stack_features(&data.features, chunk)?;
        let probs = model.forward_infer(&x, Precision::F64)?;
        for (row, &i) in probs.iter().zip(chunk) {
            if argmax(row) == data.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / idxs.len() as f64)
}
