//! Loss, learning-rate schedule, optimizer step, and the training loop.
//!
//! The loss is categorical cross-entropy over softmax probabilities with
//! the fused gradient `(probs - onehot) / batch` w.r.t. the pre-softmax
//! logits. The optimizer is plain SGD,
//! `w <- w - eta * (alpha * dR/dw + dL/dw)` with an optional L2 penalty
//! `R(w) = ||w||^2 / 2` that never touches bias parameters, under either
//! a constant learning rate or the inverse-time schedule
//! `eta(t) = 1 / (alpha * (t0 + t))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{model_backward, model_forward_cached, ModelConfig, ModelState, NnError};
use crate::tensor::{stack_axis, Scalar, SeededRng, Tensor, TensorError};

#[derive(Debug, Clone, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    Config(String),
    #[error("labels must be one-hot rows, offending row {0}")]
    BadLabels(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch}, learning rate {lr}")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("dataset empty")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Learning-rate schedule selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "eta0")]
pub enum Schedule {
    /// Fixed learning rate.
    Constant(f64),
    /// `eta(t) = 1 / (alpha * (t0 + t))`.
    Optimal,
}

/// Weight-decay penalty selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    None,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub t0: f64,
    pub schedule: Schedule,
    pub penalty: Penalty,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            alpha: 0.0,
            t0: 1.0,
            schedule: Schedule::Constant(0.01),
            penalty: Penalty::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.alpha < 0.0 {
            return Err(TrainError::Config("alpha must be >= 0".into()));
        }
        if let Schedule::Optimal = self.schedule {
            if self.alpha <= 0.0 {
                return Err(TrainError::Config(
                    "optimal schedule needs alpha > 0 (eta = 1/(alpha (t0 + t)))".into(),
                ));
            }
            if self.t0 <= 0.0 {
                return Err(TrainError::Config("optimal schedule needs t0 > 0".into()));
            }
        }
        Ok(())
    }
}

/// One row per completed epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub lr_at_end: f64,
    pub seconds: f64,
}

pub type TrainHistory = Vec<EpochStats>;

/// Categorical cross-entropy over probabilities plus the fused gradient
/// w.r.t. the pre-softmax logits.
///
/// `loss = -(1/batch) * sum_i sum_c y[i][c] * ln(p[i][c] + 1e-12)`,
/// `grad_logits = (p - y) / batch`.
pub fn cce_loss<T: Scalar>(
    probs: &Tensor<T>,
    onehot: &Tensor<T>,
) -> Result<(f64, Tensor<T>), TrainError> {
    if probs.shape() != onehot.shape() || probs.rank() != 2 {
        return Err(TrainError::Tensor(TensorError::ShapeMismatch {
            op: "cce_loss",
            left: probs.shape().to_vec(),
            right: onehot.shape().to_vec(),
        }));
    }
    let (batch, k) = (probs.shape()[0], probs.shape()[1]);
    for (i, row) in onehot.data().chunks_exact(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::ONE).count();
        let zeros = row.iter().filter(|&&v| v == T::ZERO).count();
        if ones != 1 || zeros != k - 1 {
            return Err(TrainError::BadLabels(i));
        }
    }
    let eps = 1e-12;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    let inv_batch = 1.0 / batch as f64;
    for i in 0..batch * k {
        let p = probs.data()[i].to_f64();
        let y = onehot.data()[i].to_f64();
        if y == 1.0 {
            loss -= (p + eps).ln();
        }
        grad.data_mut()[i] = T::of((p - y) * inv_batch);
    }
    loss *= inv_batch;
    Ok((loss, grad))
}

/// Learning rate at optimizer step `t` (steps count parameter updates).
pub fn lr_schedule(t: u64, config: &TrainConfig) -> Result<f64, TrainError> {
    config.validate()?;
    Ok(match config.schedule {
        Schedule::Constant(eta0) => eta0,
        Schedule::Optimal => 1.0 / (config.alpha * (config.t0 + t as f64)),
    })
}

/// In-place SGD update `w <- w - eta (alpha dR/dw + dL/dw)`.
///
/// With `penalty = L2`, `dR/dw = w` for every parameter whose name does
/// not end in `.bias`; bias parameters are never regularized.
pub fn sgd_step<T: Scalar>(
    state: &mut ModelState<T>,
    grads: &ModelState<T>,
    eta: f64,
    alpha: f64,
    penalty: Penalty,
) -> Result<(), TrainError> {
    let eta_t = T::of(eta);
    let alpha_t = T::of(alpha);
    for (name, value) in state.iter_mut() {
        let grad = grads
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.clone()))?;
        if grad.shape() != value.shape() {
            return Err(TrainError::Nn(NnError::ParamShape {
                name: name.clone(),
                expected: value.shape().to_vec(),
                found: grad.shape().to_vec(),
            }));
        }
        let regularize = penalty == Penalty::L2 && !name.ends_with(".bias");
        for (w, &g) in value.data_mut().iter_mut().zip(grad.iter()) {
            let mut step = g;
            if regularize {
                step += alpha_t * *w;
            }
            *w -= eta_t * step;
        }
    }
    Ok(())
}

/// One training sample: an assembled input volume and its class.
#[derive(Debug, Clone)]
pub struct TrainSample<T: Scalar> {
    pub input: Tensor<T>,
    pub label: usize,
}

fn onehot<T: Scalar>(labels: &[usize], k: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * k + l] = T::ONE;
    }
    t
}

/// Loss, correct-prediction count, and gradients for a set of samples.
type BatchPart<T> = (f64, usize, ModelState<T>);

/// Forward/backward for one batch.
fn batch_gradients<T: Scalar>(
    samples: &[&TrainSample<T>],
    state: &ModelState<T>,
    model_cfg: &ModelConfig,
) -> Result<BatchPart<T>, TrainError> {
    let inputs: Vec<&Tensor<T>> = samples.iter().map(|s| &s.input).collect();
    let batch = stack_axis(&inputs, 0)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let targets = onehot::<T>(&labels, model_cfg.num_classes);

    let cache = model_forward_cached(&batch, state, model_cfg)?;
    let (loss, grad_logits) = cce_loss(cache.probs(), &targets)?;
    let grads = model_backward(&grad_logits, state, model_cfg, &cache)?;

    let k = model_cfg.num_classes;
    let correct = cache
        .probs()
        .data()
        .chunks_exact(k)
        .zip(&labels)
        .filter(|(row, &label)| {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            pred == label
        })
        .count();
    Ok((loss, correct, grads))
}

/// Full training loop: seeded shuffle per epoch, mini-batch SGD with the
/// configured schedule and penalty. Deterministic for a fixed seed; batch
/// members are processed with an order-fixed reduction, so results do not
/// depend on the worker thread count.
pub fn train<T: Scalar>(
    dataset: &[TrainSample<T>],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    initial: ModelState<T>,
) -> Result<(ModelState<T>, TrainHistory), TrainError> {
    train_cfg.validate()?;
    model_cfg.validate().map_err(TrainError::Nn)?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut state = initial;
    let mut history = TrainHistory::new();
    let mut shuffle_rng = SeededRng::new(crate::tensor::derive_seed(train_cfg.seed, "shuffle"));
    let mut step: u64 = 0;

    for epoch in 0..train_cfg.epochs {
        let start = std::time::Instant::now();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut batches = 0usize;
        let mut lr = 0.0;

        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let members: Vec<&TrainSample<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
            // Per-sample gradients in parallel, reduced in index order so
            // the sum is identical for any thread count.
            let parts: Vec<Result<BatchPart<T>, TrainError>> = members
                .par_iter()
                .map(|s| batch_gradients(std::slice::from_ref(s), &state, model_cfg))
                .collect();
            let mut grads: Option<ModelState<T>> = None;
            let mut batch_loss = 0.0;
            for part in parts {
                let (loss, c, g) = part?;
                batch_loss += loss;
                correct += c;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => acc.add_assign(&g)?,
                }
            }
            let n = members.len() as f64;
            batch_loss /= n;
            // Per-sample losses are means over their singleton batches;
            // rescale gradient sums to the batch mean.
            let mut grads = grads.expect("non-empty batch");
            let scale = T::of(1.0 / n);
            for (_, g) in grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }

            lr = lr_schedule(step, train_cfg)?;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    lr,
                });
            }
            sgd_step(&mut state, &grads, lr, train_cfg.alpha, train_cfg.penalty)?;
            step += 1;
            epoch_loss += batch_loss;
            batches += 1;
        }

        history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
            lr_at_end: lr,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((state, history))
}

/// Argmax class per row of a probability tensor.
pub fn predict_classes<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}
