//! SGD with momentum and weight decay on the combined objective, under a
//! cosine-annealed learning rate.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::Zip;

use super::model::TrainableModel;
use super::objective::total_loss;
use super::sampler::sample_batches;
use super::schedule::cosine_lr;
use super::TrainConfig;
use crate::embedding_store::{DatasetView, FeatureMatrix};
use crate::error::{Result, XconError};
use crate::partition::PartitionResult;
use crate::scalar::Scalar;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStep {
    pub step: usize,
    pub lr: f64,
    pub coarse: f64,
    pub fine: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<TrainStep>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,L_coarse,L_fine,L_total\n");
        for s in &self.steps {
            writeln!(out, "{},{},{},{},{}", s.step, s.lr, s.coarse, s.fine, s.total).expect("write to string");
        }
        out
    }

    pub fn first_total(&self) -> Option<f64> {
        self.steps.first().map(|s| s.total)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.steps.last().map(|s| s.total)
    }
}

/// Number of optimizer steps per epoch.
pub fn steps_per_epoch(n: usize, coarse_batch: usize) -> usize {
    (n / coarse_batch).max(1)
}

/// Trains a freshly initialized model.
pub fn train<T: Scalar>(
    features: &FeatureMatrix<T>,
    view: &DatasetView,
    partition: &PartitionResult,
    config: &TrainConfig,
) -> Result<(TrainableModel<T>, TrainTrace)> {
    let model = TrainableModel::new(config.dims(features.d()), derive_seed(config.seed, "init"));
    train_with_model(model, features, view, partition, config)
}

/// Trains starting from `model`.
pub fn train_with_model<T: Scalar>(
    mut model: TrainableModel<T>,
    features: &FeatureMatrix<T>,
    view: &DatasetView,
    partition: &PartitionResult,
    config: &TrainConfig,
) -> Result<(TrainableModel<T>, TrainTrace)> {
    config.validate()?;
    if !features.is_normalized() {
        return Err(XconError::InvalidArgument("training expects L2-normalized features".into()));
    }
    if partition.k != config.partitions || model.head_count() != partition.k + 1 {
        return Err(XconError::InvalidArgument(format!(
            "model has {} heads, partition has K={}, config K={}",
            model.head_count(),
            partition.k,
            config.partitions
        )));
    }
    if config.use_fine {
        partition.check_trainable()?;
    }

    let weights = config.weights::<T>();
    let fine_active = config.use_fine && config.alpha != 0.0;
    let total_steps = config.epochs * steps_per_epoch(features.n(), config.coarse_batch);
    let mut velocity = model.zeros_like();
    let mut trace = TrainTrace::default();
    let mut warned: BTreeSet<usize> = BTreeSet::new();
    let momentum = T::of(config.momentum);
    let decay = T::of(config.weight_decay);

    for step in 0..total_steps {
        let lr = cosine_lr(step, total_steps, config.base_lr)?;
        let batches = sample_batches(features, view, partition, config, step, fine_active)?;
        for &k in &batches.with_replacement {
            if warned.insert(k) {
                log::warn!(
                    "sub-dataset {k} has {} rows, fewer than fine batch {}; sampling with replacement",
                    partition.sizes[k],
                    config.fine_batch
                );
            }
        }
        let (losses, grads) = total_loss(&model, &batches.coarse, &batches.fine, &weights)?;
        let (coarse, fine, total) = (losses.coarse.as_f64(), losses.fine.as_f64(), losses.total.as_f64());
        if !total.is_finite() {
            return Err(XconError::NonFiniteLoss { step, coarse, fine });
        }
        trace.steps.push(TrainStep {
            step,
            lr,
            coarse,
            fine,
            total,
        });
        sgd_step(&mut model, &grads, &mut velocity, T::of(lr), momentum, decay);
        if !model.all_finite() {
            return Err(XconError::NonFiniteLoss { step, coarse, fine });
        }
    }
    Ok((model, trace))
}

/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − η·v`.
fn sgd_step<T: Scalar>(
    model: &mut TrainableModel<T>,
    grads: &TrainableModel<T>,
    velocity: &mut TrainableModel<T>,
    lr: T,
    momentum: T,
    decay: T,
) {
    for ((p, g), v) in model.linears_mut().zip(grads.linears()).zip(velocity.linears_mut()) {
        Zip::from(&mut p.weight).and(&g.weight).and(&mut v.weight).for_each(|p, &g, v| {
            *v = momentum * *v + g + decay * *p;
            *p -= lr * *v;
        });
        Zip::from(&mut p.bias).and(&g.bias).and(&mut v.bias).for_each(|p, &g, v| {
            *v = momentum * *v + g + decay * *p;
            *p -= lr * *v;
        });
    }
}
