//! Momentum-SGD training with a two-phase step-decay learning-rate curve,
//! plus the shared evaluation helpers (cross-entropy, accuracy).
//!
//! Determinism: per-sample gradients inside a batch are computed by an
//! order-preserving parallel map and then summed sequentially, so results are
//! bit-identical for any worker count. Shuffling draws from a per-epoch
//! derived stream of the schedule seed.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::parallel::map_indexed;
use crate::pruning::PruneMask;
use crate::rng::{rng_for, Stream};
use crate::scalar::Scalar;

use super::ops::{argmax, log_softmax};
use super::{AnyModel, BackwardWants};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f32,
    pub momentum: f32,
    /// Epoch index at which the learning rate drops by `decay_factor`
    /// (the second phase of the two-phase curve).
    pub decay_at: usize,
    pub decay_factor: f32,
    /// Seed for the per-epoch shuffling streams.
    pub seed: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Config("need epochs >= 1 and batch_size >= 1".into()));
        }
        if !(self.base_lr > 0.0) || !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(CoreError::Config(
                "need base_lr > 0 and momentum in [0, 1)".into(),
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(CoreError::Config("need decay_factor in (0, 1]".into()));
        }
        Ok(())
    }

    /// The configured learning rate at a given epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        if epoch < self.decay_at {
            self.base_lr
        } else {
            self.base_lr * self.decay_factor
        }
    }

    /// The full per-epoch learning-rate curve.
    pub fn lr_curve(&self) -> Vec<f32> {
        (0..self.epochs).map(|e| self.lr_at(e)).collect()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Learning rate actually applied at each epoch.
    pub lr_values: Vec<f32>,
    /// Total optimizer steps taken.
    pub optimizer_steps: usize,
}

/// Cross-entropy loss and its gradient w.r.t. the logits
/// (softmax(logits) − onehot(label)).
pub fn cross_entropy_grad<S: Scalar>(logits: &[S], label: usize) -> (f64, Vec<S>) {
    let ls = log_softmax(logits);
    let loss = -ls[label].to_f64();
    let dlogits = ls
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let p = l.exp();
            if i == label {
                p - S::ONE
            } else {
                p
            }
        })
        .collect();
    (loss, dlogits)
}

/// Train in place. With a mask attached, masked weights are (re)zeroed before
/// training and stay exactly zero after every optimizer step: their
/// gradients, velocity entries, and weights are all pinned to zero.
pub fn train<S: Scalar>(
    model: &mut AnyModel<S>,
    data: &[Sample],
    schedule: &Schedule,
    mask: Option<&PruneMask>,
) -> Result<TrainReport> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(CoreError::EmptyInput("training dataset".into()));
    }
    if let Some(m) = mask {
        m.check_matches(model.params())?;
        m.apply_to(model.params_mut());
    }
    let n_classes = model.n_classes();
    for s in data {
        if s.label >= n_classes {
            return Err(CoreError::Training(alloc::format!(
                "label {} out of range for {} classes",
                s.label,
                n_classes
            )));
        }
    }

    let mut velocity = model.params().zeros_like();
    let mut report = TrainReport::default();
    let wants = BackwardWants {
        params: true,
        ..BackwardWants::default()
    };

    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let lr_s = S::from_f32(lr);
        let momentum = S::from_f32(schedule.momentum);
        let order = shuffled_indices(data.len(), schedule.seed, epoch);
        let mut loss_sum = 0.0f64;

        for batch in order.chunks(schedule.batch_size) {
            // Per-sample loss/gradient, order-preserving parallel map.
            let snapshot: &AnyModel<S> = model;
            let per_sample = map_indexed(batch.len(), |bi| {
                let sample = &data[batch[bi]];
                let image = sample.image.cast::<S>();
                let trace = snapshot.trace(&image)?;
                let (loss, dlogits) = cross_entropy_grad(trace.logits(), sample.label);
                let bw = snapshot.backward(&trace, &dlogits, &wants)?;
                Ok::<_, CoreError>((loss, bw.params.expect("params requested")))
            });

            let mut grads = model.params().zeros_like();
            for item in per_sample {
                let (loss, g) = item?;
                loss_sum += loss;
                grads.add_assign(&g);
            }
            grads.scale(S::ONE / S::from_usize(batch.len()));
            if let Some(m) = mask {
                m.apply_to(&mut grads);
            }

            // v = momentum·v + g;  w -= lr·v
            velocity.scale(momentum);
            velocity.add_assign(&grads);
            if let Some(m) = mask {
                m.apply_to(&mut velocity);
            }
            for ((_, p), (_, v)) in model.params_mut().iter_mut().zip(velocity.iter()) {
                p.values.axpy(-lr_s, &v.values);
            }
            if let Some(m) = mask {
                m.apply_to(model.params_mut());
            }
            report.optimizer_steps += 1;
        }

        if !model.params().all_finite() {
            return Err(CoreError::Training(alloc::format!(
                "non-finite parameters after epoch {epoch}; lower the learning rate"
            )));
        }
        report.epoch_losses.push(loss_sum / data.len() as f64);
        report.lr_values.push(lr);
    }
    Ok(report)
}

/// Deterministic Fisher–Yates shuffle of `0..n` from a derived stream.
fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng_for(seed, Stream::TrainShuffle, epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Fraction of samples whose argmax logit equals the label.
/// Ties in the argmax go to the lowest class index.
pub fn accuracy<S: Scalar>(model: &AnyModel<S>, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::EmptyInput("evaluation dataset".into()));
    }
    let correct = map_indexed(data.len(), |i| {
        let logits = model.logits(&data[i].image.cast::<S>())?;
        Ok::<_, CoreError>(argmax(&logits) == data[i].label)
    });
    let mut n_correct = 0usize;
    for c in correct {
        if c? {
            n_correct += 1;
        }
    }
    Ok(n_correct as f64 / data.len() as f64)
}
