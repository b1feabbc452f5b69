//! Mini-batch Adam training.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::model::{scalar_and_seed, toy_vgg, ModelGraph, Target};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 5e-3,
            batch_size: 32,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::invalid("learning_rate must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::invalid("invalid Adam hyperparameters"));
        }
        Ok(())
    }
}

/// The per-sample loss minimized by [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    CrossEntropy,
    /// ‖softmax(y) − one_hot‖².
    SoftmaxSquaredError,
    /// ‖output − input‖²; labels are ignored.
    Reconstruction,
}

/// A toy network trained on generated data.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub model: ModelGraph,
    pub train: Dataset,
    pub test: Dataset,
    pub loss_history: Vec<f64>,
    pub test_accuracy: f64,
}

/// Generates the datasets of `spec`, builds the toy CNN with weights drawn
/// from `cfg.seed` and trains it.
pub fn train_toy(spec: &DatasetSpec, cfg: &TrainConfig) -> Result<ToyRun> {
    cfg.validate()?;
    let (train_data, test) = spec.generate()?;
    let mut model = toy_vgg(spec.num_classes, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let loss_history = train(&mut model, &train_data, cfg, &BTreeSet::new())?;
    let test_accuracy = accuracy(&model, &test)?;
    Ok(ToyRun {
        model,
        train: train_data,
        test,
        loss_history,
        test_accuracy,
    })
}

/// Trains a classifier with softmax cross-entropy. Parameters of layers in
/// `frozen` are never written. Returns the mean training loss of every epoch.
pub fn train(model: &mut ModelGraph, data: &Dataset, cfg: &TrainConfig, frozen: &BTreeSet<usize>) -> Result<Vec<f64>> {
    let (inputs, labels): (Vec<Tensor>, Vec<usize>) = data.items.iter().cloned().unzip();
    fit(model, &inputs, &labels, cfg, frozen, Objective::CrossEntropy)
}

pub fn fit(
    model: &mut ModelGraph,
    inputs: &[Tensor],
    labels: &[usize],
    cfg: &TrainConfig,
    frozen: &BTreeSet<usize>,
    objective: Objective,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if objective != Objective::Reconstruction && labels.len() != inputs.len() {
        return Err(Error::invalid("labels and inputs differ in length"));
    }
    if let Some(&l) = frozen.iter().find(|&&l| l >= model.layers().len()) {
        return Err(Error::invalid(format!("frozen layer {l} does not exist")));
    }

    let trainable: Vec<std::ops::Range<usize>> = (0..model.layers().len())
        .filter(|l| !frozen.contains(l))
        .map(|l| model.param_range(l))
        .filter(|r| !r.is_empty())
        .collect();

    let n_params = model.param_count();
    let mut adam = Adam::new(n_params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut per_sample = vec![0.0; inputs.len()];
    let mut grads = vec![0.0; n_params];
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            for &idx in batch {
                let trace = model.forward(&inputs[idx])?;
                let target = match objective {
                    Objective::CrossEntropy => Target::CrossEntropy(labels[idx]),
                    Objective::SoftmaxSquaredError => Target::SoftmaxSquaredError(labels[idx]),
                    Objective::Reconstruction => Target::Reconstruction(&inputs[idx]),
                };
                let (loss, seed) = scalar_and_seed(trace.output(), target)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                per_sample[idx] = loss;
                if !trainable.is_empty() {
                    model.backward_into(&trace, seed, &mut grads);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            adam.step(model.params_mut(), &grads, scale, &trainable);
        }
        // Summed in index order so the value is independent of the shuffle.
        let mean = per_sample.iter().sum::<f64>() / inputs.len() as f64;
        if !mean.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(mean);
    }
    Ok(history)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], scale: f64, ranges: &[std::ops::Range<usize>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for r in ranges {
            for i in r.clone() {
                let g = grads[i] * scale;
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                params[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Fraction of items whose argmax prediction equals the label.
pub fn accuracy(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, label) in &data.items {
        if model.predict(x)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
