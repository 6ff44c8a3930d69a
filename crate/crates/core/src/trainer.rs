//! Mini-batch SGD on softmax cross-entropy, evaluation, scoped fine-tuning and
//! finite-difference gradient checking.
//!
//! Per-sample gradients are computed in parallel and summed in sample order,
//! so results are bit-identical regardless of thread count.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{range_err, shape_err, Error, Result};
use crate::network::{Activation, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier applied to `learning_rate` by [`fine_tune`].
    pub lr_reduction_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            lr_reduction_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(range_err(format!("{prefix}learning_rate"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(range_err(format!("{prefix}batch_size"), "must be positive"));
        }
        if !(self.lr_reduction_factor > 0.0 && self.lr_reduction_factor <= 1.0) {
            return Err(range_err(format!("{prefix}lr_reduction_factor"), "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
}

impl Metrics {
    /// Classification error `1 - accuracy`.
    pub fn error(&self) -> f64 {
        1.0 - self.accuracy
    }
}

/// Which layers a fine-tuning call may update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Global,
    /// `layer` plus the `radius` nearest parametrised layers on each side;
    /// parameter-free layers (identity, flatten) are skipped when counting.
    Neighborhood { layer: usize, radius: usize },
    Layers(BTreeSet<usize>),
}

impl Scope {
    fn trainable(&self, net: &Network) -> Result<Vec<bool>> {
        let n = net.len();
        match self {
            Scope::Global => Ok(vec![true; n]),
            Scope::Neighborhood { layer, radius } => {
                if *layer >= n {
                    return Err(Error::LayerIndex { index: *layer, len: n });
                }
                let has_params = |i: usize| !net.layers()[i].params().is_empty();
                let mut out = vec![false; n];
                out[*layer] = true;
                for i in (0..*layer).rev().filter(|&i| has_params(i)).take(*radius) {
                    out[i] = true;
                }
                for i in (layer + 1..n).filter(|&i| has_params(i)).take(*radius) {
                    out[i] = true;
                }
                Ok(out)
            }
            Scope::Layers(set) => {
                if let Some(&bad) = set.iter().find(|&&i| i >= n) {
                    return Err(Error::LayerIndex { index: bad, len: n });
                }
                Ok((0..n).map(|i| set.contains(&i)).collect())
            }
        }
    }
}

/// Softmax cross-entropy of one logit vector; returns the loss and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if logits.rank() != 1 || label >= logits.len() {
        return Err(shape_err(
            "cross_entropy",
            format!("logits {:?} with label {label}", logits.shape()),
        ));
    }
    let max = logits.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits.data()[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::vector(grad)))
}

fn sample_gradient(net: &Network, x: &Tensor, label: usize) -> Result<(f64, Vec<Vec<Tensor>>)> {
    let (logits, trace) = net.forward_with_trace(x)?;
    let (loss, grad) = cross_entropy(&logits, label)?;
    Ok((loss, net.backward(&trace, &grad)?))
}

/// Mean loss and summed gradients over `indices`, reduced in index order.
fn batch_gradient(net: &Network, data: &Dataset, indices: &[usize]) -> Result<(f64, Vec<Vec<Tensor>>)> {
    let per_sample: Vec<(f64, Vec<Vec<Tensor>>)> = indices
        .par_iter()
        .map(|&i| sample_gradient(net, &data.inputs()[i], data.labels()[i]))
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch");
    for (l, grads) in iter {
        loss += l;
        for (acc_layer, layer) in total.iter_mut().zip(&grads) {
            for (acc, g) in acc_layer.iter_mut().zip(layer) {
                acc.add_assign_scaled(g, 1.0);
            }
        }
    }
    let n = indices.len() as f64;
    for layer in total.iter_mut() {
        for g in layer.iter_mut() {
            *g = g.scale(1.0 / n);
        }
    }
    Ok((loss / n, total))
}

fn sgd(net: &Network, data: &Dataset, lr: f64, cfg: &TrainConfig, trainable: &[bool]) -> Result<(Network, Vec<f64>)> {
    let mut net = net.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 || !trainable.iter().any(|&t| t) {
        return Ok((net, losses));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(&net, data, batch)?;
            if !loss.is_finite() {
                return Err(Error::DivergentLoss { epoch });
            }
            for (i, layer_grads) in grads.iter().enumerate() {
                if !trainable[i] {
                    continue;
                }
                for (param, g) in net.layer_mut(i).params_mut().into_iter().zip(layer_grads) {
                    param.add_assign_scaled(g, -lr);
                }
            }
        }
        let epoch_loss = evaluate(&net, data)?.loss;
        if !epoch_loss.is_finite() {
            return Err(Error::DivergentLoss { epoch });
        }
        losses.push(epoch_loss);
    }
    Ok((net, losses))
}

pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    train_logged(net, data, cfg).map(|(n, _)| n)
}

/// Like [`train`], also returning the full-dataset loss after every epoch.
pub fn train_logged(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<f64>)> {
    cfg.validate("")?;
    sgd(net, data, cfg.learning_rate, cfg, &vec![true; net.len()])
}

/// Trains only the layers in `scope` at `learning_rate * lr_reduction_factor`.
pub fn fine_tune(net: &Network, data: &Dataset, cfg: &TrainConfig, scope: &Scope) -> Result<Network> {
    fine_tune_logged(net, data, cfg, scope).map(|(n, _)| n)
}

pub fn fine_tune_logged(net: &Network, data: &Dataset, cfg: &TrainConfig, scope: &Scope) -> Result<(Network, Vec<f64>)> {
    cfg.validate("")?;
    let trainable = scope.trainable(net)?;
    sgd(net, data, cfg.learning_rate * cfg.lr_reduction_factor, cfg, &trainable)
}

/// Argmax accuracy and mean cross-entropy.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<Metrics> {
    let per_sample: Vec<(f64, bool)> = data
        .inputs()
        .par_iter()
        .zip(data.labels().par_iter())
        .map(|(x, &label)| {
            let logits = net.forward(x)?;
            let (loss, _) = cross_entropy(&logits, label)?;
            Ok((loss, logits.argmax() == label))
        })
        .collect::<Result<_>>()?;
    let correct = per_sample.iter().filter(|(_, c)| *c).count();
    let loss: f64 = per_sample.iter().map(|(l, _)| l).sum();
    Ok(Metrics {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters whose perturbation crossed a relu kink.
    pub skipped: usize,
}

/// Floor on the denominator of the relative error, so that gradients that
/// are numerically zero compare on an absolute scale.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

const FD_STEP: f64 = 1e-5;

fn relu_pattern(net: &Network, data: &Dataset) -> Result<Vec<bool>> {
    let mut pattern = Vec::new();
    for x in data.inputs() {
        let (_, trace) = net.forward_with_trace(x)?;
        for (layer, z) in net.layers().iter().zip(&trace.pre_activations) {
            if layer.activation == Activation::Relu {
                pattern.extend(z.data().iter().map(|&v| v > 0.0));
            }
        }
    }
    Ok(pattern)
}

fn mean_loss(net: &Network, data: &Dataset) -> Result<f64> {
    Ok(evaluate(net, data)?.loss)
}

/// Compares the back-propagated mean-loss gradient of every parameter with a
/// central finite difference (step 1e-5). Relative error is
/// `|a - n| / max(|a|, |n|, GRADIENT_CHECK_FLOOR)`. Parameters whose
/// perturbation flips any relu activation pattern are skipped.
pub fn gradient_check(net: &Network, data: &Dataset) -> Result<GradientCheck> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (_, analytic) = batch_gradient(net, data, &all)?;
    let base_pattern = relu_pattern(net, data)?;
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let mut probe = net.clone();
    for (i, layer_grads) in analytic.iter().enumerate() {
        for (p, grad) in layer_grads.iter().enumerate() {
            for idx in 0..grad.len() {
                if net.param_is_masked(i, p, idx) {
                    continue;
                }
                let orig = probe.layer_mut(i).params_mut()[p].data()[idx];
                probe.layer_mut(i).params_mut()[p].data_mut()[idx] = orig + FD_STEP;
                let plus = mean_loss(&probe, data)?;
                let plus_pattern = relu_pattern(&probe, data)?;
                probe.layer_mut(i).params_mut()[p].data_mut()[idx] = orig - FD_STEP;
                let minus = mean_loss(&probe, data)?;
                let minus_pattern = relu_pattern(&probe, data)?;
                probe.layer_mut(i).params_mut()[p].data_mut()[idx] = orig;
                if plus_pattern != base_pattern || minus_pattern != base_pattern {
                    skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let a = grad.data()[idx];
                let denom = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
                worst = worst.max((a - numeric).abs() / denom);
                checked += 1;
            }
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        checked,
        skipped,
    })
}
