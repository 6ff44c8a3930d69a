//! Labelled datasets and the synthetic toy tasks used by the CLI and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "sample {i}: label {l} outside class range 0..{num_classes}"
            )));
        }
        let shape = inputs[0].shape().to_vec();
        if let Some(i) = inputs.iter().position(|t| t.shape() != shape.as_slice()) {
            return Err(Error::Dataset(format!(
                "sample {i} has shape {:?}, expected {shape:?}",
                inputs[i].shape()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.inputs[0].shape()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Same samples in the given order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            inputs: order.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Splits off the first `n_train` samples as the train split; the rest
    /// become the validation split.
    pub fn split_at(self, n_train: usize) -> Result<(Dataset, Dataset)> {
        let mut inputs = self.inputs;
        let mut labels = self.labels;
        let val_inputs = inputs.split_off(n_train.min(inputs.len()));
        let val_labels = labels.split_off(n_train.min(labels.len()));
        Ok((
            Dataset::new(inputs, labels, self.num_classes, Split::Train)?,
            Dataset::new(val_inputs, val_labels, self.num_classes, Split::Val)?,
        ))
    }
}

fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

/// Two Gaussian blobs in the plane, separated along the (1.5, 1.0) axis.
pub fn blobs(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.75).expect("valid std");
    let labels = balanced_labels(n, 2, &mut rng);
    let inputs = labels
        .iter()
        .map(|&l| {
            let sign = if l == 0 { -1.0 } else { 1.0 };
            Tensor::vector(vec![
                sign * 1.5 + noise.sample(&mut rng),
                sign * 1.0 + noise.sample(&mut rng),
            ])
        })
        .collect();
    Dataset::new(inputs, labels, 2, Split::Train)
}

/// `size x size` single-channel images: class 0 holds a horizontal bar, class
/// 1 a vertical bar, at a random offset, plus Gaussian pixel noise.
pub fn bar_images(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    let labels = balanced_labels(n, 2, &mut rng);
    let inputs = labels
        .iter()
        .map(|&l| {
            let pos = rng.random_range(2..size - 3);
            let mut px = vec![0.0; size * size];
            for i in 0..size {
                for j in 0..size {
                    let on = if l == 0 { i == pos || i == pos + 1 } else { j == pos || j == pos + 1 };
                    px[i * size + j] = if on { 1.0 } else { 0.0 } + noise.sample(&mut rng);
                }
            }
            Tensor::new(vec![size, size, 1], px).expect("consistent shape")
        })
        .collect();
    Dataset::new(inputs, labels, 2, Split::Train)
}
