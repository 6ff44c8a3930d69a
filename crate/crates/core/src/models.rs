//! Seeded builders for the toy architectures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::network::{Activation, AttentionHead, Layer, Network};
use crate::tensor::Tensor;

pub(crate) fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("consistent shape")
}

fn he_dense(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, act: Activation) -> Layer {
    let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
    let w = normal_tensor(rng, &[fan_out, fan_in], (gain / fan_in as f64).sqrt());
    Layer::dense(w, Tensor::zeros(&[fan_out]), act)
}

fn he_conv(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize, stride: usize, padding: usize) -> Layer {
    let w = normal_tensor(rng, &[k, k, c_in, c_out], (2.0 / (k * k * c_in) as f64).sqrt());
    Layer::conv2d(w, Tensor::zeros(&[c_out]), stride, padding, Activation::Relu)
}

/// Relu MLP with a linear output head. The first layer and the head are
/// declared mandatory.
pub fn mlp(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut fan_in = input;
    for &h in hidden {
        layers.push(he_dense(&mut rng, fan_in, h, Activation::Relu));
        fan_in = h;
    }
    layers.push(he_dense(&mut rng, fan_in, classes, Activation::None));
    let last = layers.len() - 1;
    Ok(Network::new(vec![input], layers)?.with_mandatory([0, last]))
}

/// Square `width x width` dense layer initialised to the exact identity,
/// i.e. a layer that carries no information for non-negative inputs.
pub fn identity_dense(width: usize) -> Layer {
    Layer::dense(Tensor::identity(width), Tensor::zeros(&[width]), Activation::Relu)
}

/// Two conv layers and two dense layers on `[size, size, channels]` inputs:
/// conv 3x3/2 -> `c1`, conv 3x3/1 -> `c2`, flatten, dense -> `hidden`, dense
/// -> `classes`. With `size = 16, channels = 1, c1 = c2 = 8, hidden = 96` this
/// has about 50k parameters.
pub fn toy_cnn(
    size: usize,
    channels: usize,
    c1: usize,
    c2: usize,
    hidden: usize,
    classes: usize,
    seed: u64,
) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv1 = he_conv(&mut rng, 3, channels, c1, 2, 1);
    let conv2 = he_conv(&mut rng, 3, c1, c2, 1, 1);
    let spatial = size.div_ceil(2);
    let flat = spatial * spatial * c2;
    let dense1 = he_dense(&mut rng, flat, hidden, Activation::Relu);
    let head = he_dense(&mut rng, hidden, classes, Activation::None);
    Ok(Network::new(
        vec![size, size, channels],
        vec![conv1, conv2, Layer::flatten(), dense1, head],
    )?
    .with_mandatory([0, 4]))
}

pub fn attention_head(rng: &mut ChaCha8Rng, d_model: usize, d_k: usize, d_v: usize) -> AttentionHead {
    let std = (1.0 / d_model as f64).sqrt();
    AttentionHead {
        query: normal_tensor(rng, &[d_model, d_k], std),
        key: normal_tensor(rng, &[d_model, d_k], std),
        value: normal_tensor(rng, &[d_model, d_v], std),
    }
}

/// Residual multi-head attention block over `[tokens, d_model]` inputs,
/// followed by flatten and a linear head.
pub fn attention_classifier(
    tokens: usize,
    d_model: usize,
    heads: usize,
    d_k: usize,
    classes: usize,
    seed: u64,
) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hs = (0..heads).map(|_| attention_head(&mut rng, d_model, d_k, d_k)).collect();
    let out = normal_tensor(&mut rng, &[heads * d_k, d_model], (1.0 / (heads * d_k) as f64).sqrt());
    let head = he_dense(&mut rng, tokens * d_model, classes, Activation::None);
    let last = 2;
    Ok(Network::new(
        vec![tokens, d_model],
        vec![Layer::attention(hs, out).with_residual(), Layer::flatten(), head],
    )?
    .with_mandatory([last]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_cnn_is_about_fifty_thousand_params() {
        let net = toy_cnn(16, 1, 8, 8, 96, 2, 0).unwrap();
        assert_eq!(net.count_params(), 80 + 584 + 512 * 96 + 96 + 96 * 2 + 2);
        assert_eq!(net.output_shape(), &[2]);
    }

    #[test]
    fn builders_are_seeded() {
        assert_eq!(mlp(2, &[8, 8], 2, 4).unwrap(), mlp(2, &[8, 8], 2, 4).unwrap());
        assert_ne!(mlp(2, &[8, 8], 2, 4).unwrap(), mlp(2, &[8, 8], 2, 5).unwrap());
        let att = attention_classifier(4, 6, 3, 2, 2, 1).unwrap();
        assert_eq!(att.output_shape(), &[2]);
    }
}
