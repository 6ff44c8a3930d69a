//! Flow-divergence measures: the discrete trajectory divergence, the
//! validation-averaged layer flow score, variance normalisation and the
//! per-layer-type formulas for dense, convolutional and attention layers.
//!
//! Indexing follows the trace: network layer `i` maps `T_i` to `T_{i+1}`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{range_err, shape_err, Error, Result};
use crate::network::{Activation, ActivationTrace, Layer, LayerKind, Network, PruningMask};
use crate::tensor::{frobenius_norm, l2_norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub epsilon: f64,
    pub normalization: Normalization,
    /// Weight of the attention output-projection term.
    pub lambda: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            normalization: Normalization::None,
            lambda: 1.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(range_err(format!("{prefix}epsilon"), "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(range_err(format!("{prefix}lambda"), "must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-layer divergence scores of a network averaged over a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProfile {
    pub layer_kinds: Vec<String>,
    /// Type-specific layer score (dense, conv, attention formulas; 0 for
    /// parameter-free layers).
    pub layer_scores: Vec<f64>,
    /// Mean relative activation change across each layer.
    pub flow_scores: Vec<f64>,
    /// Discrete trajectory divergence attributed to each layer. The last
    /// layer has no downstream weight and carries its flow score instead.
    pub trajectory_scores: Vec<f64>,
    /// Per-unit slices of the type formula (neurons, filters, heads).
    pub unit_scores: Vec<Option<Vec<f64>>>,
    /// Scores used to rank units for pruning: the unit slice scaled by the
    /// norm of the unit's outgoing weights, so units nothing reads score 0.
    /// Attention heads use their slice score unchanged.
    pub prune_scores: Vec<Option<Vec<f64>>>,
    /// `lambda * ||W_O||_F` for attention layers, 0 elsewhere.
    pub output_terms: Vec<f64>,
    pub sample_count: usize,
    /// Forward passes performed while building the profile.
    pub forward_passes: usize,
    /// Fingerprint of the network the profile was computed on.
    pub network_fingerprint: String,
    pub normalized: bool,
}

impl DivergenceProfile {
    pub fn len(&self) -> usize {
        self.layer_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer_scores.is_empty()
    }

    /// Sum of the type scores over all layers.
    pub fn total(&self) -> f64 {
        self.layer_scores.iter().sum()
    }

    pub fn is_fresh_for(&self, net: &Network) -> bool {
        self.network_fingerprint == net.fingerprint()
    }
}

/// `||b - a|| / (||a|| + eps)`. Tensors of different size are compared
/// after zero-padding the shorter one; layouts are row-major so a flatten
/// has zero change.
pub fn relative_change(a: &Tensor, b: &Tensor, epsilon: f64) -> f64 {
    let (x, y) = (a.data(), b.data());
    let n = x.len().max(y.len());
    let diff: f64 = (0..n)
        .map(|i| {
            let d = y.get(i).copied().unwrap_or(0.0) - x.get(i).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    diff / (l2_norm(a) + epsilon)
}

/// Discrete divergence at trace point `l`:
/// `||T_{l+1} - T_l|| / (||T_l|| + eps) * | ||W_{l+1} T_l|| - ||W_l T_{l-1}|| |`
/// where `W_l` is the linear part of network layer `l - 1`. Requires
/// `1 <= l <= L - 1`.
pub fn discrete_divergence(trace: &ActivationTrace, net: &Network, l: usize, cfg: &FlowConfig) -> Result<f64> {
    let layers = net.len();
    if l == 0 || l + 1 > layers || trace.outputs.len() != layers + 1 {
        return Err(Error::LayerIndex { index: l, len: layers });
    }
    let t = &trace.outputs;
    let rel = relative_change(&t[l], &t[l + 1], cfg.epsilon);
    let next = net.layers()[l].linear_map(&t[l], net.mask(l))?;
    let prev = net.layers()[l - 1].linear_map(&t[l - 1], net.mask(l - 1))?;
    Ok(rel * (l2_norm(&next) - l2_norm(&prev)).abs())
}

/// Mean over `val` of the relative activation change across layer `l`.
pub fn layer_flow_score(net: &Network, val: &Dataset, l: usize, cfg: &FlowConfig) -> Result<f64> {
    net.layer(l)?;
    let scores: Vec<f64> = val
        .inputs()
        .par_iter()
        .map(|x| {
            let (_, trace) = net.forward_with_trace(x)?;
            Ok(relative_change(&trace.outputs[l], &trace.outputs[l + 1], cfg.epsilon))
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Dense layer score `||J||_F * ||h||_2 * ||W||_F` with `J` the activation
/// Jacobian (relu indicator), plus per-neuron scores
/// `J_ii * |h_i| * ||W_i,:||`. `pre` is the layer's pre-activation.
pub fn fc_divergence(layer: &Layer, pre: &Tensor, mask: Option<&PruningMask>) -> Result<(f64, Vec<f64>)> {
    let LayerKind::Dense { weight, .. } = &layer.kind else {
        return Err(shape_err("fc_divergence", format!("expected a dense layer, got {}", layer.kind_name())));
    };
    let units = weight.rows();
    if pre.shape() != [units] {
        return Err(shape_err("fc_divergence", format!("pre-activation {:?} for {units} units", pre.shape())));
    }
    let keep = |i: usize| mask.is_none_or(|m| m.keeps(i));
    let jac: Vec<f64> = pre
        .data()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let active = match layer.activation {
                Activation::Relu => z > 0.0,
                Activation::None => true,
            };
            if active && keep(i) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let h: Vec<f64> = pre.data().iter().zip(&jac).map(|(z, j)| z * j).collect();
    let jac_norm = jac.iter().sum::<f64>().sqrt();
    let h_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let score = jac_norm * h_norm * frobenius_norm(weight);
    let cols = weight.cols();
    let per_unit = (0..units)
        .map(|i| {
            let row = &weight.data()[i * cols..(i + 1) * cols];
            jac[i] * h[i].abs() * row.iter().map(|w| w * w).sum::<f64>().sqrt()
        })
        .collect();
    Ok((score, per_unit))
}

/// Conv layer score `||A||_F * ||W||_F / (H W C)` on the post-activation
/// `activation: [H, W, C]`, plus per-filter scores
/// `||A[:,:,c]||_F * ||W[:,:,:,c]||_F / (H W)`.
pub fn conv_divergence(layer: &Layer, activation: &Tensor) -> Result<(f64, Vec<f64>)> {
    let LayerKind::Conv2d { kernel, .. } = &layer.kind else {
        return Err(shape_err("conv_divergence", format!("expected a conv layer, got {}", layer.kind_name())));
    };
    let c_out = kernel.shape()[3];
    if activation.rank() != 3 || activation.shape()[2] != c_out {
        return Err(shape_err(
            "conv_divergence",
            format!("activation {:?} for {c_out} filters", activation.shape()),
        ));
    }
    let spatial = (activation.shape()[0] * activation.shape()[1]) as f64;
    let score = frobenius_norm(activation) * frobenius_norm(kernel) / (spatial * c_out as f64);
    let per_filter = (0..c_out)
        .map(|c| activation.channel_norm(c) * kernel.channel_norm(c) / spatial)
        .collect();
    Ok((score, per_filter))
}

/// Attention layer score `sum_h delta_h + lambda * ||W_O||_F` with
/// `delta_h = ||A^h||_F / n * (||W_Q^h||_F + ||W_K^h||_F + ||W_V^h||_F)` on
/// `input: [n, d_model]`. Masked heads score 0. Returns the layer score and
/// the per-head scores.
pub fn attention_divergence(
    layer: &Layer,
    input: &Tensor,
    mask: Option<&PruningMask>,
    cfg: &FlowConfig,
) -> Result<(f64, Vec<f64>)> {
    let LayerKind::MultiHeadAttention { heads, output } = &layer.kind else {
        return Err(shape_err(
            "attention_divergence",
            format!("expected an attention layer, got {}", layer.kind_name()),
        ));
    };
    let n = input.rows() as f64;
    let per_head: Vec<f64> = layer
        .head_outputs(input)?
        .iter()
        .zip(heads)
        .enumerate()
        .map(|(h, (a, head))| {
            if mask.is_some_and(|m| !m.keeps(h)) {
                return 0.0;
            }
            let weights = frobenius_norm(&head.query) + frobenius_norm(&head.key) + frobenius_norm(&head.value);
            frobenius_norm(a) / n * weights
        })
        .collect();
    let score = per_head.iter().sum::<f64>() + cfg.lambda * frobenius_norm(output);
    Ok((score, per_head))
}

/// Output of the layer's own branch, without the residual input.
fn branch_output(layer: &Layer, input: &Tensor, output: &Tensor) -> Result<Tensor> {
    if layer.residual {
        output.sub(input)
    } else {
        Ok(output.clone())
    }
}

/// Norm of the weights that read each unit of layer `l`, in the next
/// parametrised layer (looking through identities and flattens). `None`
/// when nothing downstream weighs the units individually.
fn outgoing_norms(net: &Network, l: usize) -> Option<Vec<f64>> {
    let units = net.layers()[l].unit_count();
    if units == 0 || matches!(net.layers()[l].kind, LayerKind::MultiHeadAttention { .. }) {
        return None;
    }
    let mut sq = vec![0.0; units];
    for j in l + 1..net.len() {
        let consumer = &net.layers()[j];
        if consumer.residual {
            return None;
        }
        let keep = |r: usize| net.mask(j).is_none_or(|m| m.keeps(r));
        match &consumer.kind {
            LayerKind::Identity | LayerKind::Flatten => continue,
            LayerKind::Dense { weight, .. } | LayerKind::Projection { weight, .. } => {
                let cols = weight.cols();
                for r in (0..weight.rows()).filter(|&r| keep(r)) {
                    for (f, w) in weight.data()[r * cols..(r + 1) * cols].iter().enumerate() {
                        sq[f % units] += w * w;
                    }
                }
            }
            LayerKind::Conv2d { kernel, .. } => {
                let (ci, co) = (kernel.shape()[2], kernel.shape()[3]);
                for (idx, w) in kernel.data().iter().enumerate() {
                    if keep(idx % co) {
                        sq[(idx / co) % ci % units] += w * w;
                    }
                }
            }
            LayerKind::MultiHeadAttention { heads, .. } => {
                for (_, head) in heads.iter().enumerate().filter(|(h, _)| keep(*h)) {
                    for m in [&head.query, &head.key, &head.value] {
                        let cols = m.cols();
                        for (idx, w) in m.data().iter().enumerate() {
                            sq[(idx / cols) % units] += w * w;
                        }
                    }
                }
            }
        }
        return Some(sq.into_iter().map(f64::sqrt).collect());
    }
    None
}

struct SampleScores {
    layer: Vec<f64>,
    units: Vec<Option<Vec<f64>>>,
    flow: Vec<f64>,
    trajectory: Vec<f64>,
}

fn sample_scores(net: &Network, trace: &ActivationTrace, cfg: &FlowConfig) -> Result<SampleScores> {
    let n = net.len();
    let t = &trace.outputs;
    let mut layer_scores = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(n);
    for (i, layer) in net.layers().iter().enumerate() {
        let mask = net.mask(i);
        let (score, per_unit) = match &layer.kind {
            LayerKind::Dense { .. } => {
                let (s, u) = fc_divergence(layer, &trace.pre_activations[i], mask)?;
                (s, Some(u))
            }
            LayerKind::Conv2d { .. } => {
                let a = branch_output(layer, &t[i], &t[i + 1])?;
                let (s, u) = conv_divergence(layer, &a)?;
                (s, Some(u))
            }
            LayerKind::MultiHeadAttention { .. } => {
                let (s, u) = attention_divergence(layer, &t[i], mask, cfg)?;
                (s, Some(u))
            }
            LayerKind::Projection { weight, .. } => {
                let h = branch_output(layer, &t[i], &t[i + 1])?;
                ((h.len() as f64).sqrt() * l2_norm(&h) * frobenius_norm(weight), None)
            }
            LayerKind::Identity | LayerKind::Flatten => (0.0, None),
        };
        layer_scores.push(score);
        units.push(per_unit);
    }
    let flow: Vec<f64> = (0..n).map(|i| relative_change(&t[i], &t[i + 1], cfg.epsilon)).collect();
    let mut trajectory = Vec::with_capacity(n);
    for (i, &f) in flow.iter().enumerate() {
        trajectory.push(if i + 1 < n {
            discrete_divergence(trace, net, i + 1, cfg)?
        } else {
            f
        });
    }
    Ok(SampleScores {
        layer: layer_scores,
        units,
        flow,
        trajectory,
    })
}

/// Element-wise variance of each layer's output across samples, averaged
/// over elements. Entry `i` belongs to network layer `i`.
pub fn activation_variances(traces: &[ActivationTrace]) -> Result<Vec<f64>> {
    if traces.len() < 2 {
        return Err(Error::VarianceUndefined(traces.len()));
    }
    let layers = traces[0].outputs.len() - 1;
    let count = traces.len() as f64;
    Ok((1..=layers)
        .map(|l| {
            let len = traces[0].outputs[l].len();
            let mut total = 0.0;
            for e in 0..len {
                let mean = traces.iter().map(|t| t.outputs[l].data()[e]).sum::<f64>() / count;
                total += traces
                    .iter()
                    .map(|t| (t.outputs[l].data()[e] - mean).powi(2))
                    .sum::<f64>()
                    / count;
            }
            total / len as f64
        })
        .collect())
}

/// Scales every score of layer `l` by `(1 + Var(T_l) / max_l Var(T_l))^-1`.
pub fn variance_normalized(profile: &DivergenceProfile, traces: &[ActivationTrace]) -> Result<DivergenceProfile> {
    let vars = activation_variances(traces)?;
    if vars.len() != profile.len() {
        return Err(shape_err(
            "variance_normalized",
            format!("{} layer variances for a {}-layer profile", vars.len(), profile.len()),
        ));
    }
    Ok(apply_variance_factors(profile, &variance_factors(&vars)))
}

fn variance_factors(vars: &[f64]) -> Vec<f64> {
    let max = vars.iter().fold(0.0f64, |a, &b| a.max(b));
    vars.iter()
        .map(|&v| if max > 0.0 { 1.0 / (1.0 + v / max) } else { 1.0 })
        .collect()
}

fn apply_variance_factors(profile: &DivergenceProfile, factors: &[f64]) -> DivergenceProfile {
    let mut out = profile.clone();
    for (l, &f) in factors.iter().enumerate() {
        out.layer_scores[l] *= f;
        out.flow_scores[l] *= f;
        out.trajectory_scores[l] *= f;
        out.output_terms[l] *= f;
        for scores in [&mut out.unit_scores[l], &mut out.prune_scores[l]].into_iter().flatten() {
            scores.iter_mut().for_each(|s| *s *= f);
        }
    }
    out.normalized = true;
    out
}

/// Builds the full profile of `net` over `val` with one forward pass per
/// sample. Scores are averaged over samples in dataset order.
pub fn compute_profile(net: &Network, val: &Dataset, cfg: &FlowConfig) -> Result<DivergenceProfile> {
    cfg.validate("")?;
    let passes = AtomicUsize::new(0);
    let keep_traces = cfg.normalization == Normalization::Variance;
    let per_sample: Vec<(SampleScores, Option<ActivationTrace>)> = val
        .inputs()
        .par_iter()
        .map(|x| {
            let (_, trace) = net.forward_with_trace(x)?;
            passes.fetch_add(1, Ordering::Relaxed);
            let scores = sample_scores(net, &trace, cfg)?;
            Ok((scores, keep_traces.then_some(trace)))
        })
        .collect::<Result<_>>()?;

    let n = net.len();
    let count = per_sample.len() as f64;
    let mut layer_scores = vec![0.0; n];
    let mut flow = vec![0.0; n];
    let mut trajectory = vec![0.0; n];
    let mut units: Vec<Option<Vec<f64>>> = per_sample[0].0.units.iter().map(|u| u.as_ref().map(|v| vec![0.0; v.len()])).collect();
    for (s, _) in &per_sample {
        for l in 0..n {
            layer_scores[l] += s.layer[l];
            flow[l] += s.flow[l];
            trajectory[l] += s.trajectory[l];
            if let (Some(acc), Some(u)) = (&mut units[l], &s.units[l]) {
                acc.iter_mut().zip(u).for_each(|(a, b)| *a += b);
            }
        }
    }
    let mean = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x /= count);
    mean(&mut layer_scores);
    mean(&mut flow);
    mean(&mut trajectory);
    units.iter_mut().flatten().for_each(mean);

    let prune_scores = units
        .iter()
        .enumerate()
        .map(|(l, u)| {
            u.as_ref().map(|scores| match outgoing_norms(net, l) {
                Some(out) => scores.iter().zip(&out).map(|(s, o)| s * o).collect(),
                None => scores.clone(),
            })
        })
        .collect();
    let output_terms = net
        .layers()
        .iter()
        .map(|layer| match &layer.kind {
            LayerKind::MultiHeadAttention { output, .. } => cfg.lambda * frobenius_norm(output),
            _ => 0.0,
        })
        .collect();

    let profile = DivergenceProfile {
        layer_kinds: net.layers().iter().map(|l| l.kind_name().to_string()).collect(),
        layer_scores,
        flow_scores: flow,
        trajectory_scores: trajectory,
        unit_scores: units,
        prune_scores,
        output_terms,
        sample_count: per_sample.len(),
        forward_passes: passes.load(Ordering::Relaxed),
        network_fingerprint: net.fingerprint(),
        normalized: false,
    };
    if keep_traces {
        let traces: Vec<ActivationTrace> = per_sample.into_iter().filter_map(|(_, t)| t).collect();
        return variance_normalized(&profile, &traces);
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::models;
    use crate::network::AttentionHead;

    const EPS: f64 = 1e-6;

    fn trace_of(ts: Vec<Tensor>) -> ActivationTrace {
        let pre = ts[1..].to_vec();
        ActivationTrace {
            outputs: ts,
            pre_activations: pre,
        }
    }

    fn linear(w: Tensor) -> Layer {
        let n = w.rows();
        Layer::dense(w, Tensor::zeros(&[n]), Activation::None)
    }

    #[test]
    fn discrete_divergence_hand_cases() {
        let i2 = Tensor::identity(2);
        let trace = trace_of(vec![
            Tensor::vector(vec![1.0, 0.0]),
            Tensor::vector(vec![2.0, 0.0]),
            Tensor::vector(vec![2.0, 2.0]),
        ]);
        let cfg = FlowConfig::default();
        let net = Network::new(vec![2], vec![linear(i2.scale(2.0)), linear(i2.clone())]).unwrap();
        assert_eq!(discrete_divergence(&trace, &net, 1, &cfg).unwrap(), 0.0);
        let net = Network::new(vec![2], vec![linear(i2.scale(2.0)), linear(i2.scale(3.0))]).unwrap();
        let expected = 2.0 / (2.0 + EPS) * (6.0 - 2.0);
        assert!((discrete_divergence(&trace, &net, 1, &cfg).unwrap() - expected).abs() < 1e-12);
        assert!(discrete_divergence(&trace, &net, 0, &cfg).is_err());
        assert!(discrete_divergence(&trace, &net, 2, &cfg).is_err());
    }

    #[test]
    fn discrete_divergence_vanishes_for_identity_layer() {
        let net = Network::new(vec![2], vec![linear(Tensor::identity(2).scale(2.0)), Layer::identity()]).unwrap();
        let (_, trace) = net.forward_with_trace(&Tensor::vector(vec![1.0, -3.0])).unwrap();
        assert_eq!(discrete_divergence(&trace, &net, 1, &FlowConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn flow_score_cases() {
        let cfg = FlowConfig::default();
        let data = Dataset::new(
            vec![Tensor::vector(vec![0.6, 0.8]), Tensor::vector(vec![1.0, 0.0])],
            vec![0, 1],
            2,
            Split::Val,
        )
        .unwrap();
        let id = Network::new(vec![2], vec![Layer::identity()]).unwrap();
        assert_eq!(layer_flow_score(&id, &data, 0, &cfg).unwrap(), 0.0);
        let double = Network::new(vec![2], vec![linear(Tensor::identity(2).scale(2.0))]).unwrap();
        let s = layer_flow_score(&double, &data, 0, &cfg).unwrap();
        assert!((s - 1.0 / (1.0 + EPS)).abs() < 1e-12);
    }

    #[test]
    fn flow_score_is_mean_of_samples() {
        let cfg = FlowConfig::default();
        let net = Network::new(vec![2], vec![linear(Tensor::matrix(&[&[1.0, 1.0], &[0.0, 3.0]]))]).unwrap();
        let xs = [Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![-0.5, 0.25])];
        let single: Vec<f64> = xs
            .iter()
            .map(|x| {
                let d = Dataset::new(vec![x.clone()], vec![0], 2, Split::Val).unwrap();
                layer_flow_score(&net, &d, 0, &cfg).unwrap()
            })
            .collect();
        let both = Dataset::new(xs.to_vec(), vec![0, 1], 2, Split::Val).unwrap();
        let mean = layer_flow_score(&net, &both, 0, &cfg).unwrap();
        assert!((mean - (single[0] + single[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fc_divergence_hand_cases() {
        let layer = Layer::dense(Tensor::identity(2), Tensor::zeros(&[2]), Activation::Relu);
        let (s, u) = fc_divergence(&layer, &Tensor::vector(vec![3.0, 4.0]), None).unwrap();
        assert!((s - 10.0).abs() < 1e-12);
        assert_eq!(u, vec![3.0, 4.0]);
        let (s, u) = fc_divergence(&layer, &Tensor::vector(vec![-3.0, -4.0]), None).unwrap();
        assert_eq!((s, u), (0.0, vec![0.0, 0.0]));
        let conv = Layer::conv2d(Tensor::filled(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0, Activation::Relu);
        assert!(fc_divergence(&conv, &Tensor::vector(vec![1.0]), None).is_err());
    }

    #[test]
    fn fc_unit_ranking_is_scale_invariant() {
        let w = Tensor::matrix(&[&[0.5, 1.0], &[2.0, -1.0], &[0.1, 0.3]]);
        let layer = Layer::dense(w, Tensor::zeros(&[3]), Activation::Relu);
        let z = Tensor::vector(vec![1.5, 0.2, 0.9]);
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        };
        let (_, base) = fc_divergence(&layer, &z, None).unwrap();
        let (_, scaled) = fc_divergence(&layer, &z.scale(7.5), None).unwrap();
        assert_eq!(rank(&base), rank(&scaled));
    }

    #[test]
    fn conv_divergence_hand_cases() {
        let layer = Layer::conv2d(Tensor::filled(&[1, 1, 1, 1], 2.0), Tensor::zeros(&[1]), 1, 0, Activation::Relu);
        let a = Tensor::filled(&[2, 2, 1], 1.0);
        let (s, u) = conv_divergence(&layer, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((u[0] - 1.0).abs() < 1e-12);
        let doubled = Layer::conv2d(Tensor::filled(&[1, 1, 1, 1], 4.0), Tensor::zeros(&[1]), 1, 0, Activation::Relu);
        let (s2, _) = conv_divergence(&doubled, &a.scale(2.0)).unwrap();
        assert!((s2 - 4.0 * s).abs() < 1e-12);
        let zero = Layer::conv2d(Tensor::zeros(&[1, 1, 1, 1]), Tensor::zeros(&[1]), 1, 0, Activation::Relu);
        assert_eq!(conv_divergence(&zero, &a).unwrap().0, 0.0);
    }

    fn scalar_head(v: f64) -> AttentionHead {
        AttentionHead {
            query: Tensor::filled(&[1, 1], v),
            key: Tensor::filled(&[1, 1], v),
            value: Tensor::filled(&[1, 1], v),
        }
    }

    #[test]
    fn attention_divergence_hand_cases() {
        let cfg = FlowConfig { lambda: 0.0, ..Default::default() };
        let x = Tensor::matrix(&[&[2.0]]);
        let layer = Layer::attention(vec![scalar_head(1.0)], Tensor::filled(&[1, 1], 1.0));
        let (s, u) = attention_divergence(&layer, &x, None, &cfg).unwrap();
        assert!((s - 6.0).abs() < 1e-12);
        assert_eq!(u.len(), 1);
        let two = Layer::attention(vec![scalar_head(1.0), scalar_head(1.0)], Tensor::filled(&[2, 1], 1.0));
        assert!((attention_divergence(&two, &x, None, &cfg).unwrap().0 - 12.0).abs() < 1e-12);
        let zero = Layer::attention(vec![scalar_head(0.0)], Tensor::zeros(&[1, 1]));
        assert_eq!(attention_divergence(&zero, &x, None, &FlowConfig::default()).unwrap().0, 0.0);
    }

    #[test]
    fn identity_network_profile_is_zero() {
        let net = Network::new(vec![3], vec![Layer::identity(), Layer::identity()]).unwrap();
        let data = Dataset::new(vec![Tensor::vector(vec![1.0, 2.0, 3.0]); 3], vec![0; 3], 1, Split::Val).unwrap();
        let p = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        assert!(p.flow_scores.iter().chain(&p.layer_scores).all(|&s| s == 0.0));
        assert_eq!(p.forward_passes, 3);
    }

    #[test]
    fn profile_of_two_layer_dense_net_is_hand_average() {
        let net = Network::new(
            vec![2],
            vec![
                Layer::dense(Tensor::matrix(&[&[1.0, -1.0], &[0.5, 2.0]]), Tensor::zeros(&[2]), Activation::Relu),
                Layer::dense(Tensor::matrix(&[&[1.0, 1.0]]), Tensor::zeros(&[1]), Activation::None),
            ],
        )
        .unwrap();
        let xs = vec![Tensor::vector(vec![2.0, 1.0]), Tensor::vector(vec![-1.0, 1.0])];
        // sample 1: z1 = [1, 3], J = I2, h = [1, 3]; z2 = 4
        // sample 2: z1 = [-2, 1.5], J = diag(0, 1), h = [0, 1.5]; z2 = 1.5
        let w1 = (1.0f64 + 1.0 + 0.25 + 4.0).sqrt();
        let w2 = 2f64.sqrt();
        let s1 = [2f64.sqrt() * 10f64.sqrt() * w1, 1.0 * 4.0 * w2];
        let s2 = [1.0 * 1.5 * w1, 1.0 * 1.5 * w2];
        let data = Dataset::new(xs, vec![0, 0], 1, Split::Val).unwrap();
        let p = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        for l in 0..2 {
            assert!((p.layer_scores[l] - (s1[l] + s2[l]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_profile_matches_trace() {
        let net = models::mlp(3, &[4, 4], 2, 5).unwrap();
        let x = Tensor::vector(vec![0.3, -1.2, 0.8]);
        let data = Dataset::new(vec![x.clone()], vec![0], 2, Split::Val).unwrap();
        let p = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        let (_, trace) = net.forward_with_trace(&x).unwrap();
        let s = sample_scores(&net, &trace, &FlowConfig::default()).unwrap();
        assert_eq!(p.layer_scores, s.layer);
        assert_eq!(p.flow_scores, s.flow);
        assert_eq!(p.unit_scores, s.units);
    }

    #[test]
    fn dead_units_get_zero_prune_score() {
        let mut net = models::mlp(2, &[4, 3], 2, 1).unwrap();
        if let LayerKind::Dense { weight, .. } = &mut net.layer_mut(1).kind {
            for r in 0..3 {
                weight.set2(r, 2, 0.0);
            }
        }
        let data = crate::data::blobs(20, 0).unwrap();
        let p = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        assert_eq!(p.prune_scores[0].as_ref().unwrap()[2], 0.0);
        assert!(p.unit_scores[0].as_ref().unwrap()[2] >= 0.0);
    }

    #[test]
    fn variance_factors_cases() {
        assert_eq!(variance_factors(&[3.0, 3.0]), vec![0.5, 0.5]);
        assert_eq!(variance_factors(&[0.0, 2.0])[0], 1.0);
        let f = variance_factors(&[1.0, 2.0]);
        assert!((f[0] - 1.0 / 1.5).abs() < 1e-15);
        assert!((f[1] - 0.5).abs() < 1e-15);
        assert_eq!(variance_factors(&[0.0, 0.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn variance_needs_two_samples() {
        let net = models::mlp(2, &[3], 2, 0).unwrap();
        let x = Tensor::vector(vec![1.0, 1.0]);
        let data = Dataset::new(vec![x], vec![0], 2, Split::Val).unwrap();
        let cfg = FlowConfig {
            normalization: Normalization::Variance,
            ..Default::default()
        };
        assert!(matches!(compute_profile(&net, &data, &cfg), Err(Error::VarianceUndefined(1))));
    }

    #[test]
    fn variance_normalisation_scales_down_at_most_by_half() {
        let net = models::mlp(2, &[6, 6], 2, 3).unwrap();
        let data = crate::data::blobs(30, 1).unwrap();
        let plain = compute_profile(&net, &data, &FlowConfig::default()).unwrap();
        let cfg = FlowConfig {
            normalization: Normalization::Variance,
            ..Default::default()
        };
        let norm = compute_profile(&net, &data, &cfg).unwrap();
        assert!(norm.normalized);
        for (a, b) in plain.layer_scores.iter().zip(&norm.layer_scores) {
            assert!(*b <= *a && *b >= 0.5 * a - 1e-15);
        }
    }
}
