//! Layer graph with per-unit pruning masks.
//!
//! A [`Network`] is an ordered chain of [`Layer`]s. Layer `i` maps trace entry
//! `T_i` to `T_{i+1}`, so a trace of an `L`-layer network has `L + 1` entries
//! with `T_0` equal to the input. Optional residual flags add the layer input
//! to the layer output. Structural units (dense rows, conv filters, attention
//! heads) can be masked; a masked unit's output is forced to exactly zero.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{self, Gradient, ParamId};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// `[d_model, d_k]`
    pub query: Tensor,
    /// `[d_model, d_k]`
    pub key: Tensor,
    /// `[d_model, d_v]`
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    /// `weight: [n_out, n_in]`, `bias: [n_out]`.
    Dense { weight: Tensor, bias: Tensor },
    /// `kernel: [k, k, C_in, C_out]`, `bias: [C_out]`.
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    /// Per-head projections and a shared `output: [H * d_v, d_model]`.
    MultiHeadAttention {
        heads: Vec<AttentionHead>,
        output: Tensor,
    },
    Identity,
    /// Position-wise linear map over the trailing axis, `weight: [out, in]`.
    /// On `[H, W, C]` inputs this is a 1x1 convolution with `stride`.
    Projection {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
    /// Adds the layer input to its output (single-skip residual).
    pub residual: bool,
}

impl Layer {
    pub fn dense(weight: Tensor, bias: Tensor, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { weight, bias },
            activation,
            residual: false,
        }
    }

    pub fn conv2d(kernel: Tensor, bias: Tensor, stride: usize, padding: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            },
            activation,
            residual: false,
        }
    }

    pub fn attention(heads: Vec<AttentionHead>, output: Tensor) -> Self {
        Self {
            kind: LayerKind::MultiHeadAttention { heads, output },
            activation: Activation::None,
            residual: false,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: LayerKind::Identity,
            activation: Activation::None,
            residual: false,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            activation: Activation::None,
            residual: false,
        }
    }

    pub fn projection(weight: Tensor, bias: Tensor, stride: usize) -> Self {
        Self {
            kind: LayerKind::Projection { weight, bias, stride },
            activation: Activation::None,
            residual: false,
        }
    }

    pub fn with_residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MultiHeadAttention { .. } => "attention",
            LayerKind::Identity => "identity",
            LayerKind::Projection { .. } => "projection",
            LayerKind::Flatten => "flatten",
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, LayerKind::Identity)
    }

    /// Number of prunable structural units.
    pub fn unit_count(&self) -> usize {
        match &self.kind {
            LayerKind::Dense { weight, .. } => weight.rows(),
            LayerKind::Conv2d { kernel, .. } => kernel.shape()[3],
            LayerKind::MultiHeadAttention { heads, .. } => heads.len(),
            _ => 0,
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match &self.kind {
            LayerKind::Dense { weight, bias } | LayerKind::Projection { weight, bias, .. } => {
                vec![("weight".into(), weight), ("bias".into(), bias)]
            }
            LayerKind::Conv2d { kernel, bias, .. } => vec![("kernel".into(), kernel), ("bias".into(), bias)],
            LayerKind::MultiHeadAttention { heads, output } => {
                let mut out = Vec::with_capacity(3 * heads.len() + 1);
                for (h, head) in heads.iter().enumerate() {
                    out.push((format!("head{h}.query"), &head.query));
                    out.push((format!("head{h}.key"), &head.key));
                    out.push((format!("head{h}.value"), &head.value));
                }
                out.push(("output".into(), output));
                out
            }
            LayerKind::Identity | LayerKind::Flatten => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.kind {
            LayerKind::Dense { weight, bias } | LayerKind::Projection { weight, bias, .. } => vec![weight, bias],
            LayerKind::Conv2d { kernel, bias, .. } => vec![kernel, bias],
            LayerKind::MultiHeadAttention { heads, output } => {
                let mut out: Vec<&mut Tensor> = Vec::with_capacity(3 * heads.len() + 1);
                for head in heads.iter_mut() {
                    out.push(&mut head.query);
                    out.push(&mut head.key);
                    out.push(&mut head.value);
                }
                out.push(output);
                out
            }
            LayerKind::Identity | LayerKind::Flatten => Vec::new(),
        }
    }

    /// Total parameter count ignoring masks.
    pub fn raw_param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let out = match &self.kind {
            LayerKind::Dense { weight, bias } => {
                if input.len() != 1 || input[0] != weight.cols() {
                    return Err(shape_err("dense", format!("expects [{}], got {input:?}", weight.cols())));
                }
                if bias.len() != weight.rows() {
                    return Err(shape_err("dense", "bias length differs from output rows"));
                }
                vec![weight.rows()]
            }
            LayerKind::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => {
                let ks = kernel.shape();
                if input.len() != 3 || input[2] != ks[2] || ks[0] != ks[1] {
                    return Err(shape_err("conv2d", format!("kernel {ks:?} vs input {input:?}")));
                }
                if bias.len() != ks[3] {
                    return Err(shape_err("conv2d", "bias length differs from filter count"));
                }
                vec![
                    tensor::conv_output_extent(input[0], ks[0], *stride, *padding)?,
                    tensor::conv_output_extent(input[1], ks[0], *stride, *padding)?,
                    ks[3],
                ]
            }
            LayerKind::MultiHeadAttention { heads, output } => {
                let d_model = heads.first().map(|h| h.query.rows()).unwrap_or(0);
                if heads.is_empty() || input.len() != 2 || input[1] != d_model {
                    return Err(shape_err("attention", format!("expects [n, {d_model}], got {input:?}")));
                }
                let d_k = heads[0].query.cols();
                let d_v = heads[0].value.cols();
                for h in heads {
                    if h.query.shape() != [d_model, d_k] || h.key.shape() != [d_model, d_k] || h.value.shape() != [d_model, d_v] {
                        return Err(shape_err("attention", "heads have inconsistent projection shapes"));
                    }
                }
                if output.shape() != [heads.len() * d_v, d_model] {
                    return Err(shape_err("attention", format!("output projection {:?}", output.shape())));
                }
                input.to_vec()
            }
            LayerKind::Identity => input.to_vec(),
            LayerKind::Flatten => vec![input.iter().product()],
            LayerKind::Projection { weight, bias, stride } => {
                let features = *input.last().unwrap_or(&0);
                if input.is_empty() || features != weight.cols() || bias.len() != weight.rows() {
                    return Err(shape_err("projection", format!("weight {:?} vs input {input:?}", weight.shape())));
                }
                let mut out = input.to_vec();
                match input.len() {
                    3 => {
                        out[0] = tensor::conv_output_extent(input[0], 1, *stride, 0)?;
                        out[1] = tensor::conv_output_extent(input[1], 1, *stride, 0)?;
                    }
                    _ if *stride != 1 => return Err(shape_err("projection", "stride needs a spatial input")),
                    _ => {}
                }
                *out.last_mut().unwrap() = weight.rows();
                out
            }
        };
        if self.residual && out != input {
            return Err(shape_err("residual", format!("output {out:?} differs from input {input:?}")));
        }
        Ok(out)
    }

    /// The weight-only linear part of the layer applied to `input`, with masked
    /// units zeroed. Parameter-free layers use the identity map.
    pub fn linear_map(&self, input: &Tensor, mask: Option<&PruningMask>) -> Result<Tensor> {
        let out = match &self.kind {
            LayerKind::Dense { weight, .. } => tensor::matvec(weight, input)?,
            LayerKind::Conv2d {
                kernel, stride, padding, ..
            } => tensor::conv2d(input, kernel, &Tensor::zeros(&[kernel.shape()[3]]), *stride, *padding)?,
            LayerKind::MultiHeadAttention { .. } => return Ok(self.attention_forward(input, mask)?.0),
            LayerKind::Projection { weight, stride, .. } => {
                project(input, weight, &Tensor::zeros(&[weight.rows()]), *stride)?
            }
            LayerKind::Identity | LayerKind::Flatten => return Ok(input.clone()),
        };
        Ok(self.mask_units(out, mask))
    }

    fn mask_units(&self, t: Tensor, mask: Option<&PruningMask>) -> Tensor {
        match self.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => apply_unit_mask(t, mask),
            _ => t,
        }
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, input: &Tensor, mask: Option<&PruningMask>) -> Result<(Tensor, Tensor)> {
        let pre = match &self.kind {
            LayerKind::Dense { weight, bias } => tensor::add_bias(&tensor::matvec(weight, input)?, bias)?,
            LayerKind::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => tensor::conv2d(input, kernel, bias, *stride, *padding)?,
            LayerKind::MultiHeadAttention { .. } => self.attention_forward(input, mask)?.0,
            LayerKind::Projection { weight, bias, stride } => project(input, weight, bias, *stride)?,
            LayerKind::Identity => input.clone(),
            LayerKind::Flatten => input.reshape(&[input.len()])?,
        };
        let activated = match self.activation {
            Activation::Relu => tensor::relu(&pre),
            Activation::None => pre.clone(),
        };
        let mut out = self.mask_units(activated, mask);
        if self.residual {
            out = out.add(input)?;
        }
        Ok((pre, out))
    }

    /// Returns the branch output (before any residual add) and per-head outputs.
    fn attention_forward(&self, x: &Tensor, mask: Option<&PruningMask>) -> Result<(Tensor, Vec<HeadCache>)> {
        let LayerKind::MultiHeadAttention { heads, output } = &self.kind else {
            unreachable!("attention_forward on non-attention layer")
        };
        let n = x.rows();
        let d_v = heads[0].value.cols();
        let mut concat = Tensor::zeros(&[n, heads.len() * d_v]);
        let mut caches = Vec::with_capacity(heads.len());
        for (h, head) in heads.iter().enumerate() {
            let cache = head_forward(head, x)?;
            if mask.is_none_or(|m| m.keeps(h)) {
                for i in 0..n {
                    for j in 0..d_v {
                        concat.set2(i, h * d_v + j, cache.attended.at2(i, j));
                    }
                }
            }
            caches.push(cache);
        }
        Ok((tensor::matmul(&concat, output)?, caches))
    }

    /// Per-head attention outputs `A^h` (unmasked), used by the divergence
    /// measures.
    pub fn head_outputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        match &self.kind {
            LayerKind::MultiHeadAttention { heads, .. } => {
                heads.iter().map(|h| head_forward(h, x).map(|c| c.attended)).collect()
            }
            _ => Err(shape_err("head_outputs", "not an attention layer")),
        }
    }

    /// Back-propagates `grad_out` through the layer. Returns the gradient with
    /// respect to the layer input and one gradient per parameter in
    /// [`Layer::params`] order.
    pub fn backward(
        &self,
        input: &Tensor,
        pre: &Tensor,
        mask: Option<&PruningMask>,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let branch = self.mask_units(grad_out.clone(), mask);
        let grad_pre = match self.activation {
            Activation::Relu => autodiff::relu_vjp(pre, &branch)?,
            Activation::None => branch,
        };
        let (mut grad_in, params) = match &self.kind {
            LayerKind::Dense { weight, bias } => {
                let (g, gb) = autodiff::add_bias_vjp(bias, &grad_pre)?;
                let col = input.reshape(&[input.len(), 1])?;
                let g = g.reshape(&[g.len(), 1])?;
                let (gw, gx) = autodiff::matmul_vjp(weight, &col, &g)?;
                (gx.reshape(input.shape())?, vec![gw, gb])
            }
            LayerKind::Conv2d {
                kernel, stride, padding, ..
            } => {
                let (gi, gk, gb) = autodiff::conv2d_vjp(input, kernel, *stride, *padding, &grad_pre)?;
                (gi, vec![gk, gb])
            }
            LayerKind::MultiHeadAttention { heads, output } => self.attention_backward(heads, output, input, mask, &grad_pre)?,
            LayerKind::Projection { weight, bias, stride } => project_backward(input, weight, bias, *stride, &grad_pre)?,
            LayerKind::Identity => (grad_pre, Vec::new()),
            LayerKind::Flatten => (grad_pre.reshape(input.shape())?, Vec::new()),
        };
        if self.residual {
            grad_in = grad_in.add(grad_out)?;
        }
        Ok((grad_in, params))
    }

    fn attention_backward(
        &self,
        heads: &[AttentionHead],
        output: &Tensor,
        x: &Tensor,
        mask: Option<&PruningMask>,
        grad: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let n = x.rows();
        let d_v = heads[0].value.cols();
        let (_, caches) = self.attention_forward(x, mask)?;
        let mut concat = Tensor::zeros(&[n, heads.len() * d_v]);
        for (h, cache) in caches.iter().enumerate() {
            if mask.is_none_or(|m| m.keeps(h)) {
                for i in 0..n {
                    for j in 0..d_v {
                        concat.set2(i, h * d_v + j, cache.attended.at2(i, j));
                    }
                }
            }
        }
        let (grad_concat, grad_output) = autodiff::matmul_vjp(&concat, output, grad)?;
        let mut grad_x = Tensor::zeros(x.shape());
        let mut params = Vec::with_capacity(3 * heads.len() + 1);
        for (h, (head, cache)) in heads.iter().zip(&caches).enumerate() {
            if mask.is_some_and(|m| !m.keeps(h)) {
                params.push(Tensor::zeros(head.query.shape()));
                params.push(Tensor::zeros(head.key.shape()));
                params.push(Tensor::zeros(head.value.shape()));
                continue;
            }
            let mut grad_att = Tensor::zeros(&[n, d_v]);
            for i in 0..n {
                for j in 0..d_v {
                    grad_att.set2(i, j, grad_concat.at2(i, h * d_v + j));
                }
            }
            let (grad_probs, grad_v) = autodiff::matmul_vjp(&cache.probs, &cache.v, &grad_att)?;
            let grad_scores = autodiff::softmax_rows_vjp(&cache.probs, cache.scale, &grad_probs)?;
            let kt = cache.k.transpose()?;
            let (grad_q, grad_kt) = autodiff::matmul_vjp(&cache.q, &kt, &grad_scores)?;
            let grad_k = grad_kt.transpose()?;
            let mut head_grads = Vec::with_capacity(3);
            for (w, g) in [(&head.query, &grad_q), (&head.key, &grad_k), (&head.value, &grad_v)] {
                let (gx, gw) = autodiff::matmul_vjp(x, w, g)?;
                grad_x.add_assign_scaled(&gx, 1.0);
                head_grads.push(gw);
            }
            params.extend(head_grads);
        }
        params.push(grad_output);
        Ok((grad_x, params))
    }
}

struct HeadCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Tensor,
    attended: Tensor,
    scale: f64,
}

fn head_forward(head: &AttentionHead, x: &Tensor) -> Result<HeadCache> {
    let q = tensor::matmul(x, &head.query)?;
    let k = tensor::matmul(x, &head.key)?;
    let v = tensor::matmul(x, &head.value)?;
    let scale = 1.0 / (head.query.cols() as f64).sqrt();
    let scores = tensor::matmul(&q, &k.transpose()?)?;
    let probs = tensor::softmax_rows(&scores, scale)?;
    let attended = tensor::matmul(&probs, &v)?;
    Ok(HeadCache {
        q,
        k,
        v,
        probs,
        attended,
        scale,
    })
}

/// Gathers strided positions of `input` into a `[positions, features]` matrix.
fn gather_positions(input: &Tensor, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let shape = input.shape();
    let features = *shape.last().unwrap();
    match shape.len() {
        3 => {
            let (h, w) = (shape[0], shape[1]);
            let ho = tensor::conv_output_extent(h, 1, stride, 0)?;
            let wo = tensor::conv_output_extent(w, 1, stride, 0)?;
            let mut data = Vec::with_capacity(ho * wo * features);
            for i in 0..ho {
                for j in 0..wo {
                    let base = (i * stride * w + j * stride) * features;
                    data.extend_from_slice(&input.data()[base..base + features]);
                }
            }
            Ok((Tensor::new(vec![ho * wo, features], data)?, vec![ho, wo]))
        }
        _ => {
            let positions = input.len() / features;
            Ok((input.reshape(&[positions, features])?, shape[..shape.len() - 1].to_vec()))
        }
    }
}

fn project(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (x, lead) = gather_positions(input, stride)?;
    let y = tensor::add_bias(&tensor::matmul(&x, &weight.transpose()?)?, bias)?;
    let mut shape = lead;
    shape.push(weight.rows());
    y.reshape(&shape)
}

fn project_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    grad: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (x, _) = gather_positions(input, stride)?;
    let g = grad.reshape(&[x.rows(), weight.rows()])?;
    let (_, gb) = autodiff::add_bias_vjp(bias, &g)?;
    let wt = weight.transpose()?;
    let (gx, gwt) = autodiff::matmul_vjp(&x, &wt, &g)?;
    let gw = gwt.transpose()?;
    let shape = input.shape();
    let features = *shape.last().unwrap();
    let grad_in = if shape.len() == 3 {
        let w = shape[1];
        let wo = tensor::conv_output_extent(w, 1, stride, 0)?;
        let mut data = vec![0.0; input.len()];
        for (p, row) in gx.data().chunks(features).enumerate() {
            let (i, j) = (p / wo, p % wo);
            let base = (i * stride * w + j * stride) * features;
            data[base..base + features].copy_from_slice(row);
        }
        Tensor::new(shape.to_vec(), data)?
    } else {
        gx.reshape(shape)?
    };
    Ok((grad_in, vec![gw, gb]))
}

/// Zeroes masked units along the trailing axis (dense rows, conv channels).
/// Attention heads are masked inside the attention forward instead.
fn apply_unit_mask(mut t: Tensor, mask: Option<&PruningMask>) -> Tensor {
    let Some(mask) = mask else { return t };
    let units = mask.len();
    if t.shape().last() != Some(&units) {
        return t;
    }
    for chunk in t.data_mut().chunks_mut(units) {
        for (v, &keep) in chunk.iter_mut().zip(mask.flags()) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    t
}

/// Binary keep flags, one per structural unit of a layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningMask(Vec<bool>);

impl PruningMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn all(units: usize) -> Self {
        Self(vec![true; units])
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn keeps(&self, unit: usize) -> bool {
        self.0[unit]
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&k| k).count()
    }

    pub fn and(&self, other: &PruningMask) -> PruningMask {
        PruningMask(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }
}

/// Activations captured during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    /// `T_0 ..= T_L`; `outputs[0]` is the input.
    pub outputs: Vec<Tensor>,
    /// Pre-activation of each layer, `pre_activations[i]` belongs to layer `i`.
    pub pre_activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    masks: Vec<Option<PruningMask>>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    mandatory: BTreeSet<usize>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let masks = layers
            .iter()
            .map(|l| (l.unit_count() > 0).then(|| PruningMask::all(l.unit_count())))
            .collect();
        let mut net = Self {
            layers,
            masks,
            output_shape: Vec::new(),
            input_shape,
            mandatory: BTreeSet::new(),
        };
        net.output_shape = net.validate()?;
        Ok(net)
    }

    /// Declares layers that layer truncation must never touch.
    pub fn with_mandatory(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.mandatory.extend(layers);
        self
    }

    /// Checks shape compatibility of the whole chain; returns the output shape.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| Error::Layer {
                layer: i,
                detail: e.to_string(),
            })?;
            let expected = layer.unit_count();
            match &self.masks[i] {
                Some(m) if m.len() != expected => {
                    return Err(Error::MaskLength {
                        layer: i,
                        expected,
                        got: m.len(),
                    })
                }
                None if expected > 0 => {
                    return Err(Error::Layer {
                        layer: i,
                        detail: "missing mask".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> Result<&Layer> {
        self.layers.get(i).ok_or(Error::LayerIndex {
            index: i,
            len: self.layers.len(),
        })
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> &mut Layer {
        &mut self.layers[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn mask(&self, i: usize) -> Option<&PruningMask> {
        self.masks.get(i).and_then(Option::as_ref)
    }

    pub fn masks(&self) -> &[Option<PruningMask>] {
        &self.masks
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn mandatory(&self) -> &BTreeSet<usize> {
        &self.mandatory
    }

    /// Index of the layer producing the logits; its units are never pruned.
    pub fn head_index(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    /// Input shape seen by each layer.
    pub fn layer_input_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shapes.push(shape.clone());
            shape = layer.output_shape(&shape).expect("network validated at construction");
        }
        shapes
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut t = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            t = layer.forward(&t, self.mask(i)).map_err(|e| layer_err(i, e))?.1;
        }
        Ok(t)
    }

    pub fn forward_with_trace(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        outputs.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let (pre, out) = layer
                .forward(outputs.last().unwrap(), self.mask(i))
                .map_err(|e| layer_err(i, e))?;
            pre_activations.push(pre);
            outputs.push(out);
        }
        let out = outputs.last().unwrap().clone();
        Ok((
            out,
            ActivationTrace {
                outputs,
                pre_activations,
            },
        ))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(shape_err(
                "forward",
                format!("input {:?} does not match network input {:?}", x.shape(), self.input_shape),
            ));
        }
        Ok(())
    }

    /// Back-propagates `grad_output` along a trace. Returns per-layer parameter
    /// gradients in [`Layer::params`] order. Gradients of masked units are
    /// zeroed.
    pub fn backward(&self, trace: &ActivationTrace, grad_output: &Tensor) -> Result<Vec<Vec<Tensor>>> {
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let (gi, mut gp) = self.layers[i]
                .backward(&trace.outputs[i], &trace.pre_activations[i], self.mask(i), &g)
                .map_err(|e| layer_err(i, e))?;
            self.zero_masked_grads(i, &mut gp);
            grads[i] = gp;
            g = gi;
        }
        Ok(grads)
    }

    /// Flattened named view of [`Network::backward`].
    pub fn named_gradients(&self, grads: Vec<Vec<Tensor>>) -> Vec<Gradient> {
        let mut out = Vec::new();
        for (i, (layer, layer_grads)) in self.layers.iter().zip(grads).enumerate() {
            for ((name, _), value) in layer.params().into_iter().zip(layer_grads) {
                out.push(Gradient {
                    param: ParamId { layer: i, name },
                    value,
                });
            }
        }
        out
    }

    pub(crate) fn zero_masked_grads(&self, i: usize, grads: &mut [Tensor]) {
        let Some(mask) = self.mask(i) else { return };
        match &self.layers[i].kind {
            LayerKind::Dense { weight, .. } => {
                let cols = weight.cols();
                for (u, &keep) in mask.flags().iter().enumerate() {
                    if !keep {
                        grads[0].data_mut()[u * cols..(u + 1) * cols].fill(0.0);
                        grads[1].data_mut()[u] = 0.0;
                    }
                }
            }
            LayerKind::Conv2d { kernel, .. } => {
                let c_out = kernel.shape()[3];
                for (u, &keep) in mask.flags().iter().enumerate() {
                    if !keep {
                        for v in grads[0].data_mut().iter_mut().skip(u).step_by(c_out) {
                            *v = 0.0;
                        }
                        grads[1].data_mut()[u] = 0.0;
                    }
                }
            }
            LayerKind::MultiHeadAttention { .. } => {
                for (u, &keep) in mask.flags().iter().enumerate() {
                    if !keep {
                        for g in &mut grads[3 * u..3 * u + 3] {
                            g.data_mut().fill(0.0);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// Whether parameter element `idx` of parameter `p` in layer `i` belongs
    /// to a masked unit.
    pub(crate) fn param_is_masked(&self, i: usize, p: usize, idx: usize) -> bool {
        let Some(mask) = self.mask(i) else { return false };
        match &self.layers[i].kind {
            LayerKind::Dense { weight, .. } => {
                let unit = if p == 0 { idx / weight.cols() } else { idx };
                !mask.keeps(unit)
            }
            LayerKind::Conv2d { kernel, .. } => {
                let unit = if p == 0 { idx % kernel.shape()[3] } else { idx };
                !mask.keeps(unit)
            }
            LayerKind::MultiHeadAttention { heads, .. } => p < 3 * heads.len() && !mask.keeps(p / 3),
            _ => false,
        }
    }

    /// Returns a copy whose layer `layer` mask is the logical AND of the
    /// current mask and `mask`.
    pub fn apply_mask(&self, layer: usize, mask: &PruningMask) -> Result<Network> {
        let l = self.layer(layer)?;
        let expected = l.unit_count();
        if mask.len() != expected || expected == 0 {
            return Err(Error::MaskLength {
                layer,
                expected,
                got: mask.len(),
            });
        }
        let mut out = self.clone();
        let current = out.masks[layer].take().expect("unit layers always carry a mask");
        out.masks[layer] = Some(current.and(mask));
        Ok(out)
    }

    /// Applies one optional mask per layer.
    pub fn apply_masks(&self, masks: &[Option<PruningMask>]) -> Result<Network> {
        let mut out = self.clone();
        for (i, m) in masks.iter().enumerate() {
            if let Some(m) = m {
                out = out.apply_mask(i, m)?;
            }
        }
        Ok(out)
    }

    /// Replaces layer `index` with an identity mapping, or with a learnable
    /// projection when the layer changes the tensor shape.
    ///
    /// Residual layers keep their skip: the branch becomes a zero-initialised
    /// projection, so the block starts out as the identity.
    pub fn replace_with_identity(&self, index: usize) -> Result<Network> {
        let layer = self.layer(index)?;
        if layer.is_identity() {
            return Ok(self.clone());
        }
        let in_shape = self.layer_input_shapes()[index].clone();
        let out_shape = layer.output_shape(&in_shape)?;
        let replacement = if layer.residual {
            let d = *in_shape.last().unwrap();
            Layer::projection(Tensor::zeros(&[d, d]), Tensor::zeros(&[d]), 1).with_residual()
        } else if in_shape == out_shape {
            Layer::identity()
        } else {
            projection_between(&in_shape, &out_shape).map_err(|e| layer_err(index, e))?
        };
        let mut out = self.clone();
        out.layers[index] = replacement;
        out.masks[index] = None;
        out.output_shape = out.validate()?;
        Ok(out)
    }

    /// Live-feature flags of every trace entry, along the trailing axis for
    /// rank-2/3 tensors and over all elements for vectors.
    fn live_features(&self) -> Vec<Vec<bool>> {
        let shapes = self.layer_input_shapes();
        let mut live = Vec::with_capacity(self.layers.len() + 1);
        live.push(vec![true; *self.input_shape.last().unwrap_or(&1)]);
        for (i, layer) in self.layers.iter().enumerate() {
            let input = live.last().unwrap().clone();
            let mut next = match &layer.kind {
                LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => self.masks[i].as_ref().unwrap().flags().to_vec(),
                LayerKind::Identity => input.clone(),
                LayerKind::Flatten => {
                    let shape = &shapes[i];
                    let positions = shape.iter().product::<usize>() / input.len().max(1);
                    (0..positions).flat_map(|_| input.iter().copied()).collect()
                }
                LayerKind::MultiHeadAttention { output, .. } => vec![true; output.cols()],
                LayerKind::Projection { weight, .. } => vec![true; weight.rows()],
            };
            if layer.residual {
                for (n, i) in next.iter_mut().zip(&input) {
                    *n = *n || *i;
                }
            }
            live.push(next);
        }
        live
    }

    /// Parameters of unmasked units. Weights that only read masked (always
    /// zero) inputs are excluded as well.
    pub fn count_params(&self) -> usize {
        let live = self.live_features();
        let mut total = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let live_in = live[i].iter().filter(|&&b| b).count();
            let kept = self.masks[i].as_ref().map(PruningMask::kept).unwrap_or(0);
            total += match &layer.kind {
                LayerKind::Dense { .. } => kept * live_in + kept,
                LayerKind::Conv2d { kernel, .. } => {
                    let k = kernel.shape()[0];
                    k * k * live_in * kept + kept
                }
                LayerKind::MultiHeadAttention { heads, output } => {
                    let d_model = output.cols();
                    let (d_k, d_v) = (heads[0].query.cols(), heads[0].value.cols());
                    kept * (d_model * (2 * d_k + d_v) + d_v * d_model)
                }
                LayerKind::Projection { weight, .. } => weight.rows() * live_in + weight.rows(),
                LayerKind::Identity | LayerKind::Flatten => 0,
            };
        }
        total
    }

    /// Multiply-accumulate count of one masked forward pass on `input_shape`.
    pub fn estimate_flops(&self, input_shape: &[usize]) -> Result<u64> {
        let live = self.live_features();
        let mut shape = input_shape.to_vec();
        let mut total: u64 = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.output_shape(&shape).map_err(|e| layer_err(i, e))?;
            let live_in = live[i].iter().filter(|&&b| b).count() as u64;
            let kept = self.masks[i].as_ref().map(PruningMask::kept).unwrap_or(0) as u64;
            total += match &layer.kind {
                LayerKind::Dense { .. } => kept * live_in,
                LayerKind::Conv2d { kernel, .. } => {
                    let k = kernel.shape()[0] as u64;
                    (out[0] * out[1]) as u64 * kept * live_in * k * k
                }
                LayerKind::MultiHeadAttention { heads, output } => {
                    let n = shape[0] as u64;
                    let d_model = output.cols() as u64;
                    let (d_k, d_v) = (heads[0].query.cols() as u64, heads[0].value.cols() as u64);
                    kept * (2 * n * d_model * d_k + n * n * d_k + n * n * d_v + n * d_model * d_v)
                        + n * kept * d_v * d_model
                }
                LayerKind::Projection { weight, .. } => {
                    let positions = (out.iter().product::<usize>() / weight.rows()) as u64;
                    positions * weight.rows() as u64 * live_in
                }
                LayerKind::Identity | LayerKind::Flatten => 0,
            };
            shape = out;
        }
        Ok(total)
    }

    /// Total number of structural units that are still unmasked.
    pub fn surviving_units(&self) -> usize {
        self.masks.iter().flatten().map(PruningMask::kept).sum()
    }

    /// SHA-256 over topology, parameter bits and masks.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.input_shape {
            hasher.update((*v as u64).to_le_bytes());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            hasher.update(layer.kind_name().as_bytes());
            hasher.update([layer.residual as u8, matches!(layer.activation, Activation::Relu) as u8]);
            for (name, t) in layer.params() {
                hasher.update(name.as_bytes());
                for v in t.shape() {
                    hasher.update((*v as u64).to_le_bytes());
                }
                for v in t.data() {
                    hasher.update(v.to_bits().to_le_bytes());
                }
            }
            if let Some(m) = &self.masks[i] {
                hasher.update(m.flags().iter().map(|&b| b as u8).collect::<Vec<_>>());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub(crate) fn set_mask_unchecked(&mut self, i: usize, mask: Option<PruningMask>) {
        self.masks[i] = mask;
    }

    pub(crate) fn set_mandatory(&mut self, mandatory: BTreeSet<usize>) {
        self.mandatory = mandatory;
    }
}

fn layer_err(i: usize, e: Error) -> Error {
    match e {
        Error::Layer { .. } => e,
        other => Error::Layer {
            layer: i,
            detail: other.to_string(),
        },
    }
}

/// Near-identity projection mapping `in_shape` onto `out_shape`.
fn projection_between(in_shape: &[usize], out_shape: &[usize]) -> Result<Layer> {
    if in_shape.len() != out_shape.len() {
        return Err(shape_err(
            "projection",
            format!("cannot align rank-{} input with rank-{} output", in_shape.len(), out_shape.len()),
        ));
    }
    let (fin, fout) = (*in_shape.last().unwrap(), *out_shape.last().unwrap());
    let stride = match in_shape.len() {
        3 => (1..=in_shape[0].max(in_shape[1]))
            .find(|&s| {
                tensor::conv_output_extent(in_shape[0], 1, s, 0).ok() == Some(out_shape[0])
                    && tensor::conv_output_extent(in_shape[1], 1, s, 0).ok() == Some(out_shape[1])
            })
            .ok_or_else(|| shape_err("projection", format!("no stride maps {in_shape:?} onto {out_shape:?}")))?,
        _ if in_shape[..in_shape.len() - 1] != out_shape[..out_shape.len() - 1] => {
            return Err(shape_err("projection", format!("cannot align {in_shape:?} with {out_shape:?}")))
        }
        _ => 1,
    };
    let mut weight = Tensor::zeros(&[fout, fin]);
    for i in 0..fout.min(fin) {
        weight.set2(i, i, 1.0);
    }
    Ok(Layer::projection(weight, Tensor::zeros(&[fout]), stride))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]], bias: &[f64], act: Activation) -> Layer {
        Layer::dense(Tensor::matrix(rows), Tensor::vector(bias.to_vec()), act)
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = Network::new(vec![3], vec![Layer::identity(), Layer::identity()]).unwrap();
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let (out, trace) = net.forward_with_trace(&x).unwrap();
        assert_eq!(out, x);
        assert_eq!(trace.len(), 3);
        assert!(trace.outputs.iter().all(|t| *t == x));
    }

    #[test]
    fn dense_relu_trace() {
        let net = Network::new(vec![2], vec![dense(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Relu)]).unwrap();
        let (out, trace) = net.forward_with_trace(&Tensor::vector(vec![3.0, -2.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 0.0]);
        assert_eq!(trace.outputs[1].data(), &[3.0, 0.0]);
        assert_eq!(trace.pre_activations[0].data(), &[3.0, -2.0]);
        let pos = Tensor::vector(vec![0.5, 2.0]);
        assert_eq!(net.forward(&pos).unwrap(), pos);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let net = Network::new(vec![2], vec![Layer::identity()]).unwrap();
        assert!(net.forward(&Tensor::vector(vec![1.0; 3])).is_err());
    }

    #[test]
    fn shape_break_names_layer() {
        let err = Network::new(
            vec![2],
            vec![Layer::identity(), dense(&[&[1.0, 0.0, 0.0]], &[0.0], Activation::None)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 1, .. }), "{err}");
    }

    #[test]
    fn masks_compose_and_zero_units() {
        let net = Network::new(
            vec![2],
            vec![dense(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], &[0.5, 0.5, 0.5], Activation::Relu)],
        )
        .unwrap();
        let x = Tensor::vector(vec![1.0, 2.0]);
        let full = net.apply_mask(0, &PruningMask::all(3)).unwrap();
        assert_eq!(full.forward(&x).unwrap(), net.forward(&x).unwrap());

        let a = PruningMask::new(vec![true, false, true]);
        let b = PruningMask::new(vec![false, true, true]);
        let ab = net.apply_mask(0, &a).unwrap().apply_mask(0, &b).unwrap();
        let ba = net.apply_mask(0, &b).unwrap().apply_mask(0, &a).unwrap();
        assert_eq!(ab.mask(0), ba.mask(0));
        let twice = ab.apply_mask(0, &a).unwrap();
        assert_eq!(twice.mask(0), ab.mask(0));
        assert_eq!(ab.forward(&x).unwrap().data(), &[0.0, 0.0, 3.5]);

        let zero = net.apply_mask(0, &PruningMask::new(vec![false; 3])).unwrap();
        assert!(zero.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            net.apply_mask(0, &PruningMask::all(2)),
            Err(Error::MaskLength { .. })
        ));
    }

    #[test]
    fn masked_conv_filter_matches_single_filter_network() {
        let kernel = Tensor::new(vec![2, 2, 1, 2], vec![1.0, -1.0, 0.5, 2.0, -0.5, 1.0, 1.0, 0.25]).unwrap();
        let bias = Tensor::vector(vec![0.1, 0.2]);
        let net = Network::new(vec![3, 3, 1], vec![Layer::conv2d(kernel.clone(), bias, 1, 0, Activation::Relu)]).unwrap();
        let masked = net.apply_mask(0, &PruningMask::new(vec![true, false])).unwrap();

        let k0: Vec<f64> = kernel.data().iter().step_by(2).copied().collect();
        let single = Network::new(
            vec![3, 3, 1],
            vec![Layer::conv2d(
                Tensor::new(vec![2, 2, 1, 1], k0).unwrap(),
                Tensor::vector(vec![0.1]),
                1,
                0,
                Activation::Relu,
            )],
        )
        .unwrap();
        let x = Tensor::new(vec![3, 3, 1], (0..9).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let out = masked.forward(&x).unwrap();
        let reference = single.forward(&x).unwrap();
        for p in 0..4 {
            assert_eq!(out.data()[2 * p], reference.data()[p]);
            assert_eq!(out.data()[2 * p + 1], 0.0);
        }
    }

    #[test]
    fn replacing_square_dense_yields_identity() {
        let net = Network::new(
            vec![2],
            vec![
                dense(&[&[2.0, 0.0], &[1.0, 1.0]], &[0.0, 0.0], Activation::Relu),
                dense(&[&[1.0, -1.0], &[0.5, 0.5]], &[0.1, 0.0], Activation::Relu),
                dense(&[&[1.0, 2.0]], &[0.0], Activation::None),
            ],
        )
        .unwrap();
        let replaced = net.replace_with_identity(1).unwrap();
        assert!(replaced.layer(1).unwrap().is_identity());
        let skip = Network::new(vec![2], vec![net.layers()[0].clone(), net.layers()[2].clone()]).unwrap();
        let x = Tensor::vector(vec![0.3, -0.7]);
        assert_eq!(replaced.forward(&x).unwrap(), skip.forward(&x).unwrap());
        let (_, trace) = replaced.forward_with_trace(&x).unwrap();
        assert_eq!(trace.outputs[2], trace.outputs[1]);
        assert!(net.replace_with_identity(5).is_err());
    }

    #[test]
    fn replacing_shape_changing_dense_inserts_projection() {
        let w = Tensor::filled(&[2, 4], 0.1);
        let net = Network::new(
            vec![4],
            vec![Layer::dense(w, Tensor::zeros(&[2]), Activation::Relu), dense(&[&[1.0, 1.0]], &[0.0], Activation::None)],
        )
        .unwrap();
        let replaced = net.replace_with_identity(0).unwrap();
        match &replaced.layer(0).unwrap().kind {
            LayerKind::Projection { weight, .. } => assert_eq!(weight.shape(), &[2, 4]),
            other => panic!("expected projection, got {other:?}"),
        }
        let out = replaced.forward(&Tensor::vector(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.shape(), &[1]);
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn replacing_strided_conv_inserts_strided_projection() {
        let net = Network::new(
            vec![6, 6, 2],
            vec![Layer::conv2d(Tensor::filled(&[3, 3, 2, 4], 0.1), Tensor::zeros(&[4]), 2, 1, Activation::Relu)],
        )
        .unwrap();
        let replaced = net.replace_with_identity(0).unwrap();
        assert_eq!(replaced.output_shape(), &[3, 3, 4]);
        let x = Tensor::filled(&[6, 6, 2], 1.0);
        assert_eq!(replaced.forward(&x).unwrap().shape(), &[3, 3, 4]);
    }

    #[test]
    fn replacing_residual_attention_keeps_model_width() {
        let head = AttentionHead {
            query: Tensor::filled(&[4, 2], 0.1),
            key: Tensor::filled(&[4, 2], 0.2),
            value: Tensor::filled(&[4, 2], 0.3),
        };
        let net = Network::new(
            vec![3, 4],
            vec![Layer::attention(vec![head.clone(), head], Tensor::filled(&[4, 4], 0.05)).with_residual()],
        )
        .unwrap();
        let replaced = net.replace_with_identity(0).unwrap();
        let layer = replaced.layer(0).unwrap();
        assert!(layer.residual);
        assert!(matches!(&layer.kind, LayerKind::Projection { weight, .. } if weight.shape() == [4, 4]));
        let x = Tensor::new(vec![3, 4], (0..12).map(|v| v as f64 / 7.0).collect()).unwrap();
        assert_eq!(replaced.forward(&x).unwrap(), x);
    }

    #[test]
    fn param_counts() {
        let net = Network::new(vec![3], vec![Layer::dense(Tensor::filled(&[2, 3], 1.0), Tensor::zeros(&[2]), Activation::Relu)]).unwrap();
        assert_eq!(net.count_params(), 8);
        let masked = net.apply_mask(0, &PruningMask::new(vec![true, false])).unwrap();
        assert_eq!(masked.count_params(), 4);
        let id = Network::new(vec![3], vec![Layer::identity()]).unwrap();
        assert_eq!(id.count_params(), 0);
    }

    #[test]
    fn downstream_weights_of_masked_units_are_not_counted() {
        let net = Network::new(
            vec![3],
            vec![
                Layer::dense(Tensor::filled(&[4, 3], 1.0), Tensor::zeros(&[4]), Activation::Relu),
                Layer::dense(Tensor::filled(&[2, 4], 1.0), Tensor::zeros(&[2]), Activation::None),
            ],
        )
        .unwrap();
        assert_eq!(net.count_params(), 16 + 10);
        let masked = net.apply_mask(0, &PruningMask::new(vec![true, false, false, true])).unwrap();
        assert_eq!(masked.count_params(), 8 + 6);
    }

    #[test]
    fn flop_estimates() {
        let id = Network::new(vec![3], vec![Layer::identity()]).unwrap();
        assert_eq!(id.estimate_flops(&[3]).unwrap(), 0);
        let dense = Network::new(vec![3], vec![Layer::dense(Tensor::filled(&[2, 3], 1.0), Tensor::zeros(&[2]), Activation::Relu)]).unwrap();
        assert_eq!(dense.estimate_flops(&[3]).unwrap(), 6);

        let conv = Network::new(
            vec![5, 5, 2],
            vec![Layer::conv2d(Tensor::filled(&[3, 3, 2, 4], 0.1), Tensor::zeros(&[4]), 1, 1, Activation::Relu)],
        )
        .unwrap();
        let full = conv.estimate_flops(&[5, 5, 2]).unwrap();
        assert_eq!(full, 25 * 4 * 2 * 9);
        let half = conv
            .apply_mask(0, &PruningMask::new(vec![true, false, true, false]))
            .unwrap()
            .estimate_flops(&[5, 5, 2])
            .unwrap();
        assert_eq!(half * 2, full);
    }

    #[test]
    fn fingerprint_tracks_masks_and_params() {
        let net = Network::new(vec![2], vec![dense(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Relu)]).unwrap();
        let masked = net.apply_mask(0, &PruningMask::new(vec![true, false])).unwrap();
        assert_eq!(net.fingerprint(), net.clone().fingerprint());
        assert_ne!(net.fingerprint(), masked.fingerprint());
    }
}
