//! Binary network checkpoints.
//!
//! Layout: the 8-byte magic `FLOWCKPT`, one version byte, a little-endian
//! `u64` header length, a JSON header describing topology, parameter shapes,
//! masks and provenance, then every parameter tensor as little-endian `f64`
//! in header order. Values are stored bit-exactly.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, AttentionHead, Layer, LayerKind, Network, PruningMask};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

/// A network plus the metadata stored next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    /// Digest of the compression tracker that produced the network.
    pub provenance: Option<String>,
    /// Accuracy later phases measure their budget against.
    pub reference_accuracy: Option<f64>,
}

impl Checkpoint {
    pub fn new(network: Network, seed: u64) -> Self {
        Self {
            network,
            seed,
            provenance: None,
            reference_accuracy: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    kind: String,
    activation: Activation,
    residual: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerEntry>,
    masks: Vec<Option<Vec<bool>>>,
    mandatory: Vec<usize>,
    seed: u64,
    provenance: Option<String>,
    reference_accuracy: Option<f64>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

/// Serialises a checkpoint to bytes. Equal checkpoints give equal bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let net = &ckpt.network;
    let layers = net
        .layers()
        .iter()
        .map(|layer| {
            let (stride, padding) = match &layer.kind {
                LayerKind::Conv2d { stride, padding, .. } => (Some(*stride), Some(*padding)),
                LayerKind::Projection { stride, .. } => (Some(*stride), None),
                _ => (None, None),
            };
            LayerEntry {
                kind: layer.kind_name().to_string(),
                activation: layer.activation,
                residual: layer.residual,
                stride,
                padding,
                params: layer
                    .params()
                    .into_iter()
                    .map(|(name, t)| ParamEntry {
                        name,
                        shape: t.shape().to_vec(),
                    })
                    .collect(),
            }
        })
        .collect();
    let header = Header {
        input_shape: net.input_shape().to_vec(),
        layers,
        masks: net.masks().iter().map(|m| m.as_ref().map(|m| m.flags().to_vec())).collect(),
        mandatory: net.mandatory().iter().copied().collect(),
        seed: ckpt.seed,
        provenance: ckpt.provenance.clone(),
        reference_accuracy: ckpt.reference_accuracy,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for layer in net.layers() {
        for (_, t) in layer.params() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses checkpoint bytes, rejecting bad magic, other versions, truncated
/// payloads and inconsistent shapes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 17 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing FLOWCKPT magic"));
    }
    if bytes[8] != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: bytes[8],
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    let header_end = 17usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[17..header_end])?;
    let mut payload = &bytes[header_end..];
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let len = n.checked_mul(8).filter(|&b| b <= payload.len()).ok_or_else(|| bad("truncated payload"))?;
        let (head, rest) = payload.split_at(len);
        payload = rest;
        let data = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape.to_vec(), data)
    };

    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, entry) in header.layers.iter().enumerate() {
        let mut tensors = Vec::with_capacity(entry.params.len());
        for p in &entry.params {
            tensors.push(take(&p.shape)?);
        }
        let layer = build_layer(entry, tensors).map_err(|e| bad(format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    if !payload.is_empty() {
        return Err(bad(format!("{} trailing payload bytes", payload.len())));
    }
    let mut network = Network::new(header.input_shape, layers)?;
    if header.masks.len() != network.len() {
        return Err(bad(format!("{} masks for {} layers", header.masks.len(), network.len())));
    }
    for (i, m) in header.masks.into_iter().enumerate() {
        network.set_mask_unchecked(i, m.map(PruningMask::new));
    }
    network.validate()?;
    if let Some(&m) = header.mandatory.iter().find(|&&m| m >= network.len()) {
        return Err(bad(format!("mandatory layer {m} out of range")));
    }
    network.set_mandatory(header.mandatory.into_iter().collect::<BTreeSet<_>>());
    Ok(Checkpoint {
        network,
        seed: header.seed,
        provenance: header.provenance,
        reference_accuracy: header.reference_accuracy,
    })
}

fn build_layer(entry: &LayerEntry, tensors: Vec<Tensor>) -> Result<Layer> {
    let expect = |n: usize| {
        if tensors.len() == n {
            Ok(())
        } else {
            Err(bad(format!("{} expects {n} tensors, found {}", entry.kind, tensors.len())))
        }
    };
    let mut it = tensors.clone().into_iter();
    let mut layer = match entry.kind.as_str() {
        "dense" => {
            expect(2)?;
            Layer::dense(it.next().unwrap(), it.next().unwrap(), entry.activation)
        }
        "conv2d" => {
            expect(2)?;
            let stride = entry.stride.ok_or_else(|| bad("conv2d without stride"))?;
            let padding = entry.padding.ok_or_else(|| bad("conv2d without padding"))?;
            Layer::conv2d(it.next().unwrap(), it.next().unwrap(), stride, padding, entry.activation)
        }
        "projection" => {
            expect(2)?;
            let stride = entry.stride.ok_or_else(|| bad("projection without stride"))?;
            Layer::projection(it.next().unwrap(), it.next().unwrap(), stride)
        }
        "attention" => {
            if tensors.len() < 4 || !(tensors.len() - 1).is_multiple_of(3) {
                return Err(bad(format!("attention with {} tensors", tensors.len())));
            }
            let mut heads = Vec::with_capacity(tensors.len() / 3);
            for _ in 0..tensors.len() / 3 {
                heads.push(AttentionHead {
                    query: it.next().unwrap(),
                    key: it.next().unwrap(),
                    value: it.next().unwrap(),
                });
            }
            Layer::attention(heads, it.next().unwrap())
        }
        "identity" => {
            expect(0)?;
            Layer::identity()
        }
        "flatten" => {
            expect(0)?;
            Layer::flatten()
        }
        other => return Err(bad(format!("unknown layer kind `{other}`"))),
    };
    layer.activation = entry.activation;
    layer.residual = entry.residual;
    Ok(layer)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&super::read_file(path)?)
}
