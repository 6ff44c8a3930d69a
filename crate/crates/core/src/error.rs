use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty sample")]
    EmptySample,

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("unknown op id `{0}`")]
    UnknownOp(String),

    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },

    #[error("layer index {index} out of range (network has {len} layers)")]
    LayerIndex { index: usize, len: usize },

    #[error("mask length {got} does not match {expected} structural units of layer {layer}")]
    MaskLength {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("training diverged: loss is not finite at epoch {epoch}")]
    DivergentLoss { epoch: usize },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("variance undefined: need at least 2 samples, got {0}")]
    VarianceUndefined(usize),

    #[error("invalid value for `{field}`: {detail}")]
    Range { field: String, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("tracker: {0}")]
    Tracker(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn range_err(field: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Range {
        field: field.into(),
        detail: detail.into(),
    }
}
