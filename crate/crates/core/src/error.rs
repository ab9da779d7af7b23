use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numerical and federation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: layer count mismatch ({left} vs {right})")]
    LayerCount {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("matrix data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error(
        "exact transport limited to {limit} cells, instance has {cells}; use sinkhorn mode instead"
    )]
    ExactTooLarge { cells: usize, limit: usize },

    #[error("sinkhorn scalings became non-finite at epsilon {epsilon:e}; increase epsilon")]
    SinkhornDiverged { epsilon: f64 },

    #[error("transport plan column {column} carries no mass")]
    EmptyColumn { column: usize },

    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("layer {layer}: submodel width {sub} exceeds global width {global}")]
    WidthViolation {
        layer: usize,
        sub: usize,
        global: usize,
    },

    #[error("alignment failed at layer {layer}: {source}")]
    Alignment {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("aggregation weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },

    #[error("partition failed: {0}")]
    Partition(String),

    #[error("client {client} has no neuron index map")]
    MissingIndexMap { client: usize },

    #[error("round {round}, client {client:?}: {source}")]
    Round {
        round: usize,
        client: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Idx(#[from] crate::data::idx::IdxError),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::Alignment {
            layer,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_round(self, round: usize, client: Option<usize>) -> Self {
        Error::Round {
            round,
            client,
            source: Box::new(self),
        }
    }
}
