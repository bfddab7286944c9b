use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "label {label} out of range for {classes} classes at batch {batch}, row {row}, col {col}"
    )]
    LabelOutOfRange {
        batch: usize,
        row: usize,
        col: usize,
        label: usize,
        classes: usize,
    },

    #[error("translation filter has negative value {value} at flat index {index}")]
    NegativeFilter { index: usize, value: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("parameter has no gradient buffer")]
    MissingGrad,

    #[error("could only place {placed} of {requested} cells")]
    Placement { requested: usize, placed: usize },

    #[error("{file}: unknown mask color {color:?} at ({x}, {y})")]
    UnknownMaskColor {
        file: PathBuf,
        x: u32,
        y: u32,
        color: [u8; 3],
    },

    #[error("{0}")]
    Dataset(String),

    #[error("evaluation is empty: every class has zero union")]
    EmptyEvaluation,

    /// `what` names the non-finite quantity: `loss` or a parameter's gradient.
    #[error("training diverged at epoch {epoch}, step {step}: {what} = {value}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: String,
        value: f64,
    },

    #[error("loss audit failed: {0}")]
    Audit(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
