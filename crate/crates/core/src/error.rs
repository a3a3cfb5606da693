use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("duplicate row id {0:?}")]
    DuplicateRowId(String),

    #[error("empty row id at data row {0}")]
    EmptyRowId(usize),

    #[error("header does not match schema (missing: {missing:?}, extra: {extra:?})")]
    HeaderMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),

    #[error("unknown attribute(s): {0:?}")]
    UnknownAttributes(Vec<String>),

    #[error("column {0:?} has no present values")]
    EmptyColumn(String),

    #[error("table shape: {0}")]
    Shape(String),

    #[error("invalid thresholds for {attribute:?}: {reason}")]
    InvalidThresholds { attribute: String, reason: String },

    #[error("cannot bin NaN")]
    NanValue,

    #[error("{distinct} distinct value(s) cannot fill {bins} bins; use fewer bins")]
    TooFewDistinct { distinct: usize, bins: usize },

    #[error("label {label:?} is not a category of {attribute:?}")]
    UnknownLabel { attribute: String, label: String },

    #[error("contingency table {x:?} x {y:?} is degenerate: {reason}")]
    DegenerateContingency { x: String, y: String, reason: String },

    #[error("som: {0}")]
    Som(String),

    #[error("mining: {0}")]
    Mining(String),

    #[error("render: {0}")]
    Render(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
