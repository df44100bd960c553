use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("duplicate row for id {id:?} on day {day}")]
    DuplicateRow { id: String, day: i64 },

    #[error("alignment error for id {id:?}: {msg}")]
    Alignment { id: String, msg: String },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ensemble size error: {records} records cannot support {components} components")]
    EnsembleSize { records: usize, components: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("partition (c={components}, r={randomization}) failed: {source}")]
    Partition {
        components: usize,
        randomization: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate labels: both classes are required, found only class {0}")]
    DegenerateLabels(u8),

    #[error("infeasible nu={nu}: must not exceed {max} for this class balance")]
    InfeasibleNu { nu: f64, max: f64 },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("selection is empty")]
    EmptySelection,

    #[error("AUC undefined: y_true contains a single class")]
    AucUndefined,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
