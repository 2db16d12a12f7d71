use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tape operation produced or consumed a value outside its domain.
    #[error("numeric guard tripped in `{op}`: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unit `{node}` failed: {detail}")]
    UnitEvaluation { node: String, detail: String },

    #[error("value {value} is outside the support of `{node}`")]
    Support { node: String, value: f64 },

    #[error("abduction for `{node}` failed after {attempts} attempts")]
    AbductionFailure { node: String, attempts: usize },

    #[error("flow became unstable at layer {layer}: {detail}")]
    FlowStability { layer: usize, detail: String },

    #[error("could not bracket the flow inverse of {target} within |x| <= 1e9")]
    InversionRange { target: f64 },

    #[error("graph contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("column `{0}` is degenerate (needs at least two distinct values)")]
    DegenerateColumn(String),

    #[error("evidence has zero likelihood under every confounder draw")]
    EvidenceImplausible,

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameters restored to the last good state")]
    NanLoss { epoch: usize, batch: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("batch protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn unit(node: &str, err: Error) -> Error {
        match err {
            Error::UnitEvaluation { .. } | Error::Support { .. } | Error::AbductionFailure { .. } => err,
            other => Error::UnitEvaluation {
                node: node.to_string(),
                detail: other.to_string(),
            },
        }
    }

    /// True for failures caused by numerics rather than inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. }
                | Error::UnitEvaluation { .. }
                | Error::FlowStability { .. }
                | Error::InversionRange { .. }
                | Error::NanLoss { .. }
                | Error::EvidenceImplausible
                | Error::AbductionFailure { .. }
        )
    }
}
