use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NgcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NgcError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {num_classes} classes{}", at_line(*.line))]
    LabelOutOfRange {
        label: i64,
        num_classes: usize,
        line: Option<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("conjugate gradient did not converge for column {column} after {iterations} iterations (residual {residual:e})")]
    SolverDiverged {
        column: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<NgcError>,
    },

    #[error("no valid prototypes: every class has zero selected support")]
    NoPrototypes,

    #[error("{0}")]
    Metric(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl NgcError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        NgcError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        NgcError::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
