use std::path::PathBuf;

use ngc::NgcError;

use crate::config::field_path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Input { path: PathBuf, line: usize, message: String },

    #[error("id mismatch between {detections} and {truth}: {message}")]
    IdMismatch {
        detections: PathBuf,
        truth: PathBuf,
        message: String,
    },

    #[error(transparent)]
    Core(NgcError),
}

impl CliError {
    /// 1 for bad configuration or input, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Input { .. } | CliError::IdMismatch { .. } => 1,
            CliError::Io { .. } | CliError::Artifact { .. } => 2,
            CliError::Core(e) => match e {
                NgcError::Epoch { source, .. } if matches!(**source, NgcError::SolverDiverged { .. }) => 2,
                NgcError::SolverDiverged { .. } | NgcError::NoPrototypes | NgcError::Io(_) => 2,
                NgcError::Epoch { .. } => 2,
                _ => 1,
            },
        }
    }

    /// Attaches a file to parse errors and a config field to parameter
    /// errors raised by the core library.
    pub fn from_core(err: NgcError, file: Option<&std::path::Path>) -> Self {
        match err {
            NgcError::InvalidParameter { name, reason } => CliError::Config {
                field: field_path(name),
                message: reason,
            },
            NgcError::Parse { line, message, .. } if file.is_some() => CliError::Input {
                path: file.expect("checked").to_path_buf(),
                line,
                message,
            },
            NgcError::LabelOutOfRange {
                label,
                num_classes,
                line: Some(line),
            } if file.is_some() => CliError::Input {
                path: file.expect("checked").to_path_buf(),
                line,
                message: format!("label {label} out of range for {num_classes} classes"),
            },
            other => CliError::Core(other),
        }
    }
}

impl From<NgcError> for CliError {
    fn from(err: NgcError) -> Self {
        CliError::from_core(err, None)
    }
}
