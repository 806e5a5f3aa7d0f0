use std::path::{Path, PathBuf};

use thiserror::Error;
use travgt_core::eval::EvalError;
use travgt_core::ingest::IngestError;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("{0}")]
    Stage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::GridMismatch(_) => 4,
            CliError::Stage(_) => 5,
        }
    }

    pub fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Parse(format!("{}: {e}", path.display()))
    }

    pub fn stage(what: &str, e: impl std::fmt::Display) -> Self {
        CliError::Stage(format!("{what}: {e}"))
    }

    /// Maps an ingest failure: missing files → 3, unreadable content → 2.
    pub fn ingest(path: &Path, e: IngestError) -> Self {
        match e {
            IngestError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(path.to_path_buf())
            }
            IngestError::Io { .. } => CliError::stage(&path.display().to_string(), e),
            other => CliError::parse(path, other),
        }
    }

    pub fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Stage(format!("writing {}: {e}", path.display()))
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::GridSpecMismatch => CliError::GridMismatch(e.to_string()),
            other => CliError::stage("eval", other),
        }
    }
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.to_path_buf()),
        _ => CliError::stage(&format!("reading {}", path.display()), e),
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_input(path)?).map_err(|_| CliError::parse(path, "not utf-8"))
}
