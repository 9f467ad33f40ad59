use std::fmt;
use std::path::PathBuf;

use crate::corpus::EmotionLabel;

pub type Result<T> = std::result::Result<T, Error>;

/// One problem found while reading a manifest, tied to the 1-based data row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub row: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {} field `{}`: {}", self.row, self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest has {} invalid row(s):\n{}", .0.len(), join_rows(.0))]
    Manifest(Vec<RowError>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no signal: clip is empty after silence trimming")]
    NoSignal,

    #[error("no speech detected")]
    NoSpeech,

    #[error("class {} has zero examples; its weight is undefined", class_name(*.0))]
    ZeroCountClass(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("format: {0}")]
    Format(String),

    #[error("embedding backend: {0}")]
    Embed(String),

    #[error("config: {0}")]
    Config(String),

    #[error("batch element {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

fn class_name(index: usize) -> String {
    EmotionLabel::from_index(index)
        .map(|l| l.to_string())
        .unwrap_or_else(|| format!("#{index}"))
}

fn join_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| format!("  {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the root cause is an empty speech region.
    pub fn is_no_speech(&self) -> bool {
        match self {
            Error::NoSpeech => true,
            Error::Batch { source, .. } | Error::Fold { source, .. } => source.is_no_speech(),
            _ => false,
        }
    }

    /// Process exit code for the command-line tool: 4 for "no speech", 3 for
    /// every other data or I/O failure. Usage errors (2) are reported by the
    /// argument parser before any of these can occur.
    pub fn exit_code(&self) -> i32 {
        if self.is_no_speech() {
            4
        } else {
            3
        }
    }
}
