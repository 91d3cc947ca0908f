use std::path::PathBuf;

use thiserror::Error;

use crate::trace::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unsupported schema_version {found} (expected {expected})")]
    SchemaVersion {
        line: usize,
        found: u32,
        expected: u32,
    },

    #[error("line {line}: sample `{sample_id}` failed validation: {}", format_violations(.violations))]
    Invalid {
        line: usize,
        sample_id: String,
        violations: Vec<Violation>,
    },

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("degenerate labels: need at least one positive and one negative sample")]
    DegenerateLabels,

    #[error("no labeled samples")]
    NoLabeledSamples,

    #[error("empty score vector")]
    EmptyScores,

    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("degenerate hidden state: sample `{sample_id}` layer {layer} has zero norm")]
    DegenerateHidden { sample_id: String, layer: usize },

    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),

    #[error("missing reference vector for sample `{0}`")]
    MissingReference(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("no evaluable configuration: {0}")]
    NoEvaluableConfig(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for I/O and usage problems, 1 for domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
