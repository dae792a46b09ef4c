//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, AaiError>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum AaiError {
    /// Matrix dimensions do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A softmax row had every entry masked to negative infinity.
    #[error("degenerate row {row}: every entry is masked")]
    DegenerateRow { row: usize },

    /// A head pattern with no active cells cannot be classified.
    #[error("head pattern is undefined (no active cells)")]
    Unclassifiable,

    /// A trace is missing matrices it declares.
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),

    /// Rule tagging in a prompt is inconsistent.
    #[error("rule annotation: {0}")]
    Annotation(String),

    /// A pair index points outside the sequence.
    #[error("pair ({query}, {key}) out of bounds for length {len}")]
    Bounds { query: usize, key: usize, len: usize },

    /// An operation received an input it cannot reduce (for example an empty median scope).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Invalid model or experiment configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// Sequence does not fit the model context.
    #[error("sequence length {len} exceeds limit {max}")]
    Length { len: usize, max: usize },

    /// Malformed trace file or other binary/text payload.
    #[error("format: {0}")]
    Format(String),

    /// A template placeholder could not be filled.
    #[error("render: {0}")]
    Render(String),

    /// Forward chaining derived an atom in both polarities.
    #[error("inconsistent world: {0}")]
    InconsistentWorld(String),

    /// The synthetic generator gave up after its retry budget.
    #[error("generation failed: {0}")]
    Generation(String),

    /// A dataset or completions line failed to parse.
    #[error("{path}:{line}: {message}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A record violates the dataset schema.
    #[error("schema: {0}")]
    Schema(String),

    /// Replay completions do not cover every record.
    #[error("coverage: {0}")]
    Coverage(String),

    /// Reduction over an empty input.
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AaiError {
    /// Short category tag, used by the CLI for its messages and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            AaiError::Shape(_)
            | AaiError::DegenerateRow { .. }
            | AaiError::Bounds { .. }
            | AaiError::DegenerateInput(_) => "numeric",
            AaiError::Unclassifiable => "analysis",
            AaiError::IncompleteTrace(_) | AaiError::Format(_) => "format",
            AaiError::Annotation(_) | AaiError::Render(_) => "prompt",
            AaiError::Config(_) | AaiError::Length { .. } => "config",
            AaiError::InconsistentWorld(_) | AaiError::Generation(_) => "world",
            AaiError::Load { .. } | AaiError::Schema(_) | AaiError::Coverage(_) => "dataset",
            AaiError::EmptyInput(_) => "input",
            AaiError::Io { .. } => "io",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "numeric" => 10,
            "analysis" => 11,
            "format" => 12,
            "prompt" => 13,
            "config" => 14,
            "world" => 15,
            "dataset" => 16,
            "input" => 17,
            _ => 18,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AaiError::Io {
            path: path.into(),
            source,
        }
    }
}
