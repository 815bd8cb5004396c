use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Category;

/// Axis of the score tensor an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Prompt,
    Instance,
    Choice,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Prompt => "prompt",
            Axis::Instance => "instance",
            Axis::Choice => "choice",
        })
    }
}

/// Optional sections of a score tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    SequenceStats,
    ContentFree,
    Domain,
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Section::SequenceStats => "sequence_stats",
            Section::ContentFree => "content_free",
            Section::Domain => "domain",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} index {index} out of range (len {len})")]
    IndexOutOfRange { axis: Axis, index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("required section `{0}` is missing from the tensor")]
    MissingSection(Section),

    #[error("invalid method configuration: {0}")]
    InvalidMethod(String),

    #[error("token count {count} < 2 at (t={t}, x={x}); perplexity is undefined")]
    TokenCount { t: usize, x: usize, count: u32 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("best-prompt performance must be > 0, got {0}")]
    NonPositiveBest(f64),

    #[error("operation requires a {expected} tensor, got {found}")]
    WrongCategory { expected: Category, found: Category },

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),

    #[error("tensor invariant violated: {0}")]
    Invariant(String),

    #[error("{0}")]
    Format(#[from] FormatError),
}

/// Failures while reading or writing tensor files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid record {key}: {message}")]
    Record { key: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
