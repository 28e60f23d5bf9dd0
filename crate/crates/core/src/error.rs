use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the grounding kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Text with no tokens, or a matrix/mask with no rows.
    EmptyEntry,
    /// Two operands disagree on a dimension.
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A projected token row has zero norm and cannot be normalized.
    DegenerateRow { row: usize },
    /// A selection mask references a token position past the end of its entry.
    MaskOutOfRange { position: usize, len: usize },
    /// Invalid hyper-parameter or argument.
    Config(String),
    /// Class label outside the candidate range.
    Label { label: usize, len: usize },
    /// A dialogue round violates the data model.
    Schema(String),
    /// IDF requested over zero documents.
    EmptyCorpus,
    /// Metric requested over zero predictions.
    EmptyEval,
    /// No embedding is available for an entry.
    MissingEmbedding(String),
    /// A non-finite value appeared in a forward or backward pass.
    Numerics(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyEntry => f.write_str("entry has no tokens"),
            Error::Shape { what, expected, found } => {
                write!(f, "shape mismatch in {what}: expected {expected}, found {found}")
            }
            Error::DegenerateRow { row } => {
                write!(f, "row {row} projects to the zero vector")
            }
            Error::MaskOutOfRange { position, len } => {
                write!(f, "mask position {position} out of range for {len} tokens")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Label { label, len } => {
                write!(f, "label {label} out of range for {len} candidates")
            }
            Error::Schema(msg) => write!(f, "schema violation: {msg}"),
            Error::EmptyCorpus => f.write_str("corpus is empty"),
            Error::EmptyEval => f.write_str("nothing to evaluate"),
            Error::MissingEmbedding(id) => write!(f, "no embedding for entry `{id}`"),
            Error::Numerics(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for Error {}
