use alloc::string::String;

pub type Result<T, E = DebiasError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DebiasError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sample {id}: {field} id {value} out of range (limit {limit})")]
    OutOfRange {
        id: u64,
        field: &'static str,
        value: u32,
        limit: usize,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("unknown sample id {0}")]
    UnknownSample(u64),
    #[error("missing vocabulary entry for {kind} {id}")]
    MissingVocab { kind: &'static str, id: u32 },
    #[error("shape mismatch: {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("probability row {row} is invalid: {reason}")]
    InvalidProbRow { row: usize, reason: String },
    #[error("domain ({subject}, {object}) has no risk entry")]
    UnknownDomain { subject: u32, object: u32 },
    #[error("predicate class {0} has no surviving samples")]
    EmptyClass(u32),
    #[error("degenerate prototype for predicate class {0}")]
    DegeneratePrototype(u32),
    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown embedding provider {0:?}")]
    UnknownProvider(String),
    #[error("transfer plan references removed sample {0}")]
    MoveOnRemoved(u64),
}
