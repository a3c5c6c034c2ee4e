use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("token id {id} at position {position} is outside the vocabulary (size {vocab})")]
    OutOfVocabulary { position: usize, id: usize, vocab: usize },

    #[error("attention mask has no active token")]
    EmptyMask,

    #[error("sequence length {len} exceeds the model maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("degenerate row {row} in {what}")]
    DegenerateRow { what: &'static str, row: usize },

    #[error("degenerate variance for token {token}: pre-normalization vector is constant")]
    DegenerateVariance { token: usize },

    #[error("layer {layer} out of range for a {num_layers}-layer stack")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("finite-difference oracle failed at token {token}, coordinate {coord}: {detail}")]
    OracleFailure {
        token: usize,
        coord: usize,
        detail: String,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` listed more than once")]
    DuplicateTensor { name: String },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor blob truncated: `{name}` needs bytes up to {needed}, blob has {available}")]
    TruncatedBlob {
        name: String,
        needed: u64,
        available: u64,
    },

    #[error("tensor `{name}` overlaps or precedes the previous tensor (offset {offset})")]
    OverlappingTensors { name: String, offset: u64 },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("tensor `{name}` has unsupported dtype `{dtype}`")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("layer-norm scale `{0}` is all zeros")]
    DegenerateGamma(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("input record {line}: {message}")]
    InputRecord { line: usize, message: String },

    #[error("input line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used in CLI error records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Contract(_) => "contract_violation",
            Error::OutOfVocabulary { .. } => "out_of_vocabulary",
            Error::EmptyMask => "empty_mask",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::DegenerateRow { .. } => "degenerate_row",
            Error::DegenerateVariance { .. } => "degenerate_variance",
            Error::LayerOutOfRange { .. } => "layer_out_of_range",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::OracleFailure { .. } => "oracle_failure",
            Error::MissingTensor(_) => "missing_tensor",
            Error::DuplicateTensor { .. } => "duplicate_tensor",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::TruncatedBlob { .. } => "truncated_blob",
            Error::OverlappingTensors { .. } => "overlapping_tensors",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::UnsupportedDtype { .. } => "unsupported_dtype",
            Error::DegenerateGamma(_) => "degenerate_gamma",
            Error::Manifest(_) => "invalid_manifest",
            Error::InputRecord { .. } => "invalid_input",
            Error::AtLine { source, .. } => source.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
