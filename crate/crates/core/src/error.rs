use std::path::PathBuf;

/// Every failure the pipeline can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown residue {residue} at line {line}")]
    UnknownResidueAtLine { residue: String, line: usize },

    #[error("unknown residue {0}")]
    UnknownResidue(String),

    #[error("malformed mutation '{token}' at line {line}: {reason}")]
    MalformedMutation { token: String, line: usize, reason: String },

    #[error("bad value in column '{column}' at line {line}: {reason}")]
    BadField {
        column: String,
        line: usize,
        reason: String,
    },

    #[error("missing column '{0}' in header")]
    MissingColumn(String),

    #[error("assay too small to binarize ({n} records, need at least {min})")]
    AssayTooSmall { n: usize, min: usize },

    #[error("variant {0} has no fold assignment")]
    MissingFold(String),

    #[error("PDB parse error at line {line}: {reason}")]
    PdbLine { line: usize, reason: String },

    #[error("no CA atoms found")]
    NoCaAtoms,

    #[error("duplicate residue index {index} in chain {chain}")]
    DuplicateResidue { index: i32, chain: char },

    #[error("structure too short: {0} residues")]
    TooShort(usize),

    #[error("coincident Cα atoms at residues {0} and {1}")]
    CoincidentCa(usize, usize),

    #[error("residue {0} not in structure")]
    SiteNotFound(u32),

    #[error("disconnected contact graph ({0} components)")]
    Disconnected(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("not an embedding store")]
    BadStoreMagic,

    #[error("unsupported store version {0}")]
    BadStoreVersion(u32),

    #[error("not a checkpoint file")]
    BadCheckpointMagic,

    #[error("unsupported checkpoint version {0}")]
    BadCheckpointVersion(u32),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("invalid store contents: {0}")]
    InvalidStore(String),

    #[error("InfoNCE needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("zero-norm row {0} in contrastive input")]
    ZeroNormRow(usize),

    #[error("AUROC undefined: only one class present")]
    AurocUndefined,

    #[error("AUPRC undefined: no positive labels")]
    AuprcUndefined,

    #[error("missing embeddings for {count} variants (first: {first})")]
    MissingEmbeddings { count: usize, first: String },

    #[error("non-finite loss at epoch {epoch} step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
