use std::path::PathBuf;

use crate::pathology::PathologyId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("manifest schema error: {0}")]
    ManifestSchema(String),

    #[error("manifest row {row}: {message}")]
    ManifestRow { row: usize, message: String },

    #[error("unknown pathology `{0}`")]
    UnknownPathology(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not decode image: {0}")]
    Decode(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate inference record for image `{image_id}` / {pathology}")]
    DuplicateRecord { image_id: String, pathology: PathologyId },

    #[error("no triplet can be built for {pathology}: the {pool} pool is empty")]
    UnsatisfiableTriplet { pathology: PathologyId, pool: &'static str },

    #[error("image `{image_id}` is not a failed inference for {pathology}")]
    NotAFailure { image_id: String, pathology: PathologyId },

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("reports are not comparable: {0}")]
    Incomparable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn create_parent(path: &std::path::Path) -> Result<()> {
        match path.parent() {
            Some(dir) if !dir.as_os_str().is_empty() => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable code, used by the CLI and the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ManifestSchema(_) => "manifest_schema",
            Error::ManifestRow { .. } => "manifest_row",
            Error::UnknownPathology(_) => "unknown_pathology",
            Error::Config(_) => "invalid_config",
            Error::Decode(_) => "decode",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Empty(_) => "empty_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DuplicateRecord { .. } => "duplicate_record",
            Error::UnsatisfiableTriplet { .. } => "unsatisfiable_triplet",
            Error::NotAFailure { .. } => "not_a_failure",
            Error::UnknownImage(_) => "unknown_image",
            Error::Diverged(_) => "diverged",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::Incomparable(_) => "incomparable",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
