use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the stage that raises them; the C ABI maps each
/// variant onto a stable integer code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("point has non-positive camera depth ({0} mm)")]
    NonPositiveDepth(f64),
    #[error("rotation is not orthonormal (deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    // tensor store / image assets
    #[error("bad magic in feature file")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    VersionMismatch(u8),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("unsupported image bit depth or channel layout: {0}")]
    UnsupportedBitDepth(String),
    #[error("image decode failed: {0}")]
    DecodeError(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // mesh / raster
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PLY element or property: {0}")]
    UnsupportedElement(String),
    #[error("vertex index {index} out of range for {count} vertices")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("mesh is empty or degenerate")]
    EmptyMesh,
    #[error("every mesh vertex lies behind the camera")]
    BehindCamera,

    // template matching / hyperfeatures
    #[error("mask has no foreground at feature resolution")]
    EmptyMask,
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("template set is empty")]
    NoTemplates,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("need at least {needed} samples for PCA, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("feature layer {0} missing")]
    MissingLayer(u32),

    // correspondence / pose
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no correspondence lands on the template foreground")]
    NoValidCorrespondences,
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("no consensus: best inlier set has {0} points")]
    NoConsensus(usize),

    // metrics
    #[error("no error records to aggregate")]
    EmptyRecords,

    // configuration and dataset files
    #[error("config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable numeric code, used by the C ABI. Zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::NonPositiveDepth(_) => 1,
            Error::InvalidRotation(_) => 2,
            Error::InvalidIntrinsics(_) => 3,
            Error::BadMagic => 10,
            Error::VersionMismatch(_) => 11,
            Error::TruncatedFile { .. } => 12,
            Error::NonFiniteValue(_) => 13,
            Error::UnsupportedBitDepth(_) => 14,
            Error::DecodeError(_) => 15,
            Error::Io { .. } => 16,
            Error::MalformedHeader(_) => 20,
            Error::UnsupportedElement(_) => 21,
            Error::IndexOutOfRange { .. } => 22,
            Error::EmptyMesh => 23,
            Error::BehindCamera => 24,
            Error::EmptyMask => 30,
            Error::ZeroNorm => 31,
            Error::NoTemplates => 32,
            Error::DimMismatch(_) => 33,
            Error::InsufficientSamples { .. } => 34,
            Error::MissingLayer(_) => 35,
            Error::TooFewPoints { .. } => 40,
            Error::NoValidCorrespondences => 41,
            Error::DegenerateConfiguration => 42,
            Error::NoConsensus(_) => 43,
            Error::EmptyRecords => 50,
            Error::Config(_) => 60,
            Error::Parse(_) => 61,
        }
    }

    /// Short variant name, used in failure logs and structured failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth(_) => "NonPositiveDepth",
            Error::InvalidRotation(_) => "InvalidRotation",
            Error::InvalidIntrinsics(_) => "InvalidIntrinsics",
            Error::BadMagic => "BadMagic",
            Error::VersionMismatch(_) => "VersionMismatch",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::UnsupportedBitDepth(_) => "UnsupportedBitDepth",
            Error::DecodeError(_) => "DecodeError",
            Error::Io { .. } => "Io",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::UnsupportedElement(_) => "UnsupportedElement",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::EmptyMesh => "EmptyMesh",
            Error::BehindCamera => "BehindCamera",
            Error::EmptyMask => "EmptyMask",
            Error::ZeroNorm => "ZeroNorm",
            Error::NoTemplates => "NoTemplates",
            Error::DimMismatch(_) => "DimMismatch",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::MissingLayer(_) => "MissingLayer",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::NoValidCorrespondences => "NoValidCorrespondences",
            Error::DegenerateConfiguration => "DegenerateConfiguration",
            Error::NoConsensus(_) => "NoConsensus",
            Error::EmptyRecords => "EmptyRecords",
            Error::Config(_) => "Config",
            Error::Parse(_) => "Parse",
        }
    }
}
