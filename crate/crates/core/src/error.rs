use thiserror::Error;

/// Errors produced anywhere in the positioning toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("emitter and detector coincide")]
    CoincidentPositions,

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("impulse response is empty or all zero")]
    EmptyResponse,

    #[error("impulse response has no diffuse energy")]
    NoDiffuseEnergy,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("fingerprint map is empty")]
    EmptyMap,

    #[error("cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("map file: unsupported format version {0}")]
    VersionMismatch(u32),

    #[error("map file truncated: {0}")]
    Truncated(String),

    #[error("map file checksum mismatch")]
    ChecksumMismatch,

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("rank-deficient regression design in section {section} ({samples} samples)")]
    RankDeficient { section: usize, samples: usize },

    #[error("point ({x}, {y}) lies outside every regression section")]
    OutsideSections { x: f64, y: f64 },

    #[error("point ({x}, {y}) lies on a section boundary; gradient undefined")]
    OnSectionBoundary { x: f64, y: f64 },

    #[error("degenerate constellation: nearest fingerprints coincide")]
    DegenerateConstellation,

    #[error("singular Fisher information matrix (condition number {condition:e})")]
    SingularFim { condition: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
