use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (valid up to {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("scanline {index} is outside the IMU coverage ({available} scanlines available)")]
    OutsideCoverage { index: usize, available: usize },

    #[error("degenerate ray: third component {0:e} is numerically zero")]
    DegenerateRay(f64),

    #[error("degenerate pair: both observations map to scanline {0}")]
    DegeneratePair(usize),

    #[error("need ≥ 6 correspondences (got {pairs} pairs giving {constraints} independent constraints, {needed} required)")]
    InsufficientCorrespondences {
        pairs: usize,
        constraints: isize,
        needed: usize,
    },

    #[error("degenerate track: normal matrix of depth column for observation {observation} is singular")]
    DegenerateTrack { observation: usize },

    #[error("rank deficient system: numerical rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },

    #[error("homogeneous solution lies at infinity (last component {0:e})")]
    SolutionAtInfinity(f64),

    #[error("normalization matrix is indefinite (smallest eigenvalue {0:e})")]
    IndefiniteNormalization(f64),

    #[error("cheirality violation: point behind camera for observation {observation}")]
    Cheirality { observation: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
