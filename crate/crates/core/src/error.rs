use thiserror::Error;

pub type Result<T, E = HssError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HssError {
    #[error("malformed cluster tree: {0}")]
    MalformedTree(String),

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("interpolative decomposition failed: rank {rank} with {samples} samples and oversampling {oversampling}")]
    IdFailed {
        rank: usize,
        samples: usize,
        oversampling: usize,
    },

    #[error("maximum sample count reached (d = {d}, d_max = {d_max}); {} node(s) not compressed", .partial.len())]
    MaxRankReached {
        d: usize,
        d_max: usize,
        /// Tree indices of the nodes left PARTIALLY_COMPRESSED.
        partial: Vec<usize>,
    },

    #[error("matrix of order {n} exceeds the dense materialization limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("sample block would exceed {limit} columns")]
    MaxColumns { limit: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("tail bounds do not apply to rank-one spectra")]
    RankOne,

    #[error("tau = {tau} outside the admissible range for the {side} tail")]
    BadTau { tau: f64, side: &'static str },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("HSS matrix is not fully compressed")]
    NotCompressed,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
