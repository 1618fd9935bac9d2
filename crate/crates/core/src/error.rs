use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("index {index} out of range (limit {limit}) for {what}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("coarse vertex {0} lies on the domain boundary and carries no trial function")]
    BoundaryVertex(usize),

    #[error("patch has no interior degrees of freedom")]
    EmptyPatch,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("source is incompatible with no-flux boundary: integral {integral:e}")]
    IncompatibleSource { integral: f64 },

    #[error("factorization failed in {context}: {detail}")]
    Factorization { context: String, detail: String },

    #[error("eigensolver failed on coarse cell {cell}: {detail}")]
    Eigen { cell: usize, detail: String },

    #[error("linear solve in {context} did not reach tolerance: residual {residual:e}")]
    Residual { context: String, residual: f64 },

    #[error("coupling matrix is rank deficient: rank {rank} of {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("problem too large for global verification: {dofs} dofs exceeds threshold {threshold}")]
    TooLarge { dofs: usize, threshold: usize },

    #[error("raster parse error at line {line}: {detail}")]
    RasterParse { line: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_phase(self, phase: &'static str) -> Error {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
