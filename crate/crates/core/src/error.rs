use thiserror::Error;

/// Errors produced by mesh construction, IO, operator assembly and solves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("field error: {0}")]
    Field(String),

    #[error("fields live on different surfaces")]
    SurfaceMismatch,

    #[error("solver error: {msg}")]
    Solver { msg: String, best_residuals: Vec<f64> },

    #[error(
        "band [{lo}, {hi}] not covered: largest computed eigenvalue {max_computed}; request more pairs"
    )]
    BandCoverage { lo: f64, hi: f64, max_computed: f64 },

    #[error("band multiplicity {observed} is below the required {required}")]
    BandMultiplicity { observed: usize, required: usize },

    #[error("geodesy error: {0}")]
    Geodesy(String),

    #[error("metric space error: {0}")]
    Metric(String),

    #[error("hypersurface error: {0}")]
    Hypersurface(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
