use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped by what the caller can do about them: `Config`-class
/// errors mean the request itself was malformed, `Data`-class errors mean an
/// input file or dataset was unusable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid conductance bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("uniform variate {0} outside the open interval (0, 1)")]
    UniformVariate(f64),

    #[error("conductance {g} outside bounds [{g_min}, {g_max}]")]
    OutOfBounds { g: f64, g_min: f64, g_max: f64 },

    #[error("evaluation axes differ ({left} vs {right} states)")]
    AxisMismatch { left: usize, right: usize },

    #[error("only {occupied} occupied bins; at least 2 are needed to fit a profile")]
    TooFewBins { occupied: usize },

    #[error("polynomial degree {degree} needs {} knots, profile has {knots}", degree + 1)]
    TooFewKnots { degree: usize, knots: usize },

    #[error("mean-profile pulse walk did not reach the opposite bound within {cap} pulses")]
    PulseCapExceeded { cap: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("run lists disagree on epoch count ({left} vs {right})")]
    EpochMismatch { left: usize, right: usize },

    #[error("{path}: {detail}")]
    DataFormat { path: String, detail: String },

    #[error("model document: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by unusable input data (as opposed to a
    /// malformed request). Used by callers that map errors to exit codes.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyDataset
                | Error::TooFewBins { .. }
                | Error::TooFewKnots { .. }
                | Error::DataFormat { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
