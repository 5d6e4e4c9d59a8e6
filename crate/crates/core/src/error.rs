use thiserror::Error;

/// Errors raised by data handling, fitting and tuning.
#[derive(Debug, Error)]
pub enum PgeeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate observation for subject `{subject}` at time {time}")]
    DuplicateObservation { subject: String, time: f64 },

    #[error("non-numeric value `{value}` in column `{column}` (line {line})")]
    NonNumeric { column: String, value: String, line: usize },

    #[error("missing value in column `{column}` (line {line})")]
    MissingValue { column: String, line: usize },

    #[error("constant covariate column `{0}` cannot be standardized")]
    ConstantColumn(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("subject index {index} out of range for {n} subjects")]
    SubjectOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("correlation not estimable: every subject has a single observation")]
    CorrelationNotEstimable,

    #[error("working covariance is singular or not positive definite")]
    SingularCovariance,

    #[error("design singular: use a penalized fit")]
    DesignSingular,

    #[error("Newton matrix singular after jitter at iteration {0}")]
    SingularNewton(usize),

    #[error("coefficient {0} is exactly zero but not masked")]
    UnmaskedZero(usize),

    #[error("PGLS objective defined for gaussian only")]
    GaussianOnly,

    #[error("model too complex for QGCV correction (p_eff = {p_eff}, N_df = {n_df})")]
    TooComplex { p_eff: f64, n_df: f64 },

    #[error("no valid grid point on the cross-validation surface")]
    EmptySurface,

    #[error("{failed} of {total} bootstrap replicates failed to converge")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<PgeeError>,
    },
}

impl PgeeError {
    /// Whether the error comes from the numerics rather than from the input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::SingularCovariance
            | Self::DesignSingular
            | Self::SingularNewton(_)
            | Self::UnmaskedZero(_)
            | Self::CorrelationNotEstimable
            | Self::TooComplex { .. }
            | Self::EmptySurface
            | Self::BootstrapFailure { .. } => true,
            Self::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, PgeeError>;
