use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid waveform configuration: {0}")]
    InvalidWaveform(String),

    #[error("{what} angle {value} rad lies outside [0, pi)")]
    AngleOutOfRange { what: &'static str, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate {0} span (zero or negative width)")]
    DegenerateSpan(&'static str),

    #[error("query outside grid span: {0}")]
    OutOfSpan(String),

    #[error("regularized posterior matrix is numerically singular (condition estimate {0:.3e})")]
    SingularPosterior(f64),

    #[error("offset quadratic form has eigenvalue {0:.3e}, expected positive semidefinite")]
    IndefiniteOffsetForm(f64),

    #[error("geometry is not localizable: {0}")]
    NonLocalizable(String),

    #[error("nuisance Fisher block is singular (condition number {0:.3e})")]
    SingularFim(f64),

    #[error("sparsity level {k} exceeds the rank limit {limit}")]
    SparsityTooLarge { k: usize, limit: usize },

    #[error("MFOCUSS produced non-finite values at iteration {0}")]
    Diverged(usize),

    #[error("zero-norm reference matrix")]
    ZeroNorm,

    #[error("no matched estimate/truth pairs to score")]
    NoMatches,

    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed snapshot batch file: {0}")]
    BatchFormat(String),

    #[error("malformed grid file: {0}")]
    GridFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
