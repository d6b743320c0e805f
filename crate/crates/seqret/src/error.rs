use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty standardization input")]
    EmptyStandardizationInput,

    #[error("unknown field name `{0}` in layout")]
    UnknownField(String),

    #[error("factor `{factor}` has level `{level}` unseen in data")]
    UnseenFactorLevel { factor: String, level: String },

    #[error("non-finite value in design matrix at row {row}, column `{column}`")]
    NonFiniteDesign { row: usize, column: String },

    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("alternative {0} is never observed")]
    UnobservedAlternative(usize),

    #[error("design layout does not match model layout: {0}")]
    LayoutMismatch(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("marginal effects requested for indicator column `{0}`; only continuous columns are supported")]
    IndicatorMarginalEffect(String),

    #[error("no stage-2 model for bachelor {0} but non-single-cycle students observed")]
    MissingStageTwo(u8),

    #[error("pipeline unstable under resampling: {failed} of {total} replicates failed")]
    UnstableBootstrap { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("curriculum row for degree {0} has zero total credits")]
    ZeroCreditRow(String),

    #[error("need at least {need} careers, found {found}")]
    TooFewCareers { need: usize, found: usize },

    #[error("zero variance in returns vector")]
    ZeroVarianceReturns,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
