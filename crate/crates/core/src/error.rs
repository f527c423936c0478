use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate stay_id `{0}` in stay table")]
    DuplicateStay(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("unit mismatch for `{feature}`: event carries `{found}`, catalog expects `{expected}`")]
    UnitMismatch {
        feature: String,
        expected: String,
        found: String,
    },

    #[error("no reference range for feature `{0}`")]
    MissingReferenceRange(String),

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("feature index {index} out of range for model with {n_features} features")]
    FeatureIndex { index: usize, n_features: usize },

    #[error("every hyperparameter cell failed; first error: {0}")]
    AllCellsFailed(String),

    #[error("too few successful splits: {succeeded} of {required} required")]
    TooFewSplits { succeeded: usize, required: usize },

    #[error("bad timestamp `{0}`")]
    BadTimestamp(String),

    /// An error recorded by an earlier stage, carried forward verbatim.
    #[error("{0}")]
    Stage(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
