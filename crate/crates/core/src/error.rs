use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {reason}")]
    InvalidModel { reason: String },

    #[error("invalid sequence: {reason}")]
    InvalidSequence { reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The label constraints carry zero prior probability under the chain.
    #[error("label constraints have zero probability under the transition model (step {step})")]
    ZeroLabelMass { step: usize },

    #[error("observation has zero likelihood under every admissible state (step {step})")]
    ZeroLikelihood { step: usize },

    #[error("no admissible state path has positive probability")]
    NoAdmissiblePath,

    #[error("enumeration too large: {paths} paths exceed the cap of {cap}")]
    TooLarge { paths: f64, cap: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("every training sequence has zero likelihood")]
    AllSequencesZeroLikelihood,

    #[error("all {restarts} initialization restarts failed")]
    InitFailed { restarts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A state received zero posterior weight and no fallback parameters were given.
    #[error("state {state} has zero posterior weight")]
    StarvedState { state: usize },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numeric failures (as opposed to malformed input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ZeroLabelMass { .. }
                | Error::ZeroLikelihood { .. }
                | Error::NoAdmissiblePath
                | Error::AllSequencesZeroLikelihood
                | Error::InitFailed { .. }
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel { .. } => "InvalidModel",
            Error::InvalidSequence { .. } => "InvalidSequence",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroLabelMass { .. } => "ZeroLabelMass",
            Error::ZeroLikelihood { .. } => "ZeroLikelihood",
            Error::NoAdmissiblePath => "NoAdmissiblePath",
            Error::TooLarge { .. } => "TooLarge",
            Error::EmptyInput(_) => "EmptyInput",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::AllSequencesZeroLikelihood => "AllSequencesZeroLikelihood",
            Error::InitFailed { .. } => "InitFailed",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::StarvedState { .. } => "StarvedState",
            Error::Optimizer(_) => "Optimizer",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
