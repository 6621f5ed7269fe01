use thiserror::Error;

/// Errors surfaced by the simulation and solver layers.
#[derive(Error, Debug)]
pub enum BdsdeError {
    #[error("invalid measure spec: {0}")]
    InvalidMeasure(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid driver setup: {0}")]
    InvalidDrivers(String),

    #[error("integrand tag mismatch: expected {expected} field for {context}")]
    TagMismatch {
        expected: &'static str,
        context: &'static str,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing integrand field for term `{0}`")]
    MissingTerm(&'static str),

    #[error("coefficient evaluation failed in `{0}`: {1}")]
    CoefficientEval(&'static str, String),

    #[error("unknown hypothesis label `{0}`")]
    UnknownHypothesis(String),

    #[error("hypothesis validation failed: {0} (rerun with force to override)")]
    HypothesisRejected(String),

    #[error("regression normal equations are singular; increase ridge or use exact_tree mode")]
    SingularRegression,

    #[error("enumeration would generate {0} paths, above the configured cap {1}")]
    EnumerationTooLarge(usize, usize),

    #[error("convolution search box too small: argmin stays on the box boundary after {0} enlargements")]
    SearchBoxExhausted(usize),

    #[error("drift ordering violated on the sample cloud: beta1 > beta2 at {0}")]
    DriftOrderViolated(String),

    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, BdsdeError>;
