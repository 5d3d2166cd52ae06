use thiserror::Error;

/// Failure modes of the forecasting toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),
    #[error("degenerate reservoir: spectral radius {0:e} is below 1e-12")]
    DegenerateReservoir(f64),
    #[error("spectral radius did not converge for a {0}x{0} reservoir")]
    SpectralRadiusNotConverged(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite reservoir state at step {0}")]
    NonFiniteState(usize),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("insufficient history: need more than {needed} rows, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("non-finite forecast at step {0}")]
    NonFiniteForecast(usize),
    #[error("empty hyper-parameter grid")]
    EmptyGrid,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("insufficient data: need {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("at least two windows are required, got {0}")]
    TooFewWindows(usize),
    #[error("zero standard deviation at element {element}, step {step}")]
    ZeroSigma { element: usize, step: usize },
    #[error("interval level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("column {0} has zero variance")]
    ZeroVariance(usize),
    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("optimizer did not converge after {0} iterations")]
    NotConverged(usize),
    #[error("knot {0} has fewer than 3 stations in its local window")]
    InsufficientLocalData(usize),
    #[error("singular kriging system")]
    SingularKrigingSystem,
    #[error("integration diverged at step {0}")]
    Diverged(usize),
    #[error("fitted ARFIMA model is not stationary")]
    NonStationaryFit,
    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),
    #[error("district {0} contains no grid points")]
    EmptyDistrict(String),
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
