pub mod baselines;
pub mod benchmark;
pub mod calibration;
pub mod dependence;
pub mod exposure;
pub mod error;
pub mod forecasting;
pub mod linalg;
pub mod lorenz96;
pub mod optim;
pub mod reservoir;
pub mod scalar;
pub mod scoring;
pub mod seed;
pub mod spatial;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Reservoir hyper-parameters in `f64`.
pub type Hyper = reservoir::HyperParams<f64>;
pub type Ensemble = forecasting::ForecastEnsemble<f64>;
pub type Forecaster = forecasting::EnsembleForecaster<f64>;
pub type Calibration = calibration::CalibrationModel<f64>;
pub type Dependence = dependence::DependenceModel<f64>;
pub type Spatial = spatial::SpatialModel<f64>;
pub type Field = spatial::InterpolatedField<f64>;
pub type Lorenz96 = lorenz96::Lorenz96Config<f64>;
