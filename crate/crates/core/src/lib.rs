//! Forecasting benchmark toolkit.

pub mod data;
pub mod eval;
pub mod linear;
pub mod llm;
pub mod noise;
pub mod runner;
pub mod scalar;
pub mod series;
pub mod windowing;

pub use scalar::Scalar;

/// Double-precision series.
pub type Series = series::TimeSeries<f64>;
/// Single-precision series.
pub type Series32 = series::TimeSeries<f32>;
pub type LinearForecaster = eval::SingleShotLinear<f64>;
pub type LinearForecaster32 = eval::SingleShotLinear<f32>;
pub type FittedModel = linear::FittedLinearModel<f64>;
pub type FittedModel32 = linear::FittedLinearModel<f32>;
