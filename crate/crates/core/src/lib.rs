//! Gaze-position forecasting for 1000 Hz eye-tracking recordings.
//!
//! The crate covers the whole evaluation loop: ingesting and differentiating
//! gaze signals ([`signal`]), velocity-threshold event classification
//! ([`classify`]), a linear two-muscle oculomotor plant used both as a
//! synthetic-cohort generator and as filter dynamics ([`plant`]), the
//! plant-driven Kalman predictor with Nelder-Mead subject fitting ([`opkf`]),
//! an LSTM forecaster and extrapolation baselines ([`learned`]), subject-level
//! oculomotor features ([`features`]), error statistics ([`metrics`]) and a
//! stage-cached pipeline tying it together ([`pipeline`]).

pub mod classify;
pub mod error;
pub mod features;
pub mod learned;
pub mod metrics;
pub mod opkf;
pub mod pipeline;
pub mod plant;
pub mod prediction;
pub mod signal;

pub use error::{Error, ErrorClass, Result};

/// Samples per second accepted everywhere in the crate.
pub const SAMPLE_RATE_HZ: u32 = 1000;
