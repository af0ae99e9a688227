//! Oculomotor-plant Kalman filter forecaster.

pub mod filter;
pub mod fit;
pub mod kalman;
pub mod model;
pub mod nelder_mead;

pub use filter::{fit_saccade, opkf_predict_recording, recording_noise, OpkfFilter, OpkfPredictor, SaccadeFit, OPKF_ID};
pub use fit::{
    fit_subject_params, read_fit_store, saccade_error, split_saccades, write_fit_store, FitConfig, FitRecord,
    FitStore, FIT_PARAMS, MIN_FIT_SACCADES,
};
pub use kalman::{kf_predict, kf_update, Gaussian};
pub use model::{
    measurement_noise, opkf_step, AxisPlan, FixationDynamics, KalmanState, Measurement, OpkfConfig, OpkfModel,
    Regime,
};
pub use nelder_mead::{nelder_mead, NmOptions, NmResult};
