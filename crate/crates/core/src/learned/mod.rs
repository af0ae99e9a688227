//! Extrapolation baselines and the LSTM forecaster.

pub mod baseline;
pub mod lstm;
pub mod train;
pub mod windows;

use ndarray::Array3;

use crate::error::Result;
use crate::prediction::{PredictionRun, Predictor, PredictorInput};

pub use baseline::{baseline_predict, Baseline, BaselineKind};
pub use lstm::LstmModel;
pub use train::{lstm_train, EpochLoss, TrainConfig, TrainOutcome, WindowSet};
pub use windows::{make_windows, WindowSample, WINDOW_LEN};

/// Windows per inference batch.
const INFERENCE_BATCH: usize = 512;

/// Forecasts `position(t) + model(velocity window ending at t)`.
#[derive(Debug, Clone)]
pub struct LstmPredictor {
    pub model: LstmModel,
    /// Predict only at issue indices divisible by this.
    pub stride: usize,
}

impl Predictor for LstmPredictor {
    fn id(&self) -> &str {
        "lstm"
    }

    fn predict(&self, input: &PredictorInput<'_>, pi_ms: usize) -> Result<PredictionRun> {
        let (rec, vel) = (input.rec, input.vel);
        vel.check_aligned(rec)?;
        let mut run = PredictionRun::empty(self.id(), rec, pi_ms);
        let stride = self.stride.max(1);
        let issue: Vec<usize> = (0..rec.len())
            .step_by(stride)
            .filter(|&i| i + pi_ms < rec.len() && rec.is_valid(i + pi_ms) && windows::input_valid(rec, vel, i))
            .collect();
        for chunk in issue.chunks(INFERENCE_BATCH) {
            let mut x = Array3::zeros((WINDOW_LEN, chunk.len(), 2));
            for (col, &end) in chunk.iter().enumerate() {
                for (t, i) in (end + 1 - WINDOW_LEN..=end).enumerate() {
                    x[[t, col, 0]] = vel.vx[i];
                    x[[t, col, 1]] = vel.vy[i];
                }
            }
            let out = self.model.forward(x.view())?;
            for (col, &i) in chunk.iter().enumerate() {
                if let Some((px, py)) = rec.position(i) {
                    run.set(i, [px + out[[col, 0]], py + out[[col, 1]]]);
                }
            }
        }
        run.finalize(rec);
        Ok(run)
    }
}
