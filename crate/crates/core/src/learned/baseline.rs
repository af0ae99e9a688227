use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::prediction::{PredictionRun, Predictor, PredictorInput};
use crate::signal::{GazeRecording, VelocityTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// The eye stays where it is.
    ConstantPosition,
    /// The eye keeps its current velocity.
    ConstantVelocity,
}

impl BaselineKind {
    pub fn id(&self) -> &'static str {
        match self {
            BaselineKind::ConstantPosition => "constant_position",
            BaselineKind::ConstantVelocity => "constant_velocity",
        }
    }
}

/// Extrapolation from the current sample. `vel` must be causal for the
/// constant-velocity forecast to be a real prediction.
pub fn baseline_predict(
    kind: BaselineKind,
    rec: &GazeRecording,
    vel: &VelocityTrace,
    pi_ms: usize,
) -> Result<PredictionRun> {
    vel.check_aligned(rec)?;
    let mut run = PredictionRun::empty(kind.id(), rec, pi_ms);
    let horizon = pi_ms as f64 / 1000.0;
    for i in 0..rec.len() {
        let Some((x, y)) = rec.position(i) else {
            continue;
        };
        let p = match kind {
            BaselineKind::ConstantPosition => [x, y],
            BaselineKind::ConstantVelocity => [x + vel.vx[i] * horizon, y + vel.vy[i] * horizon],
        };
        run.set(i, p);
    }
    run.finalize(rec);
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Baseline(pub BaselineKind);

impl Predictor for Baseline {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn predict(&self, input: &PredictorInput<'_>, pi_ms: usize) -> Result<PredictionRun> {
        baseline_predict(self.0, input.rec, input.vel, pi_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{compute_velocity, DiffConfig, GazeSample};

    fn ramp(n: usize, slope_per_ms: f64) -> GazeRecording {
        let s = (0..n)
            .map(|i| GazeSample::new(i as i64, slope_per_ms * i as f64, 1.0))
            .collect();
        GazeRecording::new("r", "1", s, None).unwrap()
    }

    fn errors(run: &PredictionRun, rec: &GazeRecording) -> Vec<f64> {
        (0..rec.len())
            .filter(|&i| run.valid_mask[i])
            .map(|i| {
                let t = rec.position(i + run.pi_ms).unwrap();
                let p = run.predicted[i];
                (p[0] - t.0).hypot(p[1] - t.1)
            })
            .collect()
    }

    #[test]
    fn static_fixation_constant_position_is_exact() {
        let rec = ramp(300, 0.0);
        let vel = compute_velocity(&rec, &DiffConfig::causal()).unwrap();
        let run = baseline_predict(BaselineKind::ConstantPosition, &rec, &vel, 40).unwrap();
        assert_eq!(run.valid_count(), 260);
        assert!(errors(&run, &rec).iter().all(|e| *e == 0.0));
    }

    #[test]
    fn ramp_errors() {
        let rec = ramp(400, 0.01);
        let vel = compute_velocity(&rec, &DiffConfig::causal()).unwrap();
        let cv = baseline_predict(BaselineKind::ConstantVelocity, &rec, &vel, 40).unwrap();
        let e = errors(&cv, &rec);
        assert_eq!(e.len(), 400 - 40 - 6);
        assert!(e.iter().all(|e| *e < 1e-9));
        let cp = baseline_predict(BaselineKind::ConstantPosition, &rec, &vel, 40).unwrap();
        assert!(errors(&cp, &rec).iter().all(|e| (e - 0.4).abs() < 1e-9));
    }
}
