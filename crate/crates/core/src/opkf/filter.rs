//! Causal OPKF pass over a recording.

use std::ops::RangeInclusive;

use crate::classify::{classify_events, EventKind, EventSegment, OnlineClassifier};
use crate::error::Result;
use crate::features::{data_quality, TARGET_LOCK_DVA};
use crate::prediction::{PredictionRun, Predictor, PredictorInput};
use crate::signal::{compute_velocity, DiffConfig, GazeRecording, VelocityTrace};

use super::model::{
    measurement_noise, opkf_step, AxisPlan, KalmanState, Measurement, OpkfConfig, OpkfModel, Regime,
    MAX_AMPLITUDE_DVA,
};

/// Samples before the earliest candidate command onset that anchor the
/// starting position in the amplitude fit.
const PRE_ONSET_SAMPLES: usize = 5;
const WIDTH_ITERATIONS: usize = 4;

pub const OPKF_ID: &str = "opkf";

/// Per-axis least-squares fit of a saccade template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaccadeFit {
    pub command_idx: usize,
    pub theta0: [f64; 2],
    pub amplitude: [f64; 2],
    pub width_index: [usize; 2],
}

#[derive(Debug, Clone, Copy)]
struct Tracked {
    onset: usize,
    fit: SaccadeFit,
}

/// Fits `z = theta0 + a * r(j - c)` on one axis, iterating the pulse width
/// that depends on the amplitude. Returns `(theta0, a, width_index, sse)`.
fn fit_axis(
    model: &OpkfModel,
    samples: &[(usize, f64)],
    command: usize,
    start_amplitude: f64,
) -> (f64, f64, usize, f64) {
    let mut amp = start_amplitude;
    let mut width = model.width_index(amp);
    let mut theta0 = samples.first().map_or(0.0, |s| s.1);
    for _ in 0..WIDTH_ITERATIONS {
        let tmpl = model.template(width);
        let (mut n, mut sr, mut srr, mut sz, mut szr) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(j, z) in samples {
            let r = if j > command { tmpl.theta(j - command) } else { 0.0 };
            n += 1.0;
            sr += r;
            srr += r * r;
            sz += z;
            szr += z * r;
        }
        let det = n * srr - sr * sr;
        if det <= 1e-12 * n * n {
            theta0 = sz / n;
            amp = 0.0;
        } else {
            amp = (n * szr - sr * sz) / det;
            theta0 = (sz - amp * sr) / n;
        }
        amp = amp.clamp(-MAX_AMPLITUDE_DVA, MAX_AMPLITUDE_DVA);
        let next = model.width_index(amp);
        if next == width {
            break;
        }
        width = next;
    }
    let tmpl = model.template(width);
    let sse = samples
        .iter()
        .map(|&(j, z)| {
            let r = if j > command { tmpl.theta(j - command) } else { 0.0 };
            (z - theta0 - amp * r).powi(2)
        })
        .sum();
    (theta0, amp, width, sse)
}

/// Searches the command onset among `candidates` (clipped to
/// `[onset - max_shift, min(onset, now - 1)]`) for the best joint template
/// fit of both axes.
pub fn fit_saccade(
    model: &OpkfModel,
    history: &[Option<[f64; 2]>],
    onset: usize,
    now: usize,
    candidates: RangeInclusive<usize>,
    prev: Option<&SaccadeFit>,
) -> Option<SaccadeFit> {
    let shift = model.config().max_onset_shift_ms;
    let lo = onset.saturating_sub(shift + PRE_ONSET_SAMPLES);
    let axes: [Vec<(usize, f64)>; 2] = [0, 1].map(|a| {
        (lo..=now)
            .filter_map(|j| history.get(j).copied().flatten().map(|p| (j, p[a])))
            .collect()
    });
    if axes[0].len() < 3 {
        return None;
    }
    let first = axes[0][0].1;
    let last = axes[0][axes[0].len() - 1].1;
    let spans = [last - first, axes[1][axes[1].len() - 1].1 - axes[1][0].1];
    let mut best: Option<(f64, SaccadeFit)> = None;
    let hi = onset.min(now.saturating_sub(1)).min(*candidates.end());
    let lo_c = onset.saturating_sub(shift).max(*candidates.start());
    for c in (lo_c..=hi).rev() {
        let mut fit = SaccadeFit {
            command_idx: c,
            theta0: [0.0; 2],
            amplitude: [0.0; 2],
            width_index: [0; 2],
        };
        let mut total = 0.0;
        for a in 0..2 {
            let start = prev.map_or(spans[a], |p| p.amplitude[a]);
            let (t0, amp, w, sse) = fit_axis(model, &axes[a], c, start);
            fit.theta0[a] = t0;
            fit.amplitude[a] = amp;
            fit.width_index[a] = w;
            total += sse;
        }
        if best.as_ref().is_none_or(|(s, _)| total < *s) {
            best = Some((total, fit));
        }
    }
    best.map(|b| b.1)
}

/// Streaming filter: one call per sample, strictly causal.
pub struct OpkfFilter<'m> {
    model: &'m OpkfModel,
    classifier: OnlineClassifier,
    state: Option<KalmanState>,
    history: Vec<Option<[f64; 2]>>,
    tracked: Option<Tracked>,
}

impl<'m> OpkfFilter<'m> {
    pub fn new(model: &'m OpkfModel) -> Self {
        OpkfFilter {
            model,
            classifier: OnlineClassifier::new(model.config().classifier),
            state: None,
            history: Vec::new(),
            tracked: None,
        }
    }

    pub fn state(&self) -> Option<&KalmanState> {
        self.state.as_ref()
    }

    /// Feeds the next sample (`speed` is its causal radial velocity) and
    /// returns the forecast for `pi_ms` later, if the filter has started.
    pub fn step(&mut self, m: Measurement, speed: Option<f64>) -> Result<Option<[f64; 2]>> {
        let t = self.history.len();
        self.history.push(m.pos);
        let label = self.classifier.push(speed);
        let Some(state) = self.state else {
            return Ok(m.pos.map(|p| {
                self.state = Some(KalmanState::at_rest(
                    self.model.params(),
                    p,
                    self.model.config().initial_var,
                ));
                p
            }));
        };

        let mut fresh = false;
        match (label.kind, label.onset) {
            (EventKind::Saccade, Some(onset)) => {
                let same = self.tracked.filter(|tr| tr.onset == onset);
                fresh = same.is_none();
                let prev = same.map(|tr| tr.fit);
                // Full onset search on detection, local refinement after.
                let candidates = prev.map_or(0..=usize::MAX, |p| {
                    p.command_idx.saturating_sub(1)..=p.command_idx + 1
                });
                let fit = if m.pos.is_some() || prev.is_none() {
                    fit_saccade(self.model, &self.history, onset, t, candidates, prev.as_ref()).or(prev)
                } else {
                    prev
                };
                self.tracked = fit.map(|fit| Tracked { onset, fit });
            }
            _ => {
                if let Some(tr) = self.tracked {
                    let settle = (0..2)
                        .map(|a| self.model.template(tr.fit.width_index[a]).settle_k)
                        .max()
                        .unwrap_or(0);
                    // The fit is frozen once the saccade label ends.
                    if t - tr.fit.command_idx > settle {
                        self.tracked = None;
                    }
                }
            }
        }

        let regime = match &self.tracked {
            None => Regime::Fixation,
            Some(tr) => {
                let f = &tr.fit;
                Regime::Saccade([0, 1].map(|a| AxisPlan {
                    theta0: f.theta0[a],
                    amplitude: f.amplitude[a],
                    template: self.model.template(f.width_index[a]),
                    elapsed: t - f.command_idx,
                    fresh,
                }))
            }
        };
        let (next, ahead) = opkf_step(self.model, &state, &m, &regime)?;
        self.state = Some(next);
        Ok(Some(ahead))
    }
}

/// Measurement variances for a recording from its fixation precision.
pub fn recording_noise(rec: &GazeRecording, segs: &[EventSegment]) -> Result<[f64; 2]> {
    let q = data_quality(rec, segs, TARGET_LOCK_DVA)?;
    let weights = DiffConfig::causal().derivative_weights()?;
    Ok(measurement_noise(q.precision_dva.unwrap_or(0.0), &weights, f64::from(rec.rate_hz)))
}

/// Causal forecast of every sample `cfg.pi_ms` ahead.
pub fn opkf_predict_recording(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    segs: &[EventSegment],
    cfg: &OpkfConfig,
) -> Result<PredictionRun> {
    vel.check_aligned(rec)?;
    let r = match cfg.r {
        Some(r) => r,
        None => recording_noise(rec, segs)?,
    };
    let model = OpkfModel::new(cfg, r)?;
    predict_with_model(&model, rec, vel, 0..rec.len())
}

pub(crate) fn sample_measurement(rec: &GazeRecording, vel: &VelocityTrace, i: usize) -> (Measurement, Option<f64>) {
    let pos = rec.position(i).map(|(x, y)| [x, y]);
    let valid_vel = vel.is_valid(i);
    let m = Measurement {
        pos,
        vel: valid_vel.then(|| [vel.vx[i], vel.vy[i]]),
    };
    (m, valid_vel.then(|| vel.v_radial[i]))
}

/// Runs a fresh filter over `range` and forecasts for each issue index in it.
pub(crate) fn predict_with_model(
    model: &OpkfModel,
    rec: &GazeRecording,
    vel: &VelocityTrace,
    range: std::ops::Range<usize>,
) -> Result<PredictionRun> {
    let mut run = PredictionRun::empty(OPKF_ID, rec, model.config().pi_ms);
    let mut filter = OpkfFilter::new(model);
    for i in range {
        let (m, speed) = sample_measurement(rec, vel, i);
        if let Some(y) = filter.step(m, speed)? {
            run.set(i, y);
        }
    }
    run.finalize(rec);
    Ok(run)
}

/// OPKF behind the common predictor interface. Without explicit measurement
/// variances, the recording is classified offline to measure its fixation
/// precision.
#[derive(Debug, Clone)]
pub struct OpkfPredictor {
    pub cfg: OpkfConfig,
}

impl Predictor for OpkfPredictor {
    fn id(&self) -> &str {
        OPKF_ID
    }

    fn predict(&self, input: &PredictorInput<'_>, pi_ms: usize) -> Result<PredictionRun> {
        let cfg = OpkfConfig { pi_ms, ..self.cfg.clone() };
        let r = match cfg.r {
            Some(r) => r,
            None => {
                let centered = compute_velocity(input.rec, &DiffConfig::default())?;
                let segs = classify_events(input.rec, &centered, &cfg.classifier)?;
                recording_noise(input.rec, &segs)?
            }
        };
        let model = OpkfModel::new(&cfg, r)?;
        predict_with_model(&model, input.rec, input.vel, 0..input.rec.len())
    }
}
