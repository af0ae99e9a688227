//! Per-subject plant fitting by Nelder-Mead on calibration saccades.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::classify::{EventKind, EventSegment};
use crate::error::{Error, Result};
use crate::plant::{PlantParams, PARAM_COUNT};
use crate::signal::{GazeRecording, VelocityTrace};

use super::filter::{recording_noise, sample_measurement, OpkfFilter};
use super::model::{OpkfConfig, OpkfModel};
use super::nelder_mead::{nelder_mead, NmOptions};

/// Parameters adjusted per subject; the rest stay at the base values.
pub const FIT_PARAMS: [&str; 7] = [
    "Kse",
    "Klt",
    "Bag",
    "Bant",
    "tau_ag_act",
    "pulse_height_coeff",
    "pulse_width_coeff",
];

/// Fewest saccades a recording needs before it can be fitted.
pub const MIN_FIT_SACCADES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Simplex settings over the log-scaled parameters.
    pub nm: NmOptions,
    /// Leading share of saccades used for calibration.
    pub calibration_fraction: f64,
    /// Scored span around each saccade: from `before_ms` before onset to
    /// `after_ms` after its end.
    pub before_ms: usize,
    pub after_ms: usize,
    /// Unscored filter run-in before each span.
    pub warmup_ms: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            nm: NmOptions {
                max_evals: None,
                tol: 1e-6,
                initial_step: 0.1,
                relative_step: false,
            },
            calibration_fraction: 0.4,
            before_ms: 60,
            after_ms: 150,
            warmup_ms: 100,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::Config("calibration_fraction must lie in (0, 1)".into()));
        }
        if !(self.nm.tol > 0.0 && self.nm.initial_step > 0.0) {
            return Err(Error::Config("simplex tolerance and step must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one subject's fit, as kept in the parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub params: PlantParams,
    pub converged: bool,
    pub evaluations: usize,
    /// Mean forecast error on the calibration spans under `params` (dva).
    pub calibration_error: f64,
    /// The same error under the starting parameters.
    pub base_error: f64,
}

/// Subject id to fitted parameters.
pub type FitStore = BTreeMap<String, FitRecord>;

pub fn write_fit_store<W: Write>(store: &FitStore, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, store)?;
    Ok(())
}

pub fn read_fit_store<R: Read>(reader: R) -> Result<FitStore> {
    Ok(serde_json::from_reader(reader)?)
}

/// Saccade segments split into the calibration lead and the rest.
pub fn split_saccades(segs: &[EventSegment], calibration_fraction: f64) -> (Vec<EventSegment>, Vec<EventSegment>) {
    let sacc: Vec<EventSegment> = segs.iter().filter(|s| s.kind == EventKind::Saccade).copied().collect();
    let n_cal = ((sacc.len() as f64 * calibration_fraction).ceil() as usize).min(sacc.len());
    let rest = sacc[n_cal..].to_vec();
    let mut cal = sacc;
    cal.truncate(n_cal);
    (cal, rest)
}

/// Scored spans around `saccades`, clipped to the recording.
pub fn saccade_spans(saccades: &[EventSegment], n: usize, cfg: &FitConfig) -> Vec<Range<usize>> {
    saccades
        .iter()
        .map(|s| s.start_idx.saturating_sub(cfg.before_ms)..(s.end_idx + cfg.after_ms + 1).min(n))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Mean Euclidean forecast error over issue indices in `spans`, running a
/// fresh filter from `warmup_ms` before each span.
pub fn span_error(
    model: &OpkfModel,
    rec: &GazeRecording,
    vel: &VelocityTrace,
    spans: &[Range<usize>],
    warmup_ms: usize,
) -> Result<f64> {
    let pi = model.config().pi_ms;
    let (mut total, mut count) = (0.0, 0usize);
    for span in spans {
        let mut filter = OpkfFilter::new(model);
        for i in span.start.saturating_sub(warmup_ms)..span.end {
            let (m, speed) = sample_measurement(rec, vel, i);
            let forecast = filter.step(m, speed)?;
            if i < span.start {
                continue;
            }
            if let (Some(y), Some((tx, ty))) = (forecast, rec.position(i + pi)) {
                if rec.is_valid(i) {
                    total += (y[0] - tx).hypot(y[1] - ty);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData("no scorable samples in the fitting spans".into()));
    }
    Ok(total / count as f64)
}

fn with_fitted(base: &PlantParams, log_values: &[f64]) -> PlantParams {
    let mut v: [f64; PARAM_COUNT] = base.to_array();
    for (name, x) in FIT_PARAMS.iter().zip(log_values) {
        let i = PlantParams::index_of(name).expect("fit parameter name");
        v[i] = x.exp();
    }
    PlantParams::from_array(v)
}

/// Error of `params` on `spans`, `+inf` when the parameters are unusable.
fn params_error(
    params: &PlantParams,
    cfg: &OpkfConfig,
    r: [f64; 2],
    rec: &GazeRecording,
    vel: &VelocityTrace,
    spans: &[Range<usize>],
    warmup_ms: usize,
) -> f64 {
    let cfg = OpkfConfig { params: *params, ..cfg.clone() };
    OpkfModel::new(&cfg, r)
        .and_then(|m| span_error(&m, rec, vel, spans, warmup_ms))
        .unwrap_or(f64::INFINITY)
}

/// Minimises the calibration forecast error over the log-scaled
/// [`FIT_PARAMS`], starting from `base`.
pub fn fit_subject_params(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    segs: &[EventSegment],
    base: &PlantParams,
    cfg: &OpkfConfig,
    fit: &FitConfig,
) -> Result<FitRecord> {
    fit.validate()?;
    cfg.validate()?;
    vel.check_aligned(rec)?;
    let count = segs.iter().filter(|s| s.kind == EventKind::Saccade).count();
    if count < MIN_FIT_SACCADES {
        return Err(Error::InsufficientData(format!(
            "{count} saccades, need {MIN_FIT_SACCADES} to fit plant parameters"
        )));
    }
    let r = match cfg.r {
        Some(r) => r,
        None => recording_noise(rec, segs)?,
    };
    let (cal, _) = split_saccades(segs, fit.calibration_fraction);
    let spans = saccade_spans(&cal, rec.len(), fit);
    let x0: Vec<f64> = FIT_PARAMS
        .iter()
        .map(|n| base.to_array()[PlantParams::index_of(n).expect("fit parameter name")].ln())
        .collect();
    let objective = |x: &[f64]| params_error(&with_fitted(base, x), cfg, r, rec, vel, &spans, fit.warmup_ms);
    let base_error = objective(&x0);
    let res = nelder_mead(objective, &x0, &fit.nm).map_err(|e| match e {
        Error::OptimizerInit(m) => Error::FitFailure(format!("every starting simplex vertex is unstable: {m}")),
        other => other,
    })?;
    let params = with_fitted(base, &res.x);
    params.validate()?;
    if !res.f.is_finite() {
        return Err(Error::FitFailure("no finite calibration error found".into()));
    }
    tracing::debug!(subject = %rec.subject_id, evals = res.evals, error = res.f, "plant fit");
    Ok(FitRecord {
        params,
        converged: res.converged,
        evaluations: res.evals,
        calibration_error: res.f,
        base_error,
    })
}

/// Mean forecast error of `params` around the given saccades.
pub fn saccade_error(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    saccades: &[EventSegment],
    params: &PlantParams,
    cfg: &OpkfConfig,
    fit: &FitConfig,
    r: [f64; 2],
) -> Result<f64> {
    let spans = saccade_spans(saccades, rec.len(), fit);
    let cfg = OpkfConfig { params: *params, ..cfg.clone() };
    span_error(&OpkfModel::new(&cfg, r)?, rec, vel, &spans, fit.warmup_ms)
}
