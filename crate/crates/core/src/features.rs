//! Per-subject oculomotor features and data-quality measures.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classify::{fixation_noise_threshold, EventKind, EventSegment, MIN_FIXATION_SAMPLES};
use crate::error::{Error, Result};
use crate::metrics::stats::median;
use crate::signal::{GazeRecording, VelocityTrace};

/// Fewest saccades for the saccade-velocity features.
pub const MIN_SACCADES: usize = 10;
/// Default largest centroid-to-target distance of a target-locked fixation (dva).
pub const TARGET_LOCK_DVA: f64 = 2.5;
/// A target-locked fixation starts at least this long after target onset (ms).
pub const TARGET_LOCK_DELAY_MS: i64 = 100;

/// How per-saccade velocities are collapsed for `mn_vel_r_md`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeanVelocityMode {
    /// Median across saccades of each saccade's mean radial velocity.
    #[default]
    MedianOfMeans,
    /// Mean across saccades of each saccade's median radial velocity.
    MeanOfMedians,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub mean_velocity_mode: MeanVelocityMode,
    pub target_lock_dva: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mean_velocity_mode: MeanVelocityMode::default(),
            target_lock_dva: TARGET_LOCK_DVA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub fix_noise_thr: Option<f64>,
    pub pk_vel_dur_ratio_r_md: Option<f64>,
    pub mn_vel_r_md: Option<f64>,
    pub accuracy_dva: Option<f64>,
    pub precision_dva: Option<f64>,
    pub saccade_count: usize,
    pub fixation_samples: usize,
}

impl SubjectFeatures {
    pub const COLUMNS: [&'static str; 5] = [
        "fix_noise_thr",
        "pk_vel_dur_ratio_r_md",
        "mn_vel_r_md",
        "accuracy_dva",
        "precision_dva",
    ];

    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "fix_noise_thr" => self.fix_noise_thr,
            "pk_vel_dur_ratio_r_md" => self.pk_vel_dur_ratio_r_md,
            "mn_vel_r_md" => self.mn_vel_r_md,
            "accuracy_dva" => self.accuracy_dva,
            "precision_dva" => self.precision_dva,
            _ => None,
        }
    }
}

fn saccades(segs: &[EventSegment]) -> Result<Vec<&EventSegment>> {
    let s: Vec<&EventSegment> = segs
        .iter()
        .filter(|s| s.kind == EventKind::Saccade && s.props.is_some())
        .collect();
    if s.len() < MIN_SACCADES {
        return Err(Error::InsufficientData(format!(
            "{} saccades, need {MIN_SACCADES}",
            s.len()
        )));
    }
    Ok(s)
}

/// Median over saccades of peak radial velocity per sample.
pub fn pk_vel_dur_ratio_r_md(segs: &[EventSegment]) -> Result<f64> {
    let ratios: Vec<f64> = saccades(segs)?
        .iter()
        .filter_map(|s| s.props)
        .map(|p| p.peak_vel / p.sample_count as f64)
        .collect();
    median(&ratios)
}

/// Median over saccades of mean radial velocity.
pub fn mn_vel_r_md(segs: &[EventSegment]) -> Result<f64> {
    let means: Vec<f64> = saccades(segs)?
        .iter()
        .filter_map(|s| s.props)
        .map(|p| p.mean_vel)
        .collect();
    median(&means)
}

/// Mean over saccades of each saccade's median radial velocity.
pub fn mn_vel_mean_of_medians(vel: &VelocityTrace, segs: &[EventSegment]) -> Result<f64> {
    let meds = saccades(segs)?
        .iter()
        .map(|s| {
            let v: Vec<f64> = vel.v_radial[s.start_idx..=s.end_idx]
                .iter()
                .copied()
                .filter(|v| v.is_finite())
                .collect();
            median(&v)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(meds.iter().sum::<f64>() / meds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataQuality {
    /// Absent when the recording has no targets or no target-locked fixation.
    pub accuracy_dva: Option<f64>,
    /// Absent when no two consecutive valid fixation samples exist.
    pub precision_dva: Option<f64>,
}

/// Accuracy as the mean centroid-to-target distance of target-locked
/// fixations; precision as RMS sample-to-sample displacement within
/// fixations.
pub fn data_quality(
    rec: &GazeRecording,
    segs: &[EventSegment],
    target_lock_dva: f64,
) -> Result<DataQuality> {
    let fixations = segs.iter().filter(|s| s.kind == EventKind::Fixation);

    let mut sq = 0.0;
    let mut pairs = 0usize;
    for s in fixations.clone() {
        for i in s.start_idx..s.end_idx {
            if let (Some(a), Some(b)) = (rec.position(i), rec.position(i + 1)) {
                sq += (b.0 - a.0).powi(2) + (b.1 - a.1).powi(2);
                pairs += 1;
            }
        }
    }
    let precision_dva = (pairs > 0).then(|| (sq / pairs as f64).sqrt());

    let accuracy_dva = rec.targets.as_ref().and_then(|targets| {
        let mut offsets = Vec::new();
        for s in fixations {
            let pts: Vec<(f64, f64)> = (s.start_idx..=s.end_idx).filter_map(|i| rec.position(i)).collect();
            if pts.is_empty() {
                continue;
            }
            let t_start = rec.samples[s.start_idx].t_ms;
            let k = targets.partition_point(|tp| tp.t_ms <= t_start);
            if k == 0 {
                continue;
            }
            let target = &targets[k - 1];
            if t_start - target.t_ms < TARGET_LOCK_DELAY_MS {
                continue;
            }
            let cx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let cy = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let d = (cx - target.x_dva).hypot(cy - target.y_dva);
            if d <= target_lock_dva {
                offsets.push(d);
            }
        }
        (!offsets.is_empty()).then(|| offsets.iter().sum::<f64>() / offsets.len() as f64)
    });

    Ok(DataQuality {
        accuracy_dva,
        precision_dva,
    })
}

/// Every feature that the data supports; the rest are left absent.
pub fn subject_features(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    segs: &[EventSegment],
    cfg: &FeatureConfig,
) -> Result<SubjectFeatures> {
    vel.check_aligned(rec)?;
    let optional = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let saccade_count = segs.iter().filter(|s| s.kind == EventKind::Saccade).count();
    let fixation_samples = segs
        .iter()
        .filter(|s| s.kind == EventKind::Fixation)
        .flat_map(|s| s.start_idx..=s.end_idx)
        .filter(|&i| rec.is_valid(i) && vel.is_valid(i))
        .count();
    let mn_vel = match cfg.mean_velocity_mode {
        MeanVelocityMode::MedianOfMeans => mn_vel_r_md(segs),
        MeanVelocityMode::MeanOfMedians => mn_vel_mean_of_medians(vel, segs),
    };
    let dq = data_quality(rec, segs, cfg.target_lock_dva)?;
    let fix_noise_thr = if fixation_samples >= MIN_FIXATION_SAMPLES {
        optional(fixation_noise_threshold(rec, vel, segs))?
    } else {
        None
    };
    Ok(SubjectFeatures {
        subject_id: rec.subject_id.clone(),
        fix_noise_thr,
        pk_vel_dur_ratio_r_md: optional(pk_vel_dur_ratio_r_md(segs))?,
        mn_vel_r_md: optional(mn_vel)?,
        accuracy_dva: dq.accuracy_dva,
        precision_dva: dq.precision_dva,
        saccade_count,
        fixation_samples,
    })
}

/// One row per subject; absent values are written as empty fields.
pub fn write_features_csv<W: Write>(rows: &[SubjectFeatures], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id"];
    header.extend(SubjectFeatures::COLUMNS);
    header.extend(["saccade_count", "fixation_samples"]);
    w.write_record(&header)?;
    for r in rows {
        w.serialize((
            &r.subject_id,
            r.fix_noise_thr,
            r.pk_vel_dur_ratio_r_md,
            r.mn_vel_r_md,
            r.accuracy_dva,
            r.precision_dva,
            r.saccade_count,
            r.fixation_samples,
        ))?;
    }
    w.flush().map_err(|e| Error::io("<features csv>", e))?;
    Ok(())
}

pub fn read_features_csv<R: std::io::Read>(reader: R) -> Result<Vec<SubjectFeatures>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (subject_id, a, b, c, d, e, saccade_count, fixation_samples): (
            String,
            Option<f64>,
            Option<f64>,
            Option<f64>,
            Option<f64>,
            Option<f64>,
            usize,
            usize,
        ) = row?;
        out.push(SubjectFeatures {
            subject_id,
            fix_noise_thr: a,
            pk_vel_dur_ratio_r_md: b,
            mn_vel_r_md: c,
            accuracy_dva: d,
            precision_dva: e,
            saccade_count,
            fixation_samples,
        });
    }
    Ok(out)
}
