use serde::{Deserialize, Serialize};

use crate::classify::{segment_index, EventKind, EventSegment, SaccadeClass};
use crate::error::{Error, Result};
use crate::prediction::PredictionRun;
use crate::signal::GazeRecording;

/// Length of the post-saccade evaluation window (samples).
pub const CEP_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// Euclidean distance in the (x, y) dva plane.
    #[default]
    Planar,
    /// Great-circle angle between the two gaze directions, treating x and y
    /// as azimuth and elevation.
    Angular,
}

impl ErrorMetric {
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            ErrorMetric::Planar => (a[0] - b[0]).hypot(a[1] - b[1]),
            ErrorMetric::Angular => {
                let dir = |p: [f64; 2]| {
                    let (az, el) = (p[0].to_radians(), p[1].to_radians());
                    [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()]
                };
                let (u, v) = (dir(a), dir(b));
                let cross = [
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ];
                let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
                let cos = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
                sin.atan2(cos).to_degrees()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub issue_idx: usize,
    /// Sample the prediction is for (`issue_idx + PI`).
    pub sample_idx: usize,
    pub event_kind: EventKind,
    pub saccade_class: SaccadeClass,
    /// Whether the target sample lies in a post-saccade window.
    pub in_cep: bool,
    pub error_dva: f64,
}

/// Event classes used in the reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Fixation,
    Cep,
    SmallSaccade,
    LargeSaccade,
    All,
}

impl EventClass {
    pub const ALL: [EventClass; 5] = [
        EventClass::Fixation,
        EventClass::Cep,
        EventClass::SmallSaccade,
        EventClass::LargeSaccade,
        EventClass::All,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EventClass::Fixation => "fixation",
            EventClass::Cep => "cep",
            EventClass::SmallSaccade => "small_saccade",
            EventClass::LargeSaccade => "large_saccade",
            EventClass::All => "all",
        }
    }

    pub fn contains(&self, r: &ErrorRecord) -> bool {
        match self {
            EventClass::Fixation => r.event_kind == EventKind::Fixation,
            EventClass::Cep => r.in_cep,
            EventClass::SmallSaccade => r.saccade_class == SaccadeClass::Small,
            EventClass::LargeSaccade => r.saccade_class == SaccadeClass::Large,
            EventClass::All => true,
        }
    }
}

pub fn errors_in(records: &[ErrorRecord], class: EventClass) -> Vec<f64> {
    records
        .iter()
        .filter(|r| class.contains(r))
        .map(|r| r.error_dva)
        .collect()
}

/// Post-saccade windows: `end + 1 ..= end + 100`, cut short by the next
/// saccade, a blink, or the end of the recording. Empty windows are omitted.
pub fn cep_intervals(segs: &[EventSegment]) -> Vec<(usize, usize)> {
    let Some(last) = segs.last() else {
        return Vec::new();
    };
    let n = last.end_idx + 1;
    let mut out = Vec::new();
    for (k, s) in segs.iter().enumerate() {
        if s.kind != EventKind::Saccade {
            continue;
        }
        let start = s.end_idx + 1;
        let mut stop = (s.end_idx + CEP_SAMPLES).min(n - 1);
        for next in &segs[k + 1..] {
            if next.start_idx > stop {
                break;
            }
            if matches!(next.kind, EventKind::Saccade | EventKind::Blink) {
                stop = next.start_idx.saturating_sub(1);
                break;
            }
        }
        if start <= stop && start < n {
            out.push((start, stop));
        }
    }
    out
}

pub fn cep_mask(segs: &[EventSegment], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for (a, b) in cep_intervals(segs) {
        for m in &mut mask[a..=b.min(n - 1)] {
            *m = true;
        }
    }
    mask
}

/// One record per unmasked prediction, attributed to the event at the
/// prediction's target time.
pub fn score_run(
    run: &PredictionRun,
    rec: &GazeRecording,
    segs: &[EventSegment],
    metric: ErrorMetric,
) -> Result<Vec<ErrorRecord>> {
    run.check_aligned(rec)?;
    let n = rec.len();
    if segs.last().map(|s| s.end_idx + 1) != Some(n) {
        return Err(Error::Alignment("segments do not tile the recording".into()));
    }
    let seg_of = segment_index(segs, n);
    let cep = cep_mask(segs, n);
    let mut out = Vec::with_capacity(run.valid_count());
    for (i, p) in run.predicted.iter().enumerate() {
        if !run.valid_mask[i] {
            continue;
        }
        let t = run.target_idx(i);
        let Some(truth) = (t < n).then(|| rec.position(t)).flatten() else {
            continue;
        };
        let seg = &segs[seg_of[t]];
        let error_dva = metric.distance(*p, [truth.0, truth.1]);
        if !error_dva.is_finite() {
            return Err(Error::Numerical(format!("non-finite error at sample {t}")));
        }
        out.push(ErrorRecord {
            issue_idx: i,
            sample_idx: t,
            event_kind: seg.kind,
            saccade_class: seg.saccade_class(),
            in_cep: cep[t],
            error_dva,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::SaccadeProps;
    use crate::signal::GazeSample;

    fn seg(kind: EventKind, a: usize, b: usize) -> EventSegment {
        let props = (kind == EventKind::Saccade).then_some(SaccadeProps {
            amplitude_dva: 12.0,
            duration_ms: b - a + 1,
            peak_vel: 400.0,
            mean_vel: 200.0,
            sample_count: b - a + 1,
        });
        EventSegment {
            kind,
            start_idx: a,
            end_idx: b,
            props,
        }
    }

    #[test]
    fn cep_full_truncated_and_boundary() {
        use EventKind::*;
        let segs = vec![seg(Fixation, 0, 449), seg(Saccade, 450, 500), seg(Fixation, 501, 899), seg(Saccade, 900, 950), seg(Fixation, 951, 999)];
        assert_eq!(cep_intervals(&segs), vec![(501, 600), (951, 999)]);

        let segs = vec![seg(Saccade, 0, 50), seg(Fixation, 51, 80), seg(Saccade, 81, 120), seg(Fixation, 121, 140)];
        let cep = cep_intervals(&segs);
        assert_eq!(cep[0], (51, 80));
        assert_eq!(cep[0].1 - cep[0].0 + 1, 30);
        assert_eq!(cep[1].1 - cep[1].0 + 1, 20);

        let segs = vec![seg(Saccade, 0, 50), seg(Fixation, 51, 60), seg(Blink, 61, 200)];
        assert_eq!(cep_intervals(&segs), vec![(51, 60)]);
    }

    fn recording(n: usize, pos: [f64; 2]) -> GazeRecording {
        let s = (0..n).map(|i| GazeSample::new(i as i64, pos[0], pos[1])).collect();
        GazeRecording::new("s", "1", s, None).unwrap()
    }

    #[test]
    fn exact_and_three_four_five() {
        let rec = recording(200, [3.0, 4.0]);
        let segs = vec![seg(EventKind::Fixation, 0, 199)];
        let mut run = PredictionRun::empty("p", &rec, 40);
        for i in 0..200 {
            run.set(i, [3.0, 4.0]);
        }
        run.finalize(&rec);
        let recs = score_run(&run, &rec, &segs, ErrorMetric::Planar).unwrap();
        assert_eq!(recs.len(), 160);
        assert!(recs.iter().all(|r| r.error_dva == 0.0));
        for i in 0..200 {
            run.set(i, [0.0, 0.0]);
        }
        run.finalize(&rec);
        let recs = score_run(&run, &rec, &segs, ErrorMetric::Planar).unwrap();
        assert!(recs.iter().all(|r| r.error_dva == 5.0));
    }

    #[test]
    fn attribution_uses_target_time() {
        let rec = recording(300, [0.0, 0.0]);
        let segs = vec![seg(EventKind::Fixation, 0, 99), seg(EventKind::Saccade, 100, 159), seg(EventKind::Fixation, 160, 299)];
        let mut run = PredictionRun::empty("p", &rec, 40);
        run.set(70, [0.0, 0.0]);
        run.finalize(&rec);
        let recs = score_run(&run, &rec, &segs, ErrorMetric::Planar).unwrap();
        assert_eq!(recs[0].sample_idx, 110);
        assert_eq!(recs[0].event_kind, EventKind::Saccade);
        assert_eq!(recs[0].saccade_class, SaccadeClass::Large);
        assert!(!recs[0].in_cep);
    }

    #[test]
    fn misaligned_run_rejected() {
        let rec = recording(100, [0.0, 0.0]);
        let other = recording(90, [0.0, 0.0]);
        let run = PredictionRun::empty("p", &other, 10);
        let segs = vec![seg(EventKind::Fixation, 0, 99)];
        assert!(matches!(score_run(&run, &rec, &segs, ErrorMetric::Planar), Err(Error::Alignment(_))));
    }

    #[test]
    fn angular_matches_planar_near_center() {
        let a = [0.3, -0.2];
        let b = [0.0, 0.1];
        let planar = ErrorMetric::Planar.distance(a, b);
        let ang = ErrorMetric::Angular.distance(a, b);
        assert!((planar - ang).abs() < 1e-4);
        assert!((ErrorMetric::Angular.distance([10.0, 0.0], [0.0, 0.0]) - 10.0).abs() < 1e-12);
    }
}
