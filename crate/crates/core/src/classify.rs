//! Velocity-threshold event classification.
//!
//! Offline classification seeds saccades at runs above `peak_threshold` and
//! grows each seed in both directions while the radial velocity stays at or
//! above `onset_offset_threshold`. [`OnlineClassifier`] is the zero-lookahead
//! variant used to pick the Kalman regime while streaming.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::stats::quantile;
use crate::signal::{GazeRecording, VelocityTrace};

/// Saccades at or above this amplitude count as large.
pub const LARGE_SACCADE_DVA: f64 = 10.0;

/// Fixation samples needed before a noise threshold is reported.
pub const MIN_FIXATION_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fixation,
    Saccade,
    Blink,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaccadeProps {
    pub amplitude_dva: f64,
    pub duration_ms: usize,
    pub peak_vel: f64,
    pub mean_vel: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaccadeClass {
    Small,
    Large,
    None,
}

impl SaccadeProps {
    pub fn class(&self) -> SaccadeClass {
        if self.amplitude_dva >= LARGE_SACCADE_DVA {
            SaccadeClass::Large
        } else {
            SaccadeClass::Small
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSegment {
    pub kind: EventKind,
    pub start_idx: usize,
    pub end_idx: usize,
    pub props: Option<SaccadeProps>,
}

impl EventSegment {
    pub fn len(&self) -> usize {
        self.end_idx - self.start_idx + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, idx: usize) -> bool {
        (self.start_idx..=self.end_idx).contains(&idx)
    }

    pub fn saccade_class(&self) -> SaccadeClass {
        self.props.map_or(SaccadeClass::None, |p| p.class())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub peak_threshold: f64,
    pub onset_offset_threshold: f64,
    pub min_saccade_ms: usize,
    pub min_fixation_ms: usize,
    pub max_saccade_ms: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            peak_threshold: 100.0,
            onset_offset_threshold: 20.0,
            min_saccade_ms: 6,
            min_fixation_ms: 40,
            max_saccade_ms: 150,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_threshold > self.onset_offset_threshold && self.onset_offset_threshold > 0.0)
        {
            return Err(Error::Config(format!(
                "need peak_threshold > onset_offset_threshold > 0, got {} / {}",
                self.peak_threshold, self.onset_offset_threshold
            )));
        }
        if self.min_saccade_ms > self.max_saccade_ms {
            return Err(Error::Config("min_saccade_ms exceeds max_saccade_ms".into()));
        }
        Ok(())
    }
}

pub fn classify_events(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    cfg: &ClassifierConfig,
) -> Result<Vec<EventSegment>> {
    cfg.validate()?;
    vel.check_aligned(rec)?;
    let n = rec.len();
    let mut labels: Vec<Option<EventKind>> = rec
        .samples
        .iter()
        .map(|s| (!s.valid).then_some(EventKind::Blink))
        .collect();

    let v = &vel.v_radial;
    let at_least = |i: usize, thr: f64| v[i].is_finite() && v[i] >= thr;

    let mut i = 0;
    while i < n {
        if !(v[i].is_finite() && v[i] > cfg.peak_threshold) || labels[i].is_some() {
            i += 1;
            continue;
        }
        let mut start = i;
        while start > 0 && labels[start - 1].is_none() && at_least(start - 1, cfg.onset_offset_threshold)
        {
            start -= 1;
        }
        let mut end = i;
        while end + 1 < n && at_least(end + 1, cfg.onset_offset_threshold) {
            end += 1;
        }
        let len = end - start + 1;
        let kind = if (cfg.min_saccade_ms..=cfg.max_saccade_ms).contains(&len) {
            EventKind::Saccade
        } else {
            EventKind::Other
        };
        for l in &mut labels[start..=end] {
            *l = Some(kind);
        }
        i = end + 1;
    }

    // Leftover valid spans become fixations when long enough.
    let mut i = 0;
    while i < n {
        if labels[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && labels[i].is_none() {
            i += 1;
        }
        let kind = if i - start >= cfg.min_fixation_ms {
            EventKind::Fixation
        } else {
            EventKind::Other
        };
        for l in &mut labels[start..i] {
            *l = Some(kind);
        }
    }

    let labels: Vec<EventKind> = labels.into_iter().map(|l| l.expect("all labelled")).collect();
    Ok(segments_from_labels(rec, vel, &labels, true))
}

/// Collapses per-sample labels into tiling segments (runs of equal kind).
pub fn segments_from_labels(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    labels: &[EventKind],
    with_props: bool,
) -> Vec<EventSegment> {
    let mut segs = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            let kind = labels[start];
            let props = if with_props && kind == EventKind::Saccade {
                Some(saccade_props(rec, vel, start, i - 1))
            } else {
                None
            };
            segs.push(EventSegment {
                kind,
                start_idx: start,
                end_idx: i - 1,
                props,
            });
            start = i;
        }
    }
    segs
}

pub fn saccade_props(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    start: usize,
    end: usize,
) -> SaccadeProps {
    let amplitude_dva = match (rec.position(start), rec.position(end)) {
        (Some(a), Some(b)) => (b.0 - a.0).hypot(b.1 - a.1),
        _ => 0.0,
    };
    let speeds: Vec<f64> = vel.v_radial[start..=end]
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let peak_vel = speeds.iter().copied().fold(0.0, f64::max);
    let mean_vel = if speeds.is_empty() {
        0.0
    } else {
        speeds.iter().sum::<f64>() / speeds.len() as f64
    };
    let sample_count = end - start + 1;
    SaccadeProps {
        amplitude_dva,
        duration_ms: sample_count,
        peak_vel,
        mean_vel,
        sample_count,
    }
}

/// Per-sample kinds from a tiling segment list.
pub fn labels_from_segments(segs: &[EventSegment], n: usize) -> Vec<EventKind> {
    let mut labels = vec![EventKind::Other; n];
    for s in segs {
        for l in &mut labels[s.start_idx..=s.end_idx.min(n.saturating_sub(1))] {
            *l = s.kind;
        }
    }
    labels
}

/// Index of the segment containing each sample.
pub fn segment_index(segs: &[EventSegment], n: usize) -> Vec<usize> {
    let mut idx = vec![usize::MAX; n];
    for (k, s) in segs.iter().enumerate() {
        for slot in &mut idx[s.start_idx..=s.end_idx.min(n.saturating_sub(1))] {
            *slot = k;
        }
    }
    idx
}

/// 90th percentile of fixation radial velocity (FixNoiseThr).
pub fn fixation_noise_threshold(
    rec: &GazeRecording,
    vel: &VelocityTrace,
    segs: &[EventSegment],
) -> Result<f64> {
    vel.check_aligned(rec)?;
    let speeds: Vec<f64> = segs
        .iter()
        .filter(|s| s.kind == EventKind::Fixation)
        .flat_map(|s| s.start_idx..=s.end_idx)
        .filter(|&i| rec.is_valid(i) && vel.is_valid(i))
        .map(|i| vel.v_radial[i])
        .collect();
    if speeds.len() < MIN_FIXATION_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} fixation samples, need {}",
            speeds.len(),
            MIN_FIXATION_SAMPLES
        )));
    }
    quantile(&speeds, 0.9)
}

/// Causal event labelling: each call sees one new sample and never revisits
/// earlier decisions.
#[derive(Debug, Clone)]
pub struct OnlineClassifier {
    cfg: ClassifierConfig,
    next_idx: usize,
    in_saccade: bool,
    onset: usize,
    quiet_from: usize,
    exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OnlineLabel {
    pub kind: EventKind,
    /// Backtracked onset of the ongoing saccade.
    pub onset: Option<usize>,
}

impl OnlineClassifier {
    pub fn new(cfg: ClassifierConfig) -> Self {
        OnlineClassifier {
            cfg,
            next_idx: 0,
            in_saccade: false,
            onset: 0,
            quiet_from: 0,
            exhausted: false,
        }
    }

    /// Feeds the causal radial speed of the next sample (`None` when invalid).
    pub fn push(&mut self, speed: Option<f64>) -> OnlineLabel {
        let i = self.next_idx;
        self.next_idx += 1;
        let Some(v) = speed.filter(|v| v.is_finite()) else {
            self.in_saccade = false;
            self.exhausted = false;
            self.quiet_from = i + 1;
            return OnlineLabel {
                kind: EventKind::Blink,
                onset: None,
            };
        };
        if v < self.cfg.onset_offset_threshold {
            self.in_saccade = false;
            self.exhausted = false;
            self.quiet_from = i + 1;
        } else if self.in_saccade {
            if i + 1 - self.onset > self.cfg.max_saccade_ms {
                self.in_saccade = false;
                self.exhausted = true;
            }
        } else if !self.exhausted && v > self.cfg.peak_threshold {
            self.in_saccade = true;
            self.onset = self.quiet_from;
        }
        if self.in_saccade {
            OnlineLabel {
                kind: EventKind::Saccade,
                onset: Some(self.onset),
            }
        } else {
            OnlineLabel {
                kind: EventKind::Fixation,
                onset: None,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::GazeSample;
    use proptest::prelude::*;

    fn still(n: usize) -> GazeRecording {
        let samples = (0..n).map(|i| GazeSample::new(i as i64, 0.0, 0.0)).collect();
        GazeRecording::new("s", "1", samples, None).unwrap()
    }

    fn trace(v: Vec<f64>) -> VelocityTrace {
        VelocityTrace {
            vx: v.clone(),
            vy: vec![0.0; v.len()],
            v_radial: v.iter().map(|x| x.abs()).collect(),
        }
    }

    fn assert_tiles(segs: &[EventSegment], n: usize) {
        assert_eq!(segs[0].start_idx, 0);
        assert_eq!(segs.last().unwrap().end_idx, n - 1);
        for w in segs.windows(2) {
            assert_eq!(w[0].end_idx + 1, w[1].start_idx);
        }
        for s in segs {
            assert_eq!(s.props.is_some(), s.kind == EventKind::Saccade);
        }
    }

    #[test]
    fn zero_velocity_is_one_fixation() {
        let rec = still(500);
        let segs = classify_events(&rec, &trace(vec![0.0; 500]), &ClassifierConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].kind, EventKind::Fixation);
        assert_eq!((segs[0].start_idx, segs[0].end_idx), (0, 499));
    }

    #[test]
    fn blink_block_splits_fixation() {
        let mut rec = still(300);
        for i in 100..150 {
            rec.samples[i] = GazeSample::invalid(i as i64);
        }
        let mut v = vec![0.0; 300];
        for x in &mut v[100..150] {
            *x = f64::NAN;
        }
        let segs = classify_events(&rec, &trace(v), &ClassifierConfig::default()).unwrap();
        let kinds: Vec<_> = segs.iter().map(|s| (s.kind, s.start_idx, s.end_idx)).collect();
        assert_eq!(
            kinds,
            vec![
                (EventKind::Fixation, 0, 99),
                (EventKind::Blink, 100, 149),
                (EventKind::Fixation, 150, 299)
            ]
        );
    }

    #[test]
    fn seed_expands_to_onset_threshold() {
        let rec = still(200);
        let mut v = vec![5.0; 200];
        for (k, x) in v[90..110].iter_mut().enumerate() {
            *x = if (5..15).contains(&k) { 300.0 } else { 50.0 };
        }
        let segs = classify_events(&rec, &trace(v), &ClassifierConfig::default()).unwrap();
        let sac: Vec<_> = segs.iter().filter(|s| s.kind == EventKind::Saccade).collect();
        assert_eq!(sac.len(), 1);
        assert_eq!((sac[0].start_idx, sac[0].end_idx), (90, 109));
        let p = sac[0].props.unwrap();
        assert_eq!(p.peak_vel, 300.0);
        assert_eq!(p.sample_count, 20);
        assert_eq!(p.duration_ms, 20);
        assert!(p.peak_vel >= p.mean_vel && p.mean_vel > 0.0);
    }

    #[test]
    fn short_and_long_bursts_become_other() {
        let rec = still(600);
        let mut v = vec![0.0; 600];
        for x in &mut v[50..53] {
            *x = 200.0;
        }
        for x in &mut v[200..400] {
            *x = 200.0;
        }
        let segs = classify_events(&rec, &trace(v), &ClassifierConfig::default()).unwrap();
        assert!(segs.iter().all(|s| s.kind != EventKind::Saccade));
        assert!(segs.iter().any(|s| s.kind == EventKind::Other && s.start_idx == 200));
    }

    #[test]
    fn misaligned_trace_rejected() {
        let rec = still(10);
        assert!(matches!(
            classify_events(&rec, &trace(vec![0.0; 9]), &ClassifierConfig::default()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn noise_threshold_cases() {
        let rec = still(100);
        let segs = vec![EventSegment {
            kind: EventKind::Fixation,
            start_idx: 0,
            end_idx: 99,
            props: None,
        }];
        let v = trace(vec![0.5; 100]);
        assert_eq!(fixation_noise_threshold(&rec, &v, &segs).unwrap(), 0.5);
        let v = trace((1..=100).map(f64::from).collect());
        // rank 0.9 * 99 = 89.1 -> 90 + 0.1 * (91 - 90)
        assert!((fixation_noise_threshold(&rec, &v, &segs).unwrap() - 90.1).abs() < 1e-12);
        let short = vec![EventSegment {
            kind: EventKind::Fixation,
            start_idx: 0,
            end_idx: 49,
            props: None,
        }];
        assert!(matches!(
            fixation_noise_threshold(&rec, &v, &short),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn online_classifier_backtracks_onset_without_lookahead() {
        let mut oc = OnlineClassifier::new(ClassifierConfig::default());
        let speeds = [5.0, 5.0, 30.0, 60.0, 150.0, 200.0, 80.0, 25.0, 10.0, 5.0];
        let labels: Vec<_> = speeds.iter().map(|&v| oc.push(Some(v))).collect();
        assert_eq!(labels[3].kind, EventKind::Fixation);
        assert_eq!(labels[4].kind, EventKind::Saccade);
        assert_eq!(labels[4].onset, Some(2));
        assert_eq!(labels[7].kind, EventKind::Saccade);
        assert_eq!(labels[8].kind, EventKind::Fixation);
        assert_eq!(oc.push(None).kind, EventKind::Blink);
    }

    proptest! {
        #[test]
        fn segments_always_tile(
            speeds in prop::collection::vec(prop_oneof![
                3 => 0.0f64..30.0,
                2 => 30.0f64..400.0,
                1 => Just(f64::NAN),
            ], 1..400)
        ) {
            let n = speeds.len();
            let mut rec = still(n);
            for (i, v) in speeds.iter().enumerate() {
                if v.is_nan() && i % 3 == 0 {
                    rec.samples[i] = GazeSample::invalid(i as i64);
                }
            }
            let segs = classify_events(&rec, &trace(speeds), &ClassifierConfig::default()).unwrap();
            assert_tiles(&segs, n);
            for s in &segs {
                for i in s.start_idx..=s.end_idx {
                    prop_assert_eq!(s.kind == EventKind::Blink, !rec.samples[i].valid);
                }
            }
        }

        #[test]
        fn higher_peak_threshold_never_adds_saccades(
            speeds in prop::collection::vec(prop_oneof![3 => 0.0f64..30.0, 2 => 30.0f64..400.0], 50..400),
            lo in 50.0f64..200.0,
            bump in 0.0f64..150.0,
        ) {
            let n = speeds.len();
            let rec = still(n);
            let tr = trace(speeds);
            let count = |peak: f64| {
                let cfg = ClassifierConfig { peak_threshold: peak, ..ClassifierConfig::default() };
                classify_events(&rec, &tr, &cfg).unwrap().iter().filter(|s| s.kind == EventKind::Saccade).count()
            };
            prop_assert!(count(lo + bump) <= count(lo));
        }
    }
}
