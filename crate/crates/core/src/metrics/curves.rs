use serde::{Deserialize, Serialize};

use crate::classify::{segment_index, EventKind, EventSegment};
use crate::error::{Error, Result};

use super::scoring::{cep_intervals, ErrorRecord, CEP_SAMPLES};
use super::stats::quantile_sorted;

/// Fraction of `errors` at or below each grid level.
pub fn cdf_curve(errors: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::InsufficientData("no errors for CDF".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|g| sorted.partition_point(|e| e <= g) as f64 / n)
        .collect())
}

/// `count` evenly spaced levels on `[0, max]`.
pub fn linear_grid(max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![max],
        _ => (0..count)
            .map(|k| max * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Position of `idx` within a segment, mapped to `[0, 1]`.
pub fn normalized_time(idx: usize, seg: &EventSegment) -> f64 {
    let len = seg.len();
    if len <= 1 {
        0.0
    } else {
        (idx - seg.start_idx) as f64 / (len - 1) as f64
    }
}

pub const PROGRESS_MIN_SACCADES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub median: f64,
}

/// Collects in-saccade errors by normalised saccade time across recordings.
#[derive(Debug, Clone)]
pub struct ProgressAccumulator {
    amplitude: (f64, f64),
    bins: Vec<Vec<f64>>,
    saccades: usize,
}

impl ProgressAccumulator {
    pub fn new(amplitude_lo: f64, amplitude_hi: f64, bins: usize) -> Self {
        ProgressAccumulator {
            amplitude: (amplitude_lo, amplitude_hi),
            bins: vec![Vec::new(); bins.max(1)],
            saccades: 0,
        }
    }

    pub fn add(&mut self, records: &[ErrorRecord], segs: &[EventSegment]) {
        let Some(n) = segs.last().map(|s| s.end_idx + 1) else {
            return;
        };
        let seg_of = segment_index(segs, n);
        let nb = self.bins.len();
        let mut seen = vec![false; segs.len()];
        for r in records {
            if r.sample_idx >= n {
                continue;
            }
            let k = seg_of[r.sample_idx];
            let seg = &segs[k];
            let Some(props) = seg.props.filter(|_| seg.kind == EventKind::Saccade) else {
                continue;
            };
            if !(self.amplitude.0..=self.amplitude.1).contains(&props.amplitude_dva) {
                continue;
            }
            let u = normalized_time(r.sample_idx, seg);
            let b = ((u * nb as f64) as usize).min(nb - 1);
            self.bins[b].push(r.error_dva);
            if !seen[k] {
                seen[k] = true;
                self.saccades += 1;
            }
        }
    }

    pub fn saccade_count(&self) -> usize {
        self.saccades
    }

    pub fn finish(self) -> Result<Vec<ProgressBin>> {
        if self.saccades < PROGRESS_MIN_SACCADES {
            return Err(Error::InsufficientData(format!(
                "{} qualifying saccades, need {}",
                self.saccades, PROGRESS_MIN_SACCADES
            )));
        }
        let nb = self.bins.len();
        Ok(self
            .bins
            .into_iter()
            .enumerate()
            .map(|(b, mut v)| {
                v.sort_by(f64::total_cmp);
                ProgressBin {
                    lo: b as f64 / nb as f64,
                    hi: (b + 1) as f64 / nb as f64,
                    count: v.len(),
                    median: if v.is_empty() { f64::NAN } else { quantile_sorted(&v, 0.5) },
                }
            })
            .collect())
    }
}

/// Per-bin median error over normalised time for saccades of amplitude
/// `[10, 20]` dva.
pub fn saccade_progress_curve(
    records: &[ErrorRecord],
    segs: &[EventSegment],
    bins: usize,
) -> Result<Vec<ProgressBin>> {
    let mut acc = ProgressAccumulator::new(10.0, 20.0, bins);
    acc.add(records, segs);
    acc.finish()
}

/// Collects post-saccade errors by ms since saccade end across recordings.
#[derive(Debug, Clone)]
pub struct CepAccumulator {
    by_offset: Vec<Vec<f64>>,
}

impl Default for CepAccumulator {
    fn default() -> Self {
        CepAccumulator {
            by_offset: vec![Vec::new(); CEP_SAMPLES],
        }
    }
}

impl CepAccumulator {
    pub fn add(&mut self, records: &[ErrorRecord], segs: &[EventSegment]) {
        let Some(n) = segs.last().map(|s| s.end_idx + 1) else {
            return;
        };
        let mut offset = vec![usize::MAX; n];
        for (a, b) in cep_intervals(segs) {
            for (k, slot) in offset[a..=b].iter_mut().enumerate() {
                *slot = k;
            }
        }
        for r in records {
            if let Some(&k) = offset.get(r.sample_idx).filter(|k| **k < CEP_SAMPLES) {
                self.by_offset[k].push(r.error_dva);
            }
        }
    }

    /// Rows `(ms_after_end, count, median)` for offsets with data.
    pub fn finish(self) -> Vec<(usize, usize, f64)> {
        self.by_offset
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, mut v)| {
                v.sort_by(f64::total_cmp);
                (k + 1, v.len(), quantile_sorted(&v, 0.5))
            })
            .collect()
    }
}

/// Median error per ms since saccade end, over all post-saccade windows.
/// Rows are `(ms_after_end, count, median)`.
pub fn cep_curve(records: &[ErrorRecord], segs: &[EventSegment]) -> Vec<(usize, usize, f64)> {
    let mut acc = CepAccumulator::default();
    acc.add(records, segs);
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{SaccadeClass, SaccadeProps};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_examples() {
        let c = cdf_curve(&[1.0, 2.0, 3.0], &[2.0, 0.5, 3.0]).unwrap();
        assert_eq!(c, vec![2.0 / 3.0, 0.0, 1.0]);
        assert!(cdf_curve(&[], &[1.0]).is_err());
    }

    #[test]
    fn cdf_matches_brute_force_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let errors: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..5.0)).collect();
        let grid = linear_grid(5.0, 100);
        let fast = cdf_curve(&errors, &grid).unwrap();
        for (g, f) in grid.iter().zip(&fast) {
            let count = errors.iter().filter(|e| *e <= g).count();
            assert_eq!(*f, count as f64 / errors.len() as f64);
        }
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_bounded(errors in prop::collection::vec(0.0f64..100.0, 1..200), mut grid in prop::collection::vec(-1.0f64..120.0, 1..50)) {
            grid.sort_by(f64::total_cmp);
            let c = cdf_curve(&errors, &grid).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for v in &c {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }

    fn saccade(a: usize, b: usize, amp: f64) -> EventSegment {
        EventSegment {
            kind: EventKind::Saccade,
            start_idx: a,
            end_idx: b,
            props: Some(SaccadeProps {
                amplitude_dva: amp,
                duration_ms: b - a + 1,
                peak_vel: 300.0,
                mean_vel: 150.0,
                sample_count: b - a + 1,
            }),
        }
    }

    fn rec(idx: usize, err: f64) -> ErrorRecord {
        ErrorRecord {
            issue_idx: idx.saturating_sub(40),
            sample_idx: idx,
            event_kind: EventKind::Saccade,
            saccade_class: SaccadeClass::Large,
            in_cep: false,
            error_dva: err,
        }
    }

    #[test]
    fn eleven_samples_normalise_in_tenths() {
        let s = saccade(20, 30, 12.0);
        let u: Vec<f64> = (20..=30).map(|i| normalized_time(i, &s)).collect();
        for (k, v) in u.iter().enumerate() {
            assert!((v - k as f64 / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_error_gives_flat_curve_and_needs_five_saccades() {
        let mut segs = Vec::new();
        let mut records = Vec::new();
        let mut t = 0;
        for k in 0..6 {
            segs.push(EventSegment {
                kind: EventKind::Fixation,
                start_idx: t,
                end_idx: t + 99,
                props: None,
            });
            t += 100;
            let len = 40 + k * 5;
            segs.push(saccade(t, t + len - 1, 15.0));
            records.extend((t..t + len).map(|i| rec(i, 0.7)));
            t += len;
        }
        let curve = saccade_progress_curve(&records, &segs, 10).unwrap();
        assert_eq!(curve.len(), 10);
        assert!(curve.iter().all(|b| b.median == 0.7));
        assert!(saccade_progress_curve(&records, &segs[..8], 10).is_err());
    }
}
