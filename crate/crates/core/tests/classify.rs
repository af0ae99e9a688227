use gazecast::classify::{classify_events, fixation_noise_threshold, ClassifierConfig, EventKind, EventSegment};
use gazecast::plant::{generate_cohort, generate_subject, simulate_saccade_2d, ParamSampler, PlantParams, SynthConfig};
use gazecast::signal::{compute_velocity, DiffConfig, GazeRecording, GazeSample};

fn saccades(segs: &[EventSegment]) -> Vec<(usize, usize)> {
    segs.iter()
        .filter(|s| s.kind == EventKind::Saccade)
        .map(|s| (s.start_idx, s.end_idx))
        .collect()
}

#[test]
fn single_saccade_boundaries_match_plant_velocity() {
    let p = PlantParams::default();
    let lead = 300;
    let states = simulate_saccade_2d(&p, [-4.0, 1.0], [4.0, 7.0], 1.0, 500).unwrap();
    let mut samples: Vec<GazeSample> = (0..lead).map(|i| GazeSample::new(i as i64, -4.0, 1.0)).collect();
    samples.extend(
        states
            .iter()
            .enumerate()
            .map(|(k, s)| GazeSample::new((lead + k) as i64, s[0].theta, s[1].theta)),
    );
    let rec = GazeRecording::new("one", "1", samples, None).unwrap();

    // Ground truth from the plant's own angular velocity.
    let speed: Vec<f64> = states.iter().map(|s| s[0].omega.hypot(s[1].omega)).collect();
    let on = lead + speed.iter().position(|v| *v >= 20.0).unwrap();
    let off = lead + speed.iter().rposition(|v| *v >= 20.0).unwrap();

    let vel = compute_velocity(&rec, &DiffConfig::default()).unwrap();
    let segs = classify_events(&rec, &vel, &ClassifierConfig::default()).unwrap();
    let found = saccades(&segs);
    assert_eq!(found.len(), 1, "{segs:?}");
    let (a, b) = found[0];
    assert!(a.abs_diff(on) <= 4 && b.abs_diff(off) <= 4, "found {a}..{b}, truth {on}..{off}");
}

/// Event-level F1: a detected saccade counts when it overlaps a
/// ground-truth saccade not matched before.
fn f1(truth: &[(usize, usize)], found: &[(usize, usize)]) -> (usize, usize, usize) {
    let mut used = vec![false; found.len()];
    let mut tp = 0;
    for &(a, b) in truth {
        if let Some(k) = (0..found.len()).find(|&k| !used[k] && found[k].0 <= b && a <= found[k].1) {
            used[k] = true;
            tp += 1;
        }
    }
    (tp, found.len() - tp, truth.len() - tp)
}

#[test]
fn detection_f1_on_generated_cohort() {
    let cfg = SynthConfig { n_subjects: 20, ..SynthConfig::default() };
    let cohort = generate_cohort(&cfg, &ParamSampler::default()).unwrap();
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for s in &cohort {
        let vel = compute_velocity(&s.recording, &DiffConfig::default()).unwrap();
        let segs = classify_events(&s.recording, &vel, &ClassifierConfig::default()).unwrap();
        let (a, b, c) = f1(&saccades(&s.truth), &saccades(&segs));
        tp += a;
        fp += b;
        fneg += c;
    }
    let f1 = 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
    assert!(f1 >= 0.95, "F1 {f1:.4} (tp {tp} fp {fp} fn {fneg})");
}

#[test]
fn noise_threshold_rises_with_noise() {
    let thresholds: Vec<f64> = [0.1, 0.3, 0.9]
        .iter()
        .map(|&sigma| {
            let cfg = SynthConfig { n_subjects: 1, noise_sigma_range: [sigma, sigma], ..SynthConfig::default() };
            let s = generate_subject(&cfg, &ParamSampler::default(), 0).unwrap();
            let vel = compute_velocity(&s.recording, &DiffConfig::default()).unwrap();
            let segs = classify_events(&s.recording, &vel, &ClassifierConfig::default()).unwrap();
            fixation_noise_threshold(&s.recording, &vel, &segs).unwrap()
        })
        .collect();
    assert!(thresholds.windows(2).all(|w| w[0] < w[1]), "{thresholds:?}");
}
