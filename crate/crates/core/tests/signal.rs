use gazecast::signal::*;
use proptest::prelude::*;

fn recording(xs: &[f64], ys: &[f64], valid: &[bool]) -> GazeRecording {
    let samples = xs
        .iter()
        .zip(ys)
        .zip(valid)
        .enumerate()
        .map(|(i, ((x, y), v))| {
            if *v {
                GazeSample::new(i as i64, *x, *y)
            } else {
                GazeSample::invalid(i as i64)
            }
        })
        .collect();
    GazeRecording::new("r", "1", samples, None).unwrap()
}

proptest! {
    #[test]
    fn export_then_ingest_is_bit_exact(
        rows in prop::collection::vec((-40.0f64..40.0, -40.0f64..40.0, prop::bool::weighted(0.9)), 1..200)
    ) {
        let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let valid: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let rec = recording(&xs, &ys, &valid);
        let mut buf = Vec::new();
        export_csv(&rec, &mut buf).unwrap();
        let back = ingest_reader(buf.as_slice(), &ColumnMapping::default(), "r", "1").unwrap();
        prop_assert_eq!(back.len(), rec.len());
        for (a, b) in rec.samples.iter().zip(&back.samples) {
            prop_assert_eq!(a.valid, b.valid);
            prop_assert_eq!(a.t_ms, b.t_ms);
            if a.valid {
                prop_assert_eq!(a.x_dva.to_bits(), b.x_dva.to_bits());
                prop_assert_eq!(a.y_dva.to_bits(), b.y_dva.to_bits());
            }
        }
    }

    #[test]
    fn radial_velocity_is_rotation_invariant(
        pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 20..120)
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let valid = vec![true; xs.len()];
        let rotated_x: Vec<f64> = ys.iter().map(|y| -y).collect();
        let a = compute_velocity(&recording(&xs, &ys, &valid), &DiffConfig::default()).unwrap();
        let b = compute_velocity(&recording(&rotated_x, &xs, &valid), &DiffConfig::default()).unwrap();
        for (u, v) in a.v_radial.iter().zip(&b.v_radial) {
            prop_assert_eq!(u.is_nan(), v.is_nan());
            if u.is_finite() {
                prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
            }
        }
    }
}

#[test]
fn targets_survive_export_round_trip() {
    let samples = (0..10).map(|i| GazeSample::new(i, 0.5, 0.5)).collect();
    let targets = vec![
        TargetPoint { t_ms: 0, x_dva: 1.0, y_dva: 2.0 },
        TargetPoint { t_ms: 6, x_dva: -3.0, y_dva: 0.0 },
    ];
    let rec = GazeRecording::new("r", "1", samples, Some(targets.clone())).unwrap();
    let mut buf = Vec::new();
    export_csv(&rec, &mut buf).unwrap();
    let back = ingest_reader(buf.as_slice(), &ColumnMapping::default(), "r", "1").unwrap();
    assert_eq!(back.targets, Some(targets));
}
