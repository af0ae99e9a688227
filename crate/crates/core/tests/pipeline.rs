use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gazecast::learned::TrainConfig;
use gazecast::pipeline::store::sha256_file;
use gazecast::pipeline::{DataSource, Pipeline, PredictorKind, RunConfig, Stage, StageStatus};
use gazecast::{Error, ErrorClass};

const BUNDLE: [&str; 18] = [
    "cdf_fixation.csv",
    "cdf_cep.csv",
    "cdf_small_saccade.csv",
    "cdf_large_saccade.csv",
    "cdf_all.csv",
    "subject_profiles_fixation.csv",
    "subject_profiles_cep.csv",
    "subject_profiles_small_saccade.csv",
    "subject_profiles_large_saccade.csv",
    "subject_profiles_all.csv",
    "table1_stats.csv",
    "table2_correlations.csv",
    "kcc.csv",
    "saccade_progress.csv",
    "cep_curve.csv",
    "manifest.json",
    "../../report/summary.csv",
    "../../report/pi_sweep.csv",
];

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        out_dir: out.to_path_buf(),
        predictors: vec![PredictorKind::ConstantVelocity, PredictorKind::Lstm, PredictorKind::Opkf],
        ..RunConfig::default()
    };
    if let DataSource::Synthetic { synth, .. } = &mut cfg.data {
        synth.n_subjects = 14;
        synth.duration_s = 12.0;
    }
    cfg.opkf.fit.nm.max_evals = Some(20);
    cfg.lstm.train = TrainConfig {
        batch_size: 32,
        lr: 2e-3,
        epochs: 1,
        max_train_windows: 300,
        max_val_windows: 100,
        ..TrainConfig::default()
    };
    cfg.lstm.stride = 25;
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_run_is_cached_and_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let p = Pipeline::new(small_config(&a), 0).unwrap();
    let first = p.run_all().unwrap();
    assert!(first.iter().all(|(_, s)| *s == StageStatus::Ran), "{first:?}");

    // One bundle per horizon, each complete.
    for pi in [25, 40, 60] {
        let bundle = a.join(format!("evaluate/pi{pi}"));
        for name in BUNDLE {
            assert!(bundle.join(name).is_file(), "pi {pi}: missing {name}");
        }
    }

    // Every file is listed in its stage manifest with a matching hash.
    for stage in Stage::ALL {
        let dir = a.join(stage.name());
        let m = p.workspace().read_manifest(stage.name()).unwrap().unwrap();
        let on_disk: Vec<PathBuf> = snapshot(&dir).into_keys().filter(|k| k != Path::new("manifest.json")).collect();
        assert_eq!(on_disk.len(), m.outputs.len(), "{stage}");
        for (rel, hash) in &m.outputs {
            assert_eq!(&sha256_file(&a.join(rel)).unwrap(), hash, "{rel}");
        }
    }

    // A second run reuses everything.
    let before = snapshot(&a);
    let second = p.run_all().unwrap();
    assert!(second.iter().all(|(_, s)| *s == StageStatus::Cached), "{second:?}");
    assert_eq!(before, snapshot(&a));

    // Re-evaluating after losing the bundles keeps the cached predictions.
    fs::remove_dir_all(a.join("evaluate")).unwrap();
    assert_eq!(p.run_stage(Stage::Predict).unwrap(), StageStatus::Cached);
    assert_eq!(p.run_stage(Stage::Evaluate).unwrap(), StageStatus::Ran);
    assert_eq!(p.run_stage(Stage::Report).unwrap(), StageStatus::Cached);
    assert_eq!(before, snapshot(&a));

    // Changing only evaluation settings reruns evaluation alone.
    let mut cfg = small_config(&a);
    cfg.evaluation.cdf_points = 11;
    let p2 = Pipeline::new(cfg, 0).unwrap();
    let third = p2.run_all().unwrap();
    for (stage, status) in third {
        let expect = if stage >= Stage::Evaluate { StageStatus::Ran } else { StageStatus::Cached };
        assert_eq!(status, expect, "{stage}");
    }

    // Same configuration in another directory gives identical bundles.
    let b = root.path().join("b");
    Pipeline::new(small_config(&b), 1).unwrap().run_all().unwrap();
    let (sa, sb) = (snapshot(&a.join("evaluate")), snapshot(&b.join("evaluate")));
    assert_ne!(sa, sb, "sanity: a was re-evaluated with another grid");
    Pipeline::new(small_config(&a), 0).unwrap().run_all().unwrap();
    assert_eq!(snapshot(&a.join("evaluate")), sb);
    assert_eq!(snapshot(&a.join("report")), snapshot(&b.join("report")));
}

#[test]
fn missing_upstream_names_the_stage() {
    let root = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(root.path()), 1).unwrap();
    for (stage, upstream) in [(Stage::Ingest, "synth"), (Stage::Classify, "ingest"), (Stage::Report, "evaluate")] {
        match p.run_stage(stage) {
            Err(e @ Error::Dependency { .. }) => {
                assert_eq!(e.class(), ErrorClass::Config);
                let Error::Dependency { stage: s, .. } = e else { unreachable!() };
                assert_eq!(s, upstream);
            }
            other => panic!("{stage}: {other:?}"),
        }
    }
}

#[test]
fn zero_subjects_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small_config(root.path());
    if let DataSource::Synthetic { synth, .. } = &mut cfg.data {
        synth.n_subjects = 0;
    }
    let e = Pipeline::new(cfg, 1).err().expect("rejected");
    assert_eq!(e.class(), ErrorClass::Config);
}

#[test]
fn synth_is_seeded_and_fast() {
    let root = tempfile::tempdir().unwrap();
    let run = |dir: &Path, seed: u64| {
        let mut cfg = RunConfig { out_dir: dir.to_path_buf(), ..RunConfig::default() }.with_seed(seed);
        if let DataSource::Synthetic { synth, .. } = &mut cfg.data {
            assert_eq!(synth.n_subjects, 30);
        }
        let t0 = Instant::now();
        Pipeline::new(cfg, 0).unwrap().run_stage(Stage::Synth).unwrap();
        t0.elapsed()
    };
    let elapsed = run(&root.path().join("a"), 3);
    assert!(elapsed.as_secs_f64() < 60.0, "{elapsed:?}");
    run(&root.path().join("b"), 3);
    run(&root.path().join("c"), 4);
    let a = snapshot(&root.path().join("a/synth"));
    // Recordings, truth files, cohort summary and manifest.
    assert_eq!(a.len(), 62);
    assert_eq!(a, snapshot(&root.path().join("b/synth")));
    assert_ne!(a, snapshot(&root.path().join("c/synth")));
}

#[test]
fn csv_directory_source() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&root.path().join("gen"));
    cfg.predictors = vec![PredictorKind::ConstantPosition, PredictorKind::ConstantVelocity];
    let p = Pipeline::new(cfg.clone(), 1).unwrap();
    p.run_stage(Stage::Synth).unwrap();

    let data = root.path().join("data");
    fs::create_dir(&data).unwrap();
    for (name, _) in snapshot(&root.path().join("gen/synth")) {
        if name.extension().is_some_and(|e| e == "csv") {
            fs::copy(root.path().join("gen/synth").join(&name), data.join(&name)).unwrap();
        }
    }
    let mapping = gazecast::signal::ColumnMapping::default();
    cfg.data = DataSource::CsvDir { dir: data.clone(), mapping };
    cfg.out_dir = root.path().join("run");
    let p = Pipeline::new(cfg.clone(), 1).unwrap();
    let status = p.run_all().unwrap();
    assert_eq!(status[0], (Stage::Synth, StageStatus::Skipped));
    assert!(root.path().join("run/report/summary.csv").is_file());

    // Editing an input recording invalidates ingest.
    let first = data.join("S001.csv");
    let text = fs::read_to_string(&first).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<&str> = lines[1].split(',').collect();
    fields[3] = "0";
    lines[1] = fields.join(",");
    fs::write(&first, lines.join("\n") + "\n").unwrap();
    assert_eq!(p.run_stage(Stage::Ingest).unwrap(), StageStatus::Ran);

    fs::write(data.join("S002.csv"), "t_ms,x_dva\n0,1\n").unwrap();
    let e = p.run_stage(Stage::Ingest).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Data, "{e}");
}
