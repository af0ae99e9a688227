use std::path::Path;
use std::process::{Command, Output};

use gazecast::pipeline::{DataSource, PredictorKind, RunConfig};

fn gazecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazecast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn quick_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig {
        predictors: vec![PredictorKind::ConstantPosition, PredictorKind::ConstantVelocity],
        pi_ms: vec![40],
        ..RunConfig::default()
    };
    if let DataSource::Synthetic { synth, .. } = &mut cfg.data {
        synth.n_subjects = 6;
        synth.duration_s = 8.0;
    }
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn config_init_prints_loadable_defaults() {
    let o = gazecast(&["config", "init", "--seed", "99"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: RunConfig = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cfg, RunConfig::default().with_seed(99));
}

#[test]
fn run_all_then_cached() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = dir.path().join("run");
    let args = ["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2", "run-all"];
    let first = gazecast(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("evaluate: done"));
    assert!(out.join("evaluate/pi40/table1_stats.csv").is_file());
    let second = gazecast(&args);
    assert!(second.status.success());
    assert_eq!(stdout(&second).matches("cached").count(), 9, "{}", stdout(&second));

    let single = gazecast(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "evaluate"]);
    assert_eq!(stdout(&single).trim(), "evaluate: cached");
}

#[test]
fn missing_upstream_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = gazecast(&["--out", dir.path().to_str().unwrap(), "classify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ingest"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"pi_ms\": 3}").unwrap();
    let o = gazecast(&["--config", path.to_str().unwrap(), "synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_recording_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("S001.csv"), "t_ms,x_dva,y_dva\n0,1,1\n1,oops,1\n").unwrap();
    let cfg = RunConfig {
        data: DataSource::CsvDir {
            dir: data,
            mapping: Default::default(),
        },
        ..RunConfig::default()
    };
    let path = dir.path().join("run.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out = dir.path().join("run");
    let o = gazecast(&["--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
