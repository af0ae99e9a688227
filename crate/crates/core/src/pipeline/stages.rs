//! Stage bodies. Per-subject work runs on the pipeline's thread pool and is
//! collected in subject order; all writes happen sequentially afterwards.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_events, EventSegment};
use crate::error::{Error, Result};
use crate::features::{read_features_csv, subject_features, write_features_csv, SubjectFeatures};
use crate::learned::train::write_loss_csv;
use crate::learned::{baseline_predict, lstm_train, make_windows, BaselineKind, LstmModel, LstmPredictor, WindowSet};
use crate::metrics::{score_run, EventClass};
use crate::opkf::{fit_subject_params, opkf_predict_recording, read_fit_store, write_fit_store, FitStore, OpkfConfig};
use crate::plant::{generate_cohort, PlantParams};
use crate::prediction::{PredictionRun, Predictor, PredictorInput};
use crate::signal::{compute_velocity, export_csv, ingest_csv, ColumnMapping, DiffConfig, GazeRecording, VelocityTrace};

use super::config::{DataSource, PredictorKind};
use super::report::{
    cdf_table, correlation_rows, csv_bytes, csv_bytes_with_header, kcc_rows, read_rows, PredictorSummary, ProfileRow,
    ScoredSubject, Table1Row,
};
use super::store::{sha256_hex, StageWriter};
use super::Pipeline;

/// Seeded assignment of subjects to training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Serialize)]
struct CohortEntry<'a> {
    subject_id: &'a str,
    noise_sigma: f64,
    speed_factor: f64,
    params: PlantParams,
}

#[derive(Debug, Serialize)]
struct BundleManifest<'a> {
    pi_ms: usize,
    predictors: Vec<&'static str>,
    subjects: &'a [String],
    seeds: BTreeMap<&'static str, u64>,
    config: serde_json::Value,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    pi_ms: usize,
    predictor: String,
    class: String,
    subjects: usize,
    records: usize,
    pooled_median: Option<f64>,
    median_of_medians: Option<f64>,
    min_median: Option<f64>,
    max_median: Option<f64>,
    ratio: Option<f64>,
    iqr_of_medians: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    predictor: String,
    subject_id: String,
    pi_ms: usize,
    median: f64,
}

/// `*.csv` files of a directory in name order.
pub(crate) fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no csv recordings in {}", dir.display())));
    }
    Ok(files)
}

fn open_artifact(path: &Path, stage: &str) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Dependency {
            stage: stage.to_string(),
            path: path.to_path_buf(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Recording, trailing velocity and classified events of one subject.
struct Loaded {
    id: String,
    rec: GazeRecording,
    vel: VelocityTrace,
    segs: Vec<EventSegment>,
}

impl Pipeline {
    fn read_split(&self) -> Result<SubjectSplit> {
        let path = self.ws.path("ingest/subjects.json");
        Ok(serde_json::from_reader(open_artifact(&path, "ingest")?)?)
    }

    fn recording(&self, id: &str) -> Result<GazeRecording> {
        let path = self.ws.path(&format!("ingest/{id}.csv"));
        if !path.is_file() {
            return Err(Error::Dependency {
                stage: "ingest".into(),
                path,
            });
        }
        ingest_csv(&path, &ColumnMapping::default())
    }

    fn segments(&self, id: &str) -> Result<Vec<EventSegment>> {
        let path = self.ws.path(&format!("classify/{id}.segments.json"));
        Ok(serde_json::from_reader(open_artifact(&path, "classify")?)?)
    }

    fn load(&self, ids: &[String], with_segments: bool) -> Result<Vec<Loaded>> {
        ids.par_iter()
            .map(|id| {
                let rec = self.recording(id)?;
                let vel = compute_velocity(&rec, &DiffConfig::causal())?;
                let segs = if with_segments { self.segments(id)? } else { Vec::new() };
                Ok(Loaded {
                    id: id.clone(),
                    rec,
                    vel,
                    segs,
                })
            })
            .collect()
    }

    fn all_ids(&self) -> Result<Vec<String>> {
        let s = self.read_split()?;
        let mut ids: Vec<String> = s.train.into_iter().chain(s.test).collect();
        ids.sort();
        Ok(ids)
    }

    pub(super) fn synth(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let DataSource::Synthetic { synth, sampler } = &self.cfg.data else {
            return Err(Error::Config("synth needs a synthetic data source".into()));
        };
        let cohort = generate_cohort(synth, sampler)?;
        let files: Vec<(Vec<u8>, Vec<u8>)> = cohort
            .par_iter()
            .map(|s| {
                let mut rec = Vec::new();
                export_csv(&s.recording, &mut rec)?;
                Ok((rec, json_bytes(&s.truth)?))
            })
            .collect::<Result<_>>()?;
        for (s, (rec, truth)) in cohort.iter().zip(&files) {
            let id = &s.recording.subject_id;
            w.write(&format!("{id}.csv"), rec)?;
            w.write(&format!("{id}.truth.json"), truth)?;
        }
        let entries: Vec<CohortEntry> = cohort
            .iter()
            .map(|s| CohortEntry {
                subject_id: &s.recording.subject_id,
                noise_sigma: s.noise_sigma,
                speed_factor: s.speed_factor,
                params: s.params,
            })
            .collect();
        w.write("cohort.json", &json_bytes(&entries)?)
    }

    pub(super) fn ingest(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let (paths, mapping) = match &self.cfg.data {
            DataSource::Synthetic { .. } => (csv_files(&self.ws.path("synth"))?, ColumnMapping::default()),
            DataSource::CsvDir { dir, mapping } => (csv_files(dir)?, mapping.clone()),
        };
        let recs: Vec<(String, Vec<u8>)> = paths
            .par_iter()
            .map(|p| {
                let rec = ingest_csv(p, &mapping)?;
                rec.ensure_evaluable()?;
                let mut bytes = Vec::new();
                export_csv(&rec, &mut bytes)?;
                Ok((rec.subject_id, bytes))
            })
            .collect::<Result<_>>()?;
        for (id, bytes) in &recs {
            w.write(&format!("{id}.csv"), bytes)?;
        }

        let ids: Vec<String> = recs.into_iter().map(|r| r.0).collect();
        let n = ids.len();
        let n_train = ((self.cfg.split.train_fraction * n as f64).round() as usize).min(n - 1);
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.split.seed));
        let mut train = shuffled[..n_train].to_vec();
        let mut test = shuffled[n_train..].to_vec();
        train.sort();
        test.sort();
        tracing::info!(train = train.len(), test = test.len(), "subject split");
        w.write("subjects.json", &json_bytes(&SubjectSplit { train, test })?)
    }

    pub(super) fn classify(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let ids = self.all_ids()?;
        let out: Vec<Vec<u8>> = ids
            .par_iter()
            .map(|id| {
                let rec = self.recording(id)?;
                let centered = compute_velocity(&rec, &DiffConfig::default())?;
                json_bytes(&classify_events(&rec, &centered, &self.cfg.classifier)?)
            })
            .collect::<Result<_>>()?;
        for (id, bytes) in ids.iter().zip(&out) {
            w.write(&format!("{id}.segments.json"), bytes)?;
        }
        Ok(())
    }

    pub(super) fn features(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let ids = self.all_ids()?;
        let rows: Vec<SubjectFeatures> = ids
            .par_iter()
            .map(|id| {
                let rec = self.recording(id)?;
                let centered = compute_velocity(&rec, &DiffConfig::default())?;
                subject_features(&rec, &centered, &self.segments(id)?, &self.cfg.features)
            })
            .collect::<Result<_>>()?;
        let mut bytes = Vec::new();
        write_features_csv(&rows, &mut bytes)?;
        w.write("features.csv", &bytes)
    }

    pub(super) fn fit_opkf(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let mut store = FitStore::new();
        let o = &self.cfg.opkf;
        if self.cfg.uses(PredictorKind::Opkf) && o.fit_params {
            let subjects = self.load(&self.read_split()?.test, true)?;
            let fits: Vec<Option<_>> = subjects
                .par_iter()
                .map(|s| match fit_subject_params(&s.rec, &s.vel, &s.segs, &o.filter.params, &o.filter, &o.fit) {
                    Ok(r) => Ok(Some(r)),
                    Err(e @ (Error::InsufficientData(_) | Error::FitFailure(_))) => {
                        tracing::warn!(subject = %s.id, error = %e, "plant fit skipped, using base parameters");
                        Ok(None)
                    }
                    Err(e) => Err(e),
                })
                .collect::<Result<_>>()?;
            for (s, f) in subjects.iter().zip(fits) {
                if let Some(f) = f {
                    store.insert(s.id.clone(), f);
                }
            }
        }
        let mut bytes = Vec::new();
        write_fit_store(&store, &mut bytes)?;
        w.write("params.json", &bytes)
    }

    pub(super) fn train_lstm(&self, w: &mut StageWriter<'_>) -> Result<()> {
        if !self.cfg.uses(PredictorKind::Lstm) {
            return Ok(());
        }
        let split = self.read_split()?;
        if split.train.is_empty() {
            return Err(Error::Config("the lstm predictor needs training subjects".into()));
        }
        let subjects = self.load(&split.train, false)?;
        let tc = &self.cfg.lstm.train;
        let n = subjects.len();
        // The last training subjects are held out for early stopping.
        let n_val = ((tc.val_fraction * n as f64).ceil() as usize).min(n - 1);
        let trained: Vec<(Vec<u8>, Vec<u8>)> = self
            .cfg
            .pi_ms
            .par_iter()
            .map(|&pi| {
                let mut train = WindowSet::default();
                let mut val = WindowSet::default();
                for (k, s) in subjects.iter().enumerate() {
                    let windows = make_windows(&s.rec, &s.vel, pi);
                    if k < n - n_val {
                        train.push_trace(&s.vel, windows);
                    } else {
                        val.push_trace(&s.vel, windows);
                    }
                }
                let seed = tc.rng_seed.wrapping_add(pi as u64);
                train.subsample(tc.max_train_windows, tc.moving_fraction, seed);
                val.subsample(tc.max_val_windows, tc.moving_fraction, seed.wrapping_add(1));
                let out = lstm_train(LstmModel::seeded(self.cfg.lstm.init_seed), &train, &val, tc)?;
                tracing::info!(pi, best_epoch = out.best_epoch, windows = train.len(), "lstm trained");
                let mut model = Vec::new();
                out.model.to_json(&mut model)?;
                let mut loss = Vec::new();
                write_loss_csv(&out.history, &mut loss)?;
                Ok((model, loss))
            })
            .collect::<Result<_>>()?;
        for (pi, (model, loss)) in self.cfg.pi_ms.iter().zip(&trained) {
            w.write(&format!("lstm_pi{pi}.json"), model)?;
            w.write(&format!("loss_pi{pi}.csv"), loss)?;
        }
        Ok(())
    }

    fn lstm_model(&self, pi: usize) -> Result<LstmModel> {
        let path = self.ws.path(&format!("train-lstm/lstm_pi{pi}.json"));
        LstmModel::from_json(open_artifact(&path, "train-lstm")?)
    }

    pub(super) fn predict(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let subjects = self.load(&self.read_split()?.test, true)?;
        let fits = read_fit_store(open_artifact(&self.ws.path("fit-opkf/params.json"), "fit-opkf")?)?;
        let filter = &self.cfg.opkf.filter;
        for &pi in &self.cfg.pi_ms {
            for &kind in &self.cfg.predictors {
                let lstm = match kind {
                    PredictorKind::Lstm => Some(LstmPredictor {
                        model: self.lstm_model(pi)?,
                        stride: self.cfg.lstm.stride,
                    }),
                    _ => None,
                };
                let runs: Vec<Vec<u8>> = subjects
                    .par_iter()
                    .map(|s| {
                        let run = match kind {
                            PredictorKind::ConstantPosition => {
                                baseline_predict(BaselineKind::ConstantPosition, &s.rec, &s.vel, pi)?
                            }
                            PredictorKind::ConstantVelocity => {
                                baseline_predict(BaselineKind::ConstantVelocity, &s.rec, &s.vel, pi)?
                            }
                            PredictorKind::Opkf => {
                                let cfg = OpkfConfig {
                                    pi_ms: pi,
                                    params: fits.get(&s.id).map_or(filter.params, |f| f.params),
                                    ..filter.clone()
                                };
                                opkf_predict_recording(&s.rec, &s.vel, &s.segs, &cfg)?
                            }
                            PredictorKind::Lstm => lstm
                                .as_ref()
                                .expect("model loaded for lstm")
                                .predict(&PredictorInput { rec: &s.rec, vel: &s.vel }, pi)?,
                        };
                        let mut bytes = Vec::new();
                        run.write_csv(&mut bytes)?;
                        Ok(bytes)
                    })
                    .collect::<Result<_>>()?;
                for (s, bytes) in subjects.iter().zip(&runs) {
                    w.write(&format!("{}/pi{pi}/{}.csv", kind.id(), s.id), bytes)?;
                }
            }
        }
        Ok(())
    }

    fn seeds(&self) -> BTreeMap<&'static str, u64> {
        let mut seeds = BTreeMap::from([
            ("split", self.cfg.split.seed),
            ("lstm_init", self.cfg.lstm.init_seed),
            ("lstm_train", self.cfg.lstm.train.rng_seed),
        ]);
        if let DataSource::Synthetic { synth, .. } = &self.cfg.data {
            seeds.insert("synth", synth.rng_seed);
        }
        seeds
    }

    pub(super) fn evaluate(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let test = self.read_split()?.test;
        let subjects = self.load(&test, true)?;
        let features = read_features_csv(open_artifact(&self.ws.path("features/features.csv"), "features")?)?;
        let by_id: BTreeMap<&str, &SubjectFeatures> = features.iter().map(|f| (f.subject_id.as_str(), f)).collect();
        let test_features: Vec<Option<&SubjectFeatures>> = test.iter().map(|id| by_id.get(id.as_str()).copied()).collect();
        let eval = &self.cfg.evaluation;

        for &pi in &self.cfg.pi_ms {
            let mut summaries = Vec::new();
            for &kind in &self.cfg.predictors {
                let scored: Vec<ScoredSubject> = subjects
                    .par_iter()
                    .map(|s| {
                        let path = self.ws.path(&format!("predict/{}/pi{pi}/{}.csv", kind.id(), s.id));
                        let run = PredictionRun::read_csv(open_artifact(&path, "predict")?, kind.id(), &s.rec, pi)?;
                        Ok(ScoredSubject {
                            subject_id: &s.id,
                            segs: &s.segs,
                            records: score_run(&run, &s.rec, &s.segs, eval.metric)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                summaries.push(PredictorSummary::new(kind.id(), &scored, eval));
            }

            let mut files: Vec<(String, Vec<u8>)> = Vec::new();
            for class in EventClass::ALL {
                files.push((format!("cdf_{}.csv", class.name()), cdf_table(&summaries, class, eval)?));
                let profiles: Vec<ProfileRow> = summaries.iter().flat_map(|s| s.profiles(class)).collect();
                files.push((
                    format!("subject_profiles_{}.csv", class.name()),
                    csv_bytes_with_header(&["predictor", "subject_id", "count", "median", "p25", "p75", "iqr", "min", "max"], &profiles)?,
                ));
            }
            let table1: Vec<Table1Row> = summaries
                .iter()
                .flat_map(|s| EventClass::ALL.map(|c| s.table1(c)))
                .collect();
            files.push(("table1_stats.csv".into(), csv_bytes(&table1)?));
            let corr = correlation_rows(&summaries, &test_features, eval.alpha)?;
            files.push((
                "table2_correlations.csv".into(),
                csv_bytes_with_header(&["feature", "predictor", "class", "n", "r_s", "p_value", "significant"], &corr)?,
            ));
            files.push(("kcc.csv".into(), csv_bytes(&kcc_rows(&summaries))?));
            let progress: Vec<_> = summaries.iter().flat_map(|s| s.progress_rows()).collect();
            files.push((
                "saccade_progress.csv".into(),
                csv_bytes_with_header(&["predictor", "bin", "t_lo", "t_hi", "count", "median"], &progress)?,
            ));
            let cep: Vec<_> = summaries.iter().flat_map(|s| s.cep_rows()).collect();
            files.push((
                "cep_curve.csv".into(),
                csv_bytes_with_header(&["predictor", "ms_after_end", "count", "median"], &cep)?,
            ));

            let manifest = BundleManifest {
                pi_ms: pi,
                predictors: self.cfg.predictors.iter().map(|p| p.id()).collect(),
                subjects: &test,
                seeds: self.seeds(),
                config: self.cfg.portable(),
                files: files.iter().map(|(name, b)| (name.clone(), sha256_hex(b))).collect(),
            };
            files.push(("manifest.json".into(), json_bytes(&manifest)?));
            for (name, bytes) in &files {
                w.write(&format!("pi{pi}/{name}"), bytes)?;
            }
        }
        Ok(())
    }

    pub(super) fn report(&self, w: &mut StageWriter<'_>) -> Result<()> {
        let mut summary = Vec::new();
        let mut sweep = Vec::new();
        for &pi in &self.cfg.pi_ms {
            let read = |name: &str| -> Result<Vec<u8>> {
                let path = self.ws.path(&format!("evaluate/pi{pi}/{name}"));
                let mut r = open_artifact(&path, "evaluate")?;
                let mut bytes = Vec::new();
                std::io::Read::read_to_end(&mut r, &mut bytes).map_err(|e| Error::io(&path, e))?;
                Ok(bytes)
            };
            for r in read_rows::<Table1Row>(&read("table1_stats.csv")?)? {
                summary.push(SummaryRow {
                    pi_ms: pi,
                    predictor: r.predictor,
                    class: r.class,
                    subjects: r.subjects,
                    records: r.records,
                    pooled_median: r.pooled_median,
                    median_of_medians: r.median_of_medians,
                    min_median: r.min_median,
                    max_median: r.max_median,
                    ratio: r.ratio,
                    iqr_of_medians: r.iqr_of_medians,
                });
            }
            for r in read_rows::<ProfileRow>(&read("subject_profiles_all.csv")?)? {
                sweep.push(SweepRow {
                    predictor: r.predictor,
                    subject_id: r.subject_id,
                    pi_ms: pi,
                    median: r.median,
                });
            }
        }
        sweep.sort_by(|a, b| (&a.predictor, &a.subject_id, a.pi_ms).cmp(&(&b.predictor, &b.subject_id, b.pi_ms)));
        w.write("summary.csv", &csv_bytes(&summary)?)?;
        w.write(
            "pi_sweep.csv",
            &csv_bytes_with_header(&["predictor", "subject_id", "pi_ms", "median"], &sweep)?,
        )
    }
}
