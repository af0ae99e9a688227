//! Stage-cached pipeline from raw recordings to report bundles.
//!
//! Every stage writes into its own directory under the run directory and
//! finishes with a manifest holding a fingerprint of its configuration and
//! inputs plus the hash of every output. A stage whose fingerprint matches
//! and whose outputs are intact is skipped.

pub mod config;
pub mod report;
mod stages;
pub mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{DataSource, EvalConfig, LstmStageConfig, OpkfStageConfig, PredictorKind, RunConfig, SplitConfig};
pub use stages::SubjectSplit;
pub use store::{Manifest, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    Classify,
    Features,
    FitOpkf,
    TrainLstm,
    Predict,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Classify,
        Stage::Features,
        Stage::FitOpkf,
        Stage::TrainLstm,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Features => "features",
            Stage::FitOpkf => "fit-opkf",
            Stage::TrainLstm => "train-lstm",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Cached,
    /// Not applicable to the configured data source.
    Skipped,
}

/// A configured run over one run directory.
pub struct Pipeline {
    cfg: RunConfig,
    ws: Workspace,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// `jobs == 0` uses one worker per CPU.
    pub fn new(cfg: RunConfig, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let ws = Workspace::new(cfg.out_dir.clone());
        Ok(Pipeline { cfg, ws, pool })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    fn synthetic(&self) -> bool {
        matches!(self.cfg.data, DataSource::Synthetic { .. })
    }

    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Synth => vec![],
            Stage::Ingest if self.synthetic() => vec![Stage::Synth],
            Stage::Ingest => vec![],
            Stage::Classify | Stage::TrainLstm => vec![Stage::Ingest],
            Stage::Features | Stage::FitOpkf => vec![Stage::Ingest, Stage::Classify],
            Stage::Predict => vec![Stage::Ingest, Stage::Classify, Stage::FitOpkf, Stage::TrainLstm],
            Stage::Evaluate => vec![Stage::Ingest, Stage::Classify, Stage::Features, Stage::Predict],
            Stage::Report => vec![Stage::Evaluate],
        }
    }

    /// The part of the configuration a stage depends on directly.
    fn config_slice(&self, stage: Stage) -> Result<serde_json::Value> {
        fn v<T: Serialize>(t: &T) -> Result<serde_json::Value> {
            Ok(serde_json::to_value(t)?)
        }
        let c = &self.cfg;
        let uses = |p| c.uses(p);
        match stage {
            Stage::Synth | Stage::Ingest => {
                let data = match &c.data {
                    DataSource::Synthetic { .. } => v(&c.data)?,
                    // The directory location is irrelevant; its files are inputs.
                    DataSource::CsvDir { mapping, .. } => v(mapping)?,
                };
                if stage == Stage::Synth {
                    Ok(data)
                } else {
                    Ok(serde_json::json!({ "data": data, "split": v(&c.split)? }))
                }
            }
            Stage::Classify => v(&c.classifier),
            Stage::Features => v(&c.features),
            Stage::FitOpkf => Ok(serde_json::json!({
                "enabled": uses(PredictorKind::Opkf) && c.opkf.fit_params,
                "opkf": v(&c.opkf)?,
            })),
            Stage::TrainLstm => Ok(serde_json::json!({
                "enabled": uses(PredictorKind::Lstm),
                "pi_ms": c.pi_ms,
                "train": v(&c.lstm.train)?,
                "init_seed": c.lstm.init_seed,
            })),
            Stage::Predict => Ok(serde_json::json!({
                "predictors": c.predictors,
                "pi_ms": c.pi_ms,
                "opkf": v(&c.opkf.filter)?,
                "lstm_stride": c.lstm.stride,
            })),
            Stage::Evaluate => Ok(c.portable()),
            Stage::Report => Ok(serde_json::Value::Null),
        }
    }

    /// Runs one stage, reusing its outputs when nothing changed. Upstream
    /// stages must already be complete.
    pub fn run_stage(&self, stage: Stage) -> Result<StageStatus> {
        if stage == Stage::Synth && !self.synthetic() {
            return Ok(StageStatus::Skipped);
        }
        let mut inputs = BTreeMap::new();
        for up in self.upstream(stage) {
            let (k, h) = self.ws.upstream_entry(up.name())?;
            inputs.insert(k, h);
        }
        if stage == Stage::Ingest {
            if let DataSource::CsvDir { dir, .. } = &self.cfg.data {
                for path in stages::csv_files(dir)? {
                    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    inputs.insert(format!("data/{name}"), store::sha256_file(&path)?);
                }
            }
        }
        let config = self.config_slice(stage)?;
        let fp = store::fingerprint(stage.name(), &config, &inputs)?;
        if let Some(m) = self.ws.read_manifest(stage.name())? {
            if m.fingerprint == fp && self.ws.outputs_intact(&m)? {
                tracing::info!(stage = stage.name(), "cached");
                return Ok(StageStatus::Cached);
            }
        }
        let t0 = std::time::Instant::now();
        let mut w = store::StageWriter::begin(&self.ws, stage.name(), config, inputs, fp)?;
        self.pool.install(|| match stage {
            Stage::Synth => self.synth(&mut w),
            Stage::Ingest => self.ingest(&mut w),
            Stage::Classify => self.classify(&mut w),
            Stage::Features => self.features(&mut w),
            Stage::FitOpkf => self.fit_opkf(&mut w),
            Stage::TrainLstm => self.train_lstm(&mut w),
            Stage::Predict => self.predict(&mut w),
            Stage::Evaluate => self.evaluate(&mut w),
            Stage::Report => self.report(&mut w),
        })?;
        w.finish()?;
        tracing::info!(stage = stage.name(), seconds = t0.elapsed().as_secs_f64(), "done");
        Ok(StageStatus::Ran)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        Stage::ALL
            .into_iter()
            .map(|s| self.run_stage(s).map(|st| (s, st)))
            .collect()
    }
}
