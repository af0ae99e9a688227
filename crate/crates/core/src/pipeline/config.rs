//! Run configuration: one JSON document drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::learned::{BaselineKind, TrainConfig};
use crate::metrics::ErrorMetric;
use crate::opkf::{FitConfig, NmOptions, OpkfConfig};
use crate::plant::{ParamSampler, SynthConfig};
use crate::signal::ColumnMapping;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Cohort produced by the `synth` stage.
    Synthetic {
        synth: SynthConfig,
        sampler: ParamSampler,
    },
    /// One CSV per subject (file stem = subject id).
    CsvDir { dir: PathBuf, mapping: ColumnMapping },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    ConstantPosition,
    ConstantVelocity,
    Lstm,
    Opkf,
}

impl PredictorKind {
    pub fn id(&self) -> &'static str {
        match self {
            PredictorKind::ConstantPosition => BaselineKind::ConstantPosition.id(),
            PredictorKind::ConstantVelocity => BaselineKind::ConstantVelocity.id(),
            PredictorKind::Lstm => "lstm",
            PredictorKind::Opkf => crate::opkf::OPKF_ID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    /// Share of subjects used to train learned predictors; the rest are
    /// evaluated.
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpkfStageConfig {
    pub filter: OpkfConfig,
    /// Fit plant parameters per subject; otherwise `filter.params` is used.
    pub fit_params: bool,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmStageConfig {
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Forecast only at every `stride`-th sample of the evaluated subjects.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metric: ErrorMetric,
    pub cdf_max_dva: f64,
    pub cdf_points: usize,
    pub progress_bins: usize,
    /// Amplitude range (dva) of the saccades in the progression curve.
    pub progress_amplitude: [f64; 2],
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub split: SplitConfig,
    pub pi_ms: Vec<usize>,
    pub predictors: Vec<PredictorKind>,
    pub classifier: ClassifierConfig,
    pub features: FeatureConfig,
    pub opkf: OpkfStageConfig,
    pub lstm: LstmStageConfig,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("gazecast-run"),
            data: DataSource::Synthetic {
                synth: SynthConfig::default(),
                sampler: ParamSampler::default(),
            },
            split: SplitConfig {
                seed: 11,
                train_fraction: 0.25,
            },
            pi_ms: vec![25, 40, 60],
            predictors: vec![PredictorKind::ConstantVelocity, PredictorKind::Lstm, PredictorKind::Opkf],
            classifier: ClassifierConfig::default(),
            features: FeatureConfig::default(),
            opkf: OpkfStageConfig {
                filter: OpkfConfig::default(),
                fit_params: true,
                fit: FitConfig {
                    nm: NmOptions {
                        max_evals: Some(200),
                        ..FitConfig::default().nm
                    },
                    ..FitConfig::default()
                },
            },
            lstm: LstmStageConfig {
                // Desk-scale recipe: capped window sets, small batches.
                train: TrainConfig {
                    batch_size: 32,
                    lr: 2e-3,
                    epochs: 8,
                    max_train_windows: 6_000,
                    max_val_windows: 1_500,
                    ..TrainConfig::default()
                },
                init_seed: 5,
                stride: 10,
            },
            evaluation: EvalConfig {
                metric: ErrorMetric::Planar,
                cdf_max_dva: 10.0,
                cdf_points: 201,
                progress_bins: 10,
                progress_amplitude: [10.0, 20.0],
                alpha: 0.05,
            },
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic { synth, .. } => synth.validate()?,
            DataSource::CsvDir { dir, .. } => {
                if dir.as_os_str().is_empty() {
                    return Err(Error::Config("csv data source needs a directory".into()));
                }
            }
        }
        if self.pi_ms.is_empty() || self.pi_ms.contains(&0) {
            return Err(Error::Config("pi_ms must list positive horizons".into()));
        }
        let mut pis = self.pi_ms.clone();
        pis.sort_unstable();
        pis.dedup();
        if pis.len() != self.pi_ms.len() {
            return Err(Error::Config("pi_ms has duplicates".into()));
        }
        if self.predictors.is_empty() {
            return Err(Error::Config("no predictors selected".into()));
        }
        if !(0.0..1.0).contains(&self.split.train_fraction) {
            return Err(Error::Config("split.train_fraction must lie in [0, 1)".into()));
        }
        if self.lstm.stride == 0 {
            return Err(Error::Config("lstm.stride must be positive".into()));
        }
        let e = &self.evaluation;
        if !(e.cdf_max_dva > 0.0) || e.cdf_points < 2 || e.progress_bins == 0 || !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(Error::Config("evaluation settings out of range".into()));
        }
        self.classifier.validate()?;
        self.opkf.filter.validate()?;
        self.opkf.fit.validate()?;
        self.lstm.train.validate()?;
        Ok(())
    }

    /// Reseeds every random stream from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let DataSource::Synthetic { synth, .. } = &mut self.data {
            synth.rng_seed = seed;
        }
        self.split.seed = seed.wrapping_add(1);
        self.lstm.init_seed = seed.wrapping_add(2);
        self.lstm.train.rng_seed = seed.wrapping_add(3);
        self
    }

    pub fn uses(&self, p: PredictorKind) -> bool {
        self.predictors.contains(&p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The configuration without its output location, so that identical runs
    /// written to different directories describe themselves identically.
    pub fn portable(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(m) = v.as_object_mut() {
            m.remove("out_dir");
        }
        v
    }
}
