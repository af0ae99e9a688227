//! The predictor interface and the aligned output every predictor produces.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{GazeRecording, VelocityTrace};

/// Predictions for one recording at one horizon. Entry `i` is the position
/// forecast at sample `i` for sample `i + pi_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRun {
    pub predictor_id: String,
    pub subject_id: String,
    pub pi_ms: usize,
    pub predicted: Vec<[f64; 2]>,
    pub valid_mask: Vec<bool>,
}

impl PredictionRun {
    /// A fully masked run sized to `rec`.
    pub fn empty(predictor_id: impl Into<String>, rec: &GazeRecording, pi_ms: usize) -> Self {
        PredictionRun {
            predictor_id: predictor_id.into(),
            subject_id: rec.subject_id.clone(),
            pi_ms,
            predicted: vec![[f64::NAN; 2]; rec.len()],
            valid_mask: vec![false; rec.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn set(&mut self, issue_idx: usize, pos: [f64; 2]) {
        self.predicted[issue_idx] = pos;
        self.valid_mask[issue_idx] = pos[0].is_finite() && pos[1].is_finite();
    }

    pub fn target_idx(&self, issue_idx: usize) -> usize {
        issue_idx + self.pi_ms
    }

    /// Masks predictions whose issue sample or target sample is invalid or
    /// past the end of the recording.
    pub fn finalize(&mut self, rec: &GazeRecording) {
        let n = rec.len();
        for i in 0..self.len() {
            let t = i + self.pi_ms;
            let keep = self.valid_mask[i] && t < n && rec.is_valid(i) && rec.is_valid(t);
            if !keep {
                self.valid_mask[i] = false;
                self.predicted[i] = [f64::NAN; 2];
            }
        }
    }

    pub fn check_aligned(&self, rec: &GazeRecording) -> Result<()> {
        if self.len() != rec.len() || self.valid_mask.len() != rec.len() {
            return Err(Error::Alignment(format!(
                "prediction run has {} entries, recording {} samples",
                self.len(),
                rec.len()
            )));
        }
        if self.subject_id != rec.subject_id {
            return Err(Error::Alignment(format!(
                "prediction run for {} applied to recording {}",
                self.subject_id, rec.subject_id
            )));
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }

    /// Writes `issue_idx,target_idx,x_hat,y_hat` for unmasked entries.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["issue_idx", "target_idx", "x_hat", "y_hat"])?;
        for (i, p) in self.predicted.iter().enumerate() {
            if self.valid_mask[i] {
                w.serialize((i, i + self.pi_ms, p[0], p[1]))?;
            }
        }
        w.flush().map_err(|e| Error::io("<prediction csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(
        reader: R,
        predictor_id: &str,
        rec: &GazeRecording,
        pi_ms: usize,
    ) -> Result<Self> {
        let mut run = PredictionRun::empty(predictor_id, rec, pi_ms);
        let mut r = csv::Reader::from_reader(reader);
        for (row, rec_row) in r.deserialize::<(usize, usize, f64, f64)>().enumerate() {
            let (i, t, x, y) = rec_row?;
            if i >= run.len() || t != i + pi_ms {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("issue {i} / target {t} inconsistent with PI {pi_ms}"),
                });
            }
            run.set(i, [x, y]);
        }
        Ok(run)
    }
}

/// Causal inputs handed to a predictor.
#[derive(Debug, Clone, Copy)]
pub struct PredictorInput<'a> {
    pub rec: &'a GazeRecording,
    /// Trailing-aligned velocity: entry `i` only depends on samples `<= i`.
    pub vel: &'a VelocityTrace,
}

pub trait Predictor: Send + Sync {
    fn id(&self) -> &str;

    fn predict(&self, input: &PredictorInput<'_>, pi_ms: usize) -> Result<PredictionRun>;
}
