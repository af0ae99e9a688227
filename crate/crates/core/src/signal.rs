//! Gaze recordings, CSV ingestion/export and Savitzky-Golay velocity.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SAMPLE_RATE_HZ;

/// Minimum number of valid samples a recording needs before it is evaluated.
pub const MIN_VALID_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: i64,
    pub x_dva: f64,
    pub y_dva: f64,
    pub valid: bool,
}

impl GazeSample {
    pub fn new(t_ms: i64, x_dva: f64, y_dva: f64) -> Self {
        let valid = x_dva.is_finite() && y_dva.is_finite();
        GazeSample {
            t_ms,
            x_dva,
            y_dva,
            valid,
        }
    }

    pub fn invalid(t_ms: i64) -> Self {
        GazeSample {
            t_ms,
            x_dva: f64::NAN,
            y_dva: f64::NAN,
            valid: false,
        }
    }
}

/// Stimulus position shown at `t_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub t_ms: i64,
    pub x_dva: f64,
    pub y_dva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeRecording {
    pub subject_id: String,
    pub session_id: String,
    pub rate_hz: u32,
    pub samples: Vec<GazeSample>,
    pub targets: Option<Vec<TargetPoint>>,
}

impl GazeRecording {
    /// Builds a recording, checking non-emptiness and the 1 ms timestamp step.
    pub fn new(
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
        samples: Vec<GazeSample>,
        targets: Option<Vec<TargetPoint>>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("recording has no samples".into()));
        }
        check_steps(samples.iter().map(|s| s.t_ms))?;
        Ok(GazeRecording {
            subject_id: subject_id.into(),
            session_id: session_id.into(),
            rate_hz: SAMPLE_RATE_HZ,
            samples,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.samples.get(idx).is_some_and(|s| s.valid)
    }

    pub fn position(&self, idx: usize) -> Option<(f64, f64)> {
        self.samples
            .get(idx)
            .filter(|s| s.valid)
            .map(|s| (s.x_dva, s.y_dva))
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.valid).count()
    }

    pub fn ensure_evaluable(&self) -> Result<()> {
        if self.rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Config(format!(
                "recording rate {} Hz, only {} Hz supported",
                self.rate_hz, SAMPLE_RATE_HZ
            )));
        }
        let n = self.valid_count();
        if n < MIN_VALID_SAMPLES {
            return Err(Error::InsufficientData(format!(
                "{} valid samples, need at least {}",
                n, MIN_VALID_SAMPLES
            )));
        }
        Ok(())
    }

    /// Target shown at sample `idx`, if the recording carries targets.
    pub fn target_at(&self, idx: usize) -> Option<(f64, f64)> {
        let targets = self.targets.as_ref()?;
        let t = self.samples.get(idx)?.t_ms;
        let pos = targets.partition_point(|p| p.t_ms <= t);
        if pos == 0 {
            return None;
        }
        let p = targets[pos - 1];
        Some((p.x_dva, p.y_dva))
    }
}

fn check_steps(times: impl Iterator<Item = i64>) -> Result<()> {
    let mut prev: Option<i64> = None;
    for (i, t) in times.enumerate() {
        if let Some(p) = prev {
            if t - p != 1 {
                return Err(Error::Rate {
                    row: i + 1,
                    step: t - p,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// CSV column names. Validity and target columns are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub time: String,
    pub x: String,
    pub y: String,
    pub valid: Option<String>,
    pub target_x: Option<String>,
    pub target_y: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            time: "t_ms".into(),
            x: "x_dva".into(),
            y: "y_dva".into(),
            valid: Some("valid".into()),
            target_x: Some("target_x".into()),
            target_y: Some("target_y".into()),
        }
    }
}

pub fn ingest_csv(path: &Path, mapping: &ColumnMapping) -> Result<GazeRecording> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_reader(file, mapping, &stem, "1")
}

/// Parses a gaze CSV. Row numbers in errors are 1-based data rows (header excluded).
pub fn ingest_reader<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    subject_id: &str,
    session_id: &str,
) -> Result<GazeRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput("csv has no header".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let t_col = required(&mapping.time)?;
    let x_col = required(&mapping.x)?;
    let y_col = required(&mapping.y)?;
    let v_col = mapping.valid.as_deref().and_then(find);
    let tx_col = mapping.target_x.as_deref().and_then(find);
    let ty_col = mapping.target_y.as_deref().and_then(find);

    let mut samples = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let t_ms = parse_time(field(t_col)).ok_or_else(|| Error::Parse {
            row,
            message: format!("bad timestamp `{}`", field(t_col)),
        })?;
        let x = parse_gaze(field(x_col), row)?;
        let y = parse_gaze(field(y_col), row)?;
        let flag = match v_col {
            Some(c) => parse_flag(field(c)).ok_or_else(|| Error::Parse {
                row,
                message: format!("bad validity flag `{}`", field(c)),
            })?,
            None => true,
        };
        let mut sample = GazeSample::new(t_ms, x, y);
        sample.valid &= flag;
        samples.push(sample);
        if let (Some(cx), Some(cy)) = (tx_col, ty_col) {
            let tx = parse_gaze(field(cx), row)?;
            let ty = parse_gaze(field(cy), row)?;
            // Per-row target columns collapse to the onset of each target.
            let changed = targets
                .last()
                .is_none_or(|p: &TargetPoint| p.x_dva != tx || p.y_dva != ty);
            if tx.is_finite() && ty.is_finite() && changed {
                targets.push(TargetPoint {
                    t_ms,
                    x_dva: tx,
                    y_dva: ty,
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("csv has no data rows".into()));
    }
    let targets = (tx_col.is_some() && ty_col.is_some() && !targets.is_empty()).then_some(targets);
    GazeRecording::new(subject_id, session_id, samples, targets)
}

fn parse_time(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0).then_some(f as i64)
}

fn parse_gaze(s: &str, row: usize) -> Result<f64> {
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("bad gaze value `{s}`"),
    })
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Writes the recording in the default column layout.
pub fn export_csv<W: Write>(rec: &GazeRecording, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_targets = rec.targets.is_some();
    let mut header = vec!["t_ms", "x_dva", "y_dva", "valid"];
    if with_targets {
        header.extend(["target_x", "target_y"]);
    }
    wtr.write_record(&header)?;
    for (i, s) in rec.samples.iter().enumerate() {
        let mut row = vec![
            s.t_ms.to_string(),
            s.x_dva.to_string(),
            s.y_dva.to_string(),
            u8::from(s.valid).to_string(),
        ];
        if with_targets {
            match rec.target_at(i) {
                Some((tx, ty)) => {
                    row.push(tx.to_string());
                    row.push(ty.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn export_csv_file(rec: &GazeRecording, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    export_csv(rec, std::io::BufWriter::new(file))
}

/// Where the derivative is evaluated inside the Savitzky-Golay window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffAlignment {
    /// Window centred on the sample (uses `window/2` future samples).
    #[default]
    Centered,
    /// Window ends at the sample; only past samples are used.
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffConfig {
    pub window: usize,
    pub order: usize,
    #[serde(default)]
    pub alignment: DiffAlignment,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            window: 7,
            order: 2,
            alignment: DiffAlignment::Centered,
        }
    }
}

impl DiffConfig {
    pub fn causal() -> Self {
        DiffConfig {
            alignment: DiffAlignment::Trailing,
            ..DiffConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "Savitzky-Golay window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.order < 1 || self.order >= self.window {
            return Err(Error::Config(format!(
                "Savitzky-Golay order must be in [1, window), got {}",
                self.order
            )));
        }
        Ok(())
    }

    /// Offset of the first window sample relative to the evaluated sample.
    fn lead(&self) -> usize {
        match self.alignment {
            DiffAlignment::Centered => self.window / 2,
            DiffAlignment::Trailing => self.window - 1,
        }
    }

    /// First-derivative weights per sample step (multiply by the rate for per-second units).
    pub fn derivative_weights(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let m = self.window;
        let p = self.order;
        let lead = self.lead() as f64;
        let design = DMatrix::from_fn(m, p + 1, |i, j| (i as f64 - lead).powi(j as i32));
        let normal = design.transpose() * &design;
        let inv = normal
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular Savitzky-Golay normal matrix".into()))?;
        let proj = inv * design.transpose();
        Ok(proj.row(1).iter().copied().collect())
    }
}

/// Per-sample velocity in dva/s; NaN where the window is incomplete or touches an invalid sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityTrace {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub v_radial: Vec<f64>,
}

impl VelocityTrace {
    pub fn len(&self) -> usize {
        self.vx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vx.is_empty()
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.v_radial.get(idx).is_some_and(|v| v.is_finite())
    }

    pub fn check_aligned(&self, rec: &GazeRecording) -> Result<()> {
        if self.vx.len() != rec.len() || self.vy.len() != rec.len() || self.v_radial.len() != rec.len()
        {
            return Err(Error::Alignment(format!(
                "velocity trace has {} entries, recording has {} samples",
                self.vx.len(),
                rec.len()
            )));
        }
        Ok(())
    }
}

pub fn compute_velocity(rec: &GazeRecording, cfg: &DiffConfig) -> Result<VelocityTrace> {
    let weights = cfg.derivative_weights()?;
    let n = rec.len();
    if cfg.window > n {
        return Err(Error::Config(format!(
            "differentiation window {} exceeds recording length {}",
            cfg.window, n
        )));
    }
    let rate = f64::from(rec.rate_hz);
    let lead = cfg.lead();
    let mut vx = vec![f64::NAN; n];
    let mut vy = vec![f64::NAN; n];
    let mut vr = vec![f64::NAN; n];
    // Length of the run of valid samples ending at each index.
    let mut run = vec![0usize; n];
    let mut acc = 0;
    for (i, s) in rec.samples.iter().enumerate() {
        acc = if s.valid { acc + 1 } else { 0 };
        run[i] = acc;
    }
    for i in lead..n {
        let start = i - lead;
        let end = start + cfg.window - 1;
        if end >= n || run[end] < cfg.window {
            continue;
        }
        let window = &rec.samples[start..=end];
        let (mut dx, mut dy) = (0.0, 0.0);
        for (w, s) in weights.iter().zip(window) {
            dx += w * s.x_dva;
            dy += w * s.y_dva;
        }
        dx *= rate;
        dy *= rate;
        vx[i] = dx;
        vy[i] = dy;
        vr[i] = dx.hypot(dy);
    }
    Ok(VelocityTrace {
        vx,
        vy,
        v_radial: vr,
    })
}
