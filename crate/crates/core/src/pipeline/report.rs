//! Report bundle rows and the evaluation of one prediction horizon.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::EventSegment;
use crate::error::{Error, Result};
use crate::features::SubjectFeatures;
use crate::metrics::subject::MIN_CLASS_RECORDS;
use crate::metrics::{
    cdf_curve, concordance, correlate_features, errors_in, linear_grid, median, subject_stats, CepAccumulator,
    ErrorColumn, ErrorRecord, EventClass, FeatureColumn, ProgressAccumulator, SubjectSummary,
};

use super::config::EvalConfig;

/// One line of `table1_stats.csv`; statistics a class cannot support are
/// left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub predictor: String,
    pub class: String,
    pub subjects: usize,
    pub records: usize,
    pub pooled_median: Option<f64>,
    pub median_of_medians: Option<f64>,
    pub min_median: Option<f64>,
    pub max_median: Option<f64>,
    pub ratio: Option<f64>,
    pub iqr_of_medians: Option<f64>,
}

/// One line of `subject_profiles_<class>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub predictor: String,
    pub subject_id: String,
    pub count: usize,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub predictor: String,
    pub class: String,
    pub n: usize,
    pub r_s: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KccRow {
    pub class: String,
    pub kendall_w: Option<f64>,
    pub subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub predictor: String,
    pub bin: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub count: usize,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepRow {
    pub predictor: String,
    pub ms_after_end: usize,
    pub count: usize,
    pub median: f64,
}

/// Scored predictions of one predictor for one evaluated subject.
pub struct ScoredSubject<'a> {
    pub subject_id: &'a str,
    pub segs: &'a [EventSegment],
    pub records: Vec<ErrorRecord>,
}

/// Everything derived from one predictor's records, in subject order.
pub struct PredictorSummary {
    pub predictor: String,
    /// Per class: per-subject errors in that class.
    per_subject: BTreeMap<EventClass, Vec<(String, Vec<f64>)>>,
    progress: Result<Vec<crate::metrics::ProgressBin>>,
    cep: Vec<(usize, usize, f64)>,
}

impl PredictorSummary {
    pub fn new(predictor: &str, subjects: &[ScoredSubject<'_>], cfg: &EvalConfig) -> Self {
        let [lo, hi] = cfg.progress_amplitude;
        let mut progress = ProgressAccumulator::new(lo, hi, cfg.progress_bins);
        let mut cep = CepAccumulator::default();
        let mut per_subject: BTreeMap<EventClass, Vec<(String, Vec<f64>)>> = BTreeMap::new();
        for s in subjects {
            progress.add(&s.records, s.segs);
            cep.add(&s.records, s.segs);
            for class in EventClass::ALL {
                per_subject
                    .entry(class)
                    .or_default()
                    .push((s.subject_id.to_string(), errors_in(&s.records, class)));
            }
        }
        PredictorSummary {
            predictor: predictor.to_string(),
            per_subject,
            progress: progress.finish(),
            cep: cep.finish(),
        }
    }

    fn class(&self, class: EventClass) -> &[(String, Vec<f64>)] {
        self.per_subject.get(&class).map_or(&[], |v| v.as_slice())
    }

    pub fn pooled(&self, class: EventClass) -> Vec<f64> {
        self.class(class).iter().flat_map(|(_, e)| e.iter().copied()).collect()
    }

    /// Per-subject median in `class`, absent below the record minimum.
    pub fn subject_medians(&self, class: EventClass) -> Vec<Option<f64>> {
        self.class(class)
            .iter()
            .map(|(_, e)| if e.len() >= MIN_CLASS_RECORDS { median(e).ok() } else { None })
            .collect()
    }

    pub fn table1(&self, class: EventClass) -> Table1Row {
        let pooled = self.pooled(class);
        let stats = subject_stats(self.class(class), class).ok();
        Table1Row {
            predictor: self.predictor.clone(),
            class: class.name().to_string(),
            subjects: stats.as_ref().map_or(0, |s| s.subjects.len()),
            records: pooled.len(),
            pooled_median: median(&pooled).ok(),
            median_of_medians: stats.as_ref().map(|s| s.median_of_medians),
            min_median: stats.as_ref().map(|s| s.min_median),
            max_median: stats.as_ref().map(|s| s.max_median),
            ratio: stats.as_ref().map(|s| s.ratio),
            iqr_of_medians: stats.as_ref().map(|s| s.iqr_of_medians),
        }
    }

    pub fn profiles(&self, class: EventClass) -> Vec<ProfileRow> {
        self.class(class)
            .iter()
            .filter(|(_, e)| e.len() >= MIN_CLASS_RECORDS)
            .filter_map(|(id, e)| SubjectSummary::from_errors(id, e).ok())
            .map(|s| ProfileRow {
                predictor: self.predictor.clone(),
                subject_id: s.subject_id,
                count: s.count,
                median: s.median,
                p25: s.p25,
                p75: s.p75,
                iqr: s.iqr,
                min: s.min,
                max: s.max,
            })
            .collect()
    }

    pub fn progress_rows(&self) -> Vec<ProgressRow> {
        match &self.progress {
            Ok(bins) => bins
                .iter()
                .enumerate()
                .map(|(k, b)| ProgressRow {
                    predictor: self.predictor.clone(),
                    bin: k,
                    t_lo: b.lo,
                    t_hi: b.hi,
                    count: b.count,
                    median: (b.count > 0).then_some(b.median),
                })
                .collect(),
            Err(_) => Vec::new(),
        }
    }

    pub fn cep_rows(&self) -> Vec<CepRow> {
        self.cep
            .iter()
            .map(|&(ms, count, median)| CepRow {
                predictor: self.predictor.clone(),
                ms_after_end: ms,
                count,
                median,
            })
            .collect()
    }
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Same as [`csv_bytes`] but writes the header even without rows.
pub fn csv_bytes_with_header<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        return w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()));
    }
    csv_bytes(rows)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Error CDF of every predictor for one class on a shared grid.
pub fn cdf_table(summaries: &[PredictorSummary], class: EventClass, cfg: &EvalConfig) -> Result<Vec<u8>> {
    let grid = linear_grid(cfg.cdf_max_dva, cfg.cdf_points);
    let curves: Vec<Option<Vec<f64>>> = summaries
        .iter()
        .map(|s| cdf_curve(&s.pooled(class), &grid).ok())
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["error_dva".to_string()];
    header.extend(summaries.iter().map(|s| s.predictor.clone()));
    w.write_record(&header)?;
    for (k, g) in grid.iter().enumerate() {
        let mut row = vec![g.to_string()];
        row.extend(curves.iter().map(|c| c.as_ref().map_or(String::new(), |c| c[k].to_string())));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Spearman correlations per class. Features and error columns with fewer
/// than the minimum number of complete subjects are skipped.
pub fn correlation_rows(
    summaries: &[PredictorSummary],
    features: &[Option<&SubjectFeatures>],
    alpha: f64,
) -> Result<Vec<CorrelationRow>> {
    use crate::metrics::subject::MIN_CORRELATION_SUBJECTS;
    let complete = |a: &[Option<f64>], b: &[Option<f64>]| {
        a.iter().zip(b).filter(|(x, y)| x.is_some_and(f64::is_finite) && y.is_some_and(f64::is_finite)).count()
    };
    let feature_cols: Vec<FeatureColumn> = SubjectFeatures::COLUMNS
        .iter()
        .map(|name| FeatureColumn {
            name: name.to_string(),
            values: features.iter().map(|f| f.and_then(|f| f.get(name))).collect(),
        })
        .collect();
    let mut out = Vec::new();
    for class in EventClass::ALL {
        let errors: Vec<ErrorColumn> = summaries
            .iter()
            .map(|s| ErrorColumn {
                model: s.predictor.clone(),
                class,
                values: s.subject_medians(class),
            })
            .collect();
        let usable: Vec<FeatureColumn> = feature_cols
            .iter()
            .filter(|f| errors.iter().all(|e| complete(&f.values, &e.values) >= MIN_CORRELATION_SUBJECTS))
            .cloned()
            .collect();
        if usable.is_empty() {
            continue;
        }
        for r in correlate_features(&usable, &errors, alpha)? {
            out.push(CorrelationRow {
                feature: r.feature,
                predictor: r.model,
                class: class.name().to_string(),
                n: r.n,
                r_s: r.r_s,
                p_value: r.p_value,
                significant: r.significant_after_bonferroni,
            });
        }
    }
    Ok(out)
}

/// Kendall's W across predictors per class; absent when it is undefined.
pub fn kcc_rows(summaries: &[PredictorSummary]) -> Vec<KccRow> {
    EventClass::ALL
        .iter()
        .map(|&class| {
            let cols: Vec<ErrorColumn> = summaries
                .iter()
                .map(|s| ErrorColumn {
                    model: s.predictor.clone(),
                    class,
                    values: s.subject_medians(class),
                })
                .collect();
            let (w, n) = match concordance(&cols) {
                Ok((w, n)) => (Some(w), n),
                Err(_) => (None, 0),
            };
            KccRow {
                class: class.name().to_string(),
                kendall_w: w,
                subjects: n,
            }
        })
        .collect()
}
