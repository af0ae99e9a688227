use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::scoring::EventClass;
use super::stats::{bonferroni_family, kendall_w, quantile_sorted, spearman};

/// Fewest records a subject needs in a class to enter the cohort statistics.
pub const MIN_CLASS_RECORDS: usize = 30;
/// Fewest complete subjects for a feature correlation.
pub const MIN_CORRELATION_SUBJECTS: usize = 10;

/// Distribution of one subject's errors in one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub count: usize,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

impl SubjectSummary {
    pub fn from_errors(subject_id: &str, errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InsufficientData(format!("no errors for {subject_id}")));
        }
        let mut v = errors.to_vec();
        v.sort_by(f64::total_cmp);
        let p25 = quantile_sorted(&v, 0.25);
        let p75 = quantile_sorted(&v, 0.75);
        Ok(SubjectSummary {
            subject_id: subject_id.to_string(),
            count: v.len(),
            median: quantile_sorted(&v, 0.5),
            p25,
            p75,
            iqr: p75 - p25,
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

/// Per-subject summaries for one class plus the spread of their medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub class: EventClass,
    pub subjects: Vec<SubjectSummary>,
    pub min_median: f64,
    pub max_median: f64,
    /// `max_median / min_median`.
    pub ratio: f64,
    pub iqr_of_medians: f64,
    pub median_of_medians: f64,
}

impl SubjectStats {
    pub fn median_of(&self, subject_id: &str) -> Option<f64> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == subject_id)
            .map(|s| s.median)
    }
}

/// `per_subject` holds each subject's errors already restricted to `class`.
/// Subjects with fewer than [`MIN_CLASS_RECORDS`] errors are left out.
pub fn subject_stats(per_subject: &[(String, Vec<f64>)], class: EventClass) -> Result<SubjectStats> {
    let subjects: Vec<SubjectSummary> = per_subject
        .iter()
        .filter(|(_, e)| e.len() >= MIN_CLASS_RECORDS)
        .map(|(id, e)| SubjectSummary::from_errors(id, e))
        .collect::<Result<_>>()?;
    if subjects.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no subject has {MIN_CLASS_RECORDS} records in class {}",
            class.name()
        )));
    }
    let mut medians: Vec<f64> = subjects.iter().map(|s| s.median).collect();
    medians.sort_by(f64::total_cmp);
    let min_median = medians[0];
    let max_median = medians[medians.len() - 1];
    Ok(SubjectStats {
        class,
        min_median,
        max_median,
        ratio: max_median / min_median,
        iqr_of_medians: quantile_sorted(&medians, 0.75) - quantile_sorted(&medians, 0.25),
        median_of_medians: quantile_sorted(&medians, 0.5),
        subjects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub feature: String,
    pub model: String,
    pub class: EventClass,
    pub n: usize,
    pub r_s: f64,
    pub p_value: f64,
    pub significant_after_bonferroni: bool,
}

/// One named per-subject column; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Per-subject median errors of one model in one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorColumn {
    pub model: String,
    pub class: EventClass,
    pub values: Vec<Option<f64>>,
}

fn complete_pairs(a: &[Option<f64>], b: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Some((*x, *y)),
            _ => None,
        })
        .unzip()
}

/// Spearman correlation of every feature with every error column. The
/// Bonferroni family for a class is all (feature, model) pairs tested in it.
pub fn correlate_features(
    features: &[FeatureColumn],
    errors: &[ErrorColumn],
    alpha: f64,
) -> Result<Vec<CorrelationResult>> {
    let mut out = Vec::new();
    for col in errors {
        for f in features {
            if f.values.len() != col.values.len() {
                return Err(Error::Alignment(format!(
                    "feature {} has {} subjects, error column {} has {}",
                    f.name,
                    f.values.len(),
                    col.model,
                    col.values.len()
                )));
            }
            let (x, y) = complete_pairs(&f.values, &col.values);
            if x.len() < MIN_CORRELATION_SUBJECTS {
                return Err(Error::InsufficientData(format!(
                    "{} complete subjects for {} vs {} {}, need {}",
                    x.len(),
                    f.name,
                    col.model,
                    col.class.name(),
                    MIN_CORRELATION_SUBJECTS
                )));
            }
            let (r_s, p_value) = spearman(&x, &y)?;
            out.push(CorrelationResult {
                feature: f.name.clone(),
                model: col.model.clone(),
                class: col.class,
                n: x.len(),
                r_s,
                p_value,
                significant_after_bonferroni: false,
            });
        }
    }
    for class in EventClass::ALL {
        let idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].class == class).collect();
        let p: Vec<f64> = idx.iter().map(|&i| out[i].p_value).collect();
        for (&i, flag) in idx.iter().zip(bonferroni_family(&p, alpha, p.len())) {
            out[i].significant_after_bonferroni = flag;
        }
    }
    Ok(out)
}

/// Kendall's W across models for one class, over subjects present for
/// every model.
pub fn concordance(columns: &[ErrorColumn]) -> Result<(f64, usize)> {
    if columns.len() < 2 {
        return Err(Error::InsufficientData("concordance needs at least two models".into()));
    }
    let n = columns[0].values.len();
    let keep: Vec<usize> = (0..n)
        .filter(|&i| {
            columns
                .iter()
                .all(|c| c.values.get(i).copied().flatten().is_some_and(f64::is_finite))
        })
        .collect();
    let rankings: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| keep.iter().map(|&i| c.values[i].unwrap_or(f64::NAN)).collect())
        .collect();
    Ok((kendall_w(&rankings)?, keep.len()))
}
