//! Order statistics, rank correlation and concordance.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Linear interpolation between order statistics at rank `(n - 1) * p`.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("quantile level {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

/// As [`quantile`] for data already sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups (only groups of two or more).
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        if j > i {
            groups.push(j - i + 1);
        }
        i = j + 1;
    }
    groups
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Alignment("pearson needs equal, non-empty inputs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's r_s with a two-sided p-value from the t approximation (n - 2 dof).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Alignment(format!(
            "spearman inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "spearman needs at least 5 pairs, got {}",
            x.len()
        )));
    }
    let r = pearson(&average_ranks(x), &average_ranks(y))?;
    Ok((r, correlation_p_value(r, x.len())))
}

pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Bonferroni flags for a family the size of `p_values`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    bonferroni_family(p_values, alpha, p_values.len())
}

/// Bonferroni flags where the family holds `family_size` tests.
pub fn bonferroni_family(p_values: &[f64], alpha: f64, family_size: usize) -> Vec<bool> {
    let threshold = alpha / family_size.max(1) as f64;
    p_values.iter().map(|&p| p < threshold).collect()
}

/// Kendall's W for `rankings[rater][subject]` scores, tie-corrected.
pub fn kendall_w(rankings: &[Vec<f64>]) -> Result<f64> {
    let m = rankings.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("kendall W needs >= 2 raters, got {m}")));
    }
    let n = rankings[0].len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("kendall W needs >= 3 subjects, got {n}")));
    }
    if rankings.iter().any(|r| r.len() != n) {
        return Err(Error::Alignment("raters scored different subject counts".into()));
    }
    let mut rank_sums = vec![0.0; n];
    let mut ties = 0.0;
    for scores in rankings {
        let groups = tie_groups(scores);
        if groups.first() == Some(&n) {
            return Err(Error::Undefined("a rater tied every subject".into()));
        }
        ties += groups.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(scores)) {
            *s += r;
        }
    }
    let (mf, nf) = (m as f64, n as f64);
    let mean = mf * (nf + 1.0) / 2.0;
    let s: f64 = rank_sums.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = mf * mf * (nf.powi(3) - nf) - mf * ties;
    if denom <= 0.0 {
        return Err(Error::Undefined("degenerate concordance denominator".into()));
    }
    Ok(12.0 * s / denom)
}
