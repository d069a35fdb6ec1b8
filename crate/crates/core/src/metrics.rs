//! Agreement metrics: concordance correlation, Pearson correlation and
//! zero-match precision/recall/F1, aggregated per dimension.
//!
//! All moments use the population divisor `n`. Undefined statistics are
//! carried as `None` and never folded into averages as zeros.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::AffectRecord;
use crate::dimension::Dimension;
use crate::parser::{ScoreFlag, ScoreVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty series")]
    Empty,
    #[error("series lengths differ ({x} predictions vs {y} gold values)")]
    LengthMismatch { x: usize, y: usize },
    #[error("pearson correlation needs at least 2 pairs, got {0}")]
    TooShort(usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("prediction id `{0}` not present in gold records")]
    UnknownId(String),
    #[error("duplicate prediction id `{0}`")]
    DuplicateId(String),
    #[error("prediction `{id}` has no score for {dimension}")]
    MissingScore { id: String, dimension: Dimension },
    #[error("gold record `{id}` has no score for {dimension}")]
    MissingGold { id: String, dimension: Dimension },
    #[error("no predictions overlap the gold records")]
    EmptyIntersection,
    #[error("no dimensions requested")]
    NoDimensions,
}

/// Predictions aligned with gold values by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    ids: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(ids: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, MetricsError> {
        check_pair(&x, &y)?;
        if ids.len() != x.len() {
            return Err(MetricsError::LengthMismatch {
                x: ids.len(),
                y: x.len(),
            });
        }
        Ok(Self { ids, x, y })
    }

    /// Pair by id. Every prediction id must exist in `gold`; gold ids without a
    /// prediction are skipped. Order follows `predictions`.
    pub fn align(
        predictions: &[(String, f64)],
        gold: &HashMap<String, f64>,
    ) -> Result<Self, MetricsError> {
        let mut ids = Vec::with_capacity(predictions.len());
        let mut x = Vec::with_capacity(predictions.len());
        let mut y = Vec::with_capacity(predictions.len());
        for (id, p) in predictions {
            let g = gold
                .get(id)
                .ok_or_else(|| MetricsError::UnknownId(id.clone()))?;
            ids.push(id.clone());
            x.push(*p);
            y.push(*g);
        }
        Self::new(ids, x, y)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn predictions(&self) -> &[f64] {
        &self.x
    }

    pub fn gold(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn ccc(&self) -> f64 {
        ccc(&self.x, &self.y).expect("validated at construction")
    }

    pub fn pearson(&self) -> Result<Option<f64>, MetricsError> {
        pearson(&self.x, &self.y)
    }

    pub fn zero_match(&self, epsilon: f64) -> ZeroMatch {
        zero_match(&self.x, &self.y, epsilon).expect("validated at construction")
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = x
        .iter()
        .zip(y)
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
    x_constant: bool,
    y_constant: bool,
}

fn moments(x: &[f64], y: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Moments {
        mean_x,
        mean_y,
        var_x: sxx / n,
        var_y: syy / n,
        cov: sxy / n,
        x_constant: x.iter().all(|v| *v == x[0]),
        y_constant: y.iter().all(|v| *v == y[0]),
    }
}

/// Concordance correlation coefficient in covariance form:
/// `2·cov(x,y) / (σx² + σy² + (μx − μy)²)`.
///
/// Degenerate cases: both series constant and equal returns 1; otherwise a
/// constant series returns 0.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    let m = moments(x, y);
    if m.x_constant && m.y_constant && x[0] == y[0] {
        return Ok(1.0);
    }
    if m.x_constant || m.y_constant {
        return Ok(0.0);
    }
    let shift = m.mean_x - m.mean_y;
    let denom = m.var_x + m.var_y + shift * shift;
    Ok((2.0 * m.cov / denom).clamp(-1.0, 1.0))
}

/// Population Pearson correlation; `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(MetricsError::TooShort(x.len()));
    }
    let m = moments(x, y);
    if m.x_constant || m.y_constant || m.var_x == 0.0 || m.var_y == 0.0 {
        return Ok(None);
    }
    Ok(Some((m.cov / (m.var_x.sqrt() * m.var_y.sqrt())).clamp(-1.0, 1.0)))
}

/// Confusion summary for the "score is zero" class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroMatch {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Gold values exactly 0.
    pub support: usize,
    pub predicted_zero: usize,
    pub true_positive: usize,
}

/// Zero-match statistics. A prediction counts as zero when `|x| <= epsilon`;
/// a gold value counts only when it is exactly 0.
pub fn zero_match(x: &[f64], y: &[f64], epsilon: f64) -> Result<ZeroMatch, MetricsError> {
    check_pair(x, y)?;
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut support = 0usize;
    for (p, g) in x.iter().zip(y) {
        let pred_zero = p.abs() <= epsilon;
        let gold_zero = *g == 0.0;
        predicted += pred_zero as usize;
        support += gold_zero as usize;
        tp += (pred_zero && gold_zero) as usize;
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        // Both defined with no true positives: every zero call was wrong.
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(ZeroMatch {
        precision,
        recall,
        f1,
        support,
        predicted_zero: predicted,
        true_positive: tp,
    })
}

/// Metrics for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub dimension: Dimension,
    pub n: usize,
    pub ccc: f64,
    pub pearson: Option<f64>,
    pub zero_precision: Option<f64>,
    pub zero_recall: Option<f64>,
    pub zero_f1: Option<f64>,
    pub zero_support: usize,
    /// Predictions for this dimension that were imputed rather than parsed.
    #[serde(default)]
    pub imputed: usize,
    #[serde(default)]
    pub clamped: usize,
}

impl DimensionMetrics {
    pub fn from_series(dimension: Dimension, series: &PairedSeries, epsilon: f64) -> Self {
        let zm = series.zero_match(epsilon);
        Self {
            dimension,
            n: series.len(),
            ccc: series.ccc(),
            pearson: series.pearson().ok().flatten(),
            zero_precision: zm.precision,
            zero_recall: zm.recall,
            zero_f1: zm.f1,
            zero_support: zm.support,
            imputed: 0,
            clamped: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<DimensionMetrics>,
    pub macro_ccc: Option<f64>,
    pub macro_pearson: Option<f64>,
    pub macro_zero_f1: Option<f64>,
    /// Number of prediction/gold pairs used.
    pub n: usize,
    pub epsilon: f64,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<DimensionMetrics>, n: usize, epsilon: f64) -> Self {
        let macro_ccc = mean_defined(rows.iter().map(|r| Some(r.ccc)));
        let macro_pearson = mean_defined(rows.iter().map(|r| r.pearson));
        let macro_zero_f1 = mean_defined(rows.iter().map(|r| r.zero_f1));
        Self {
            rows,
            macro_ccc,
            macro_pearson,
            macro_zero_f1,
            n,
            epsilon,
        }
    }

    pub fn row(&self, dimension: Dimension) -> Option<&DimensionMetrics> {
        self.rows.iter().find(|r| r.dimension == dimension)
    }

    pub fn dimensions(&self) -> Vec<Dimension> {
        self.rows.iter().map(|r| r.dimension).collect()
    }
}

/// Mean over the defined cells only.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Score a set of parsed predictions against gold records.
///
/// Every prediction id must name a gold record and carry a score for every
/// requested dimension. Gold records without a prediction are ignored.
pub fn evaluate(
    predictions: &[(String, ScoreVector)],
    gold: &[AffectRecord],
    dimensions: &[Dimension],
    epsilon: f64,
) -> Result<MetricReport, MetricsError> {
    if dimensions.is_empty() {
        return Err(MetricsError::NoDimensions);
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyIntersection);
    }
    let by_id: HashMap<&str, &AffectRecord> = gold.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut paired = Vec::with_capacity(predictions.len());
    for (id, scores) in predictions {
        let record = by_id
            .get(id.as_str())
            .ok_or_else(|| MetricsError::UnknownId(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
        paired.push((id, scores, *record));
    }

    let mut rows = Vec::with_capacity(dimensions.len());
    for &dim in dimensions {
        let mut ids = Vec::with_capacity(paired.len());
        let mut x = Vec::with_capacity(paired.len());
        let mut y = Vec::with_capacity(paired.len());
        let mut imputed = 0;
        let mut clamped = 0;
        for (id, scores, record) in &paired {
            let p = scores.get(dim).ok_or_else(|| MetricsError::MissingScore {
                id: (*id).clone(),
                dimension: dim,
            })?;
            let g = record.gold.get(&dim).ok_or_else(|| MetricsError::MissingGold {
                id: (*id).clone(),
                dimension: dim,
            })?;
            match scores.flag(dim) {
                Some(ScoreFlag::Imputed) => imputed += 1,
                Some(ScoreFlag::Clamped) => clamped += 1,
                _ => {}
            }
            ids.push((*id).clone());
            x.push(p);
            y.push(*g);
        }
        let series = PairedSeries::new(ids, x, y)?;
        let mut row = DimensionMetrics::from_series(dim, &series, epsilon);
        row.imputed = imputed;
        row.clamped = clamped;
        rows.push(row);
    }
    Ok(MetricReport::from_rows(rows, paired.len(), epsilon))
}
