//! Agreement between two decision columns.
//!
//! "Truth" is the reference column (usually the final human decision) and
//! "predicted" the column being scored. `Included` is the positive class.
//! Rows where either side is missing, `Unparseable` or `Error` are counted in
//! [`ConfusionMatrix::dropped`] and excluded from every ratio.

mod report;

use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Decision;

pub use report::{confusion_csv, confusion_svg, format_ratio, table_csv, TABLE_COLUMNS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("truth has {truth} rows but predicted has {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no comparable rows (both sides included/excluded)")]
    EmptyMatrix,
    #[error("no rows with truth `{0}`")]
    ZeroSupport(Decision),
    #[error("`{0}` is not a class; use included or excluded")]
    NotAClass(Decision),
    #[error("nothing to summarize")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// truth included, predicted included
    pub tp: u64,
    /// truth included, predicted excluded
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// truth excluded, predicted included
    pub fp: u64,
    /// truth excluded, predicted excluded
    pub tn: u64,
    pub dropped: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self {
            tp,
            fn_,
            fp,
            tn,
            dropped: 0,
        }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Rows whose truth is `class`.
    pub fn support(&self, class: Decision) -> Result<u64, MetricsError> {
        match class {
            Decision::Included => Ok(self.tp + self.fn_),
            Decision::Excluded => Ok(self.fp + self.tn),
            other => Err(MetricsError::NotAClass(other)),
        }
    }

    fn require_rows(&self) -> Result<u64, MetricsError> {
        match self.n() {
            0 => Err(MetricsError::EmptyMatrix),
            n => Ok(n),
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fn_: self.fn_ + o.fn_,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            dropped: self.dropped + o.dropped,
        }
    }
}

impl Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Tallies paired decisions. Accepts `&[Decision]` or `&[Option<Decision>]`.
pub fn confusion_matrix<T>(truth: &[T], predicted: &[T]) -> Result<ConfusionMatrix, MetricsError>
where
    T: Copy + Into<Option<Decision>>,
{
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t.into(), p.into()) {
            (Some(Decision::Included), Some(Decision::Included)) => cm.tp += 1,
            (Some(Decision::Included), Some(Decision::Excluded)) => cm.fn_ += 1,
            (Some(Decision::Excluded), Some(Decision::Included)) => cm.fp += 1,
            (Some(Decision::Excluded), Some(Decision::Excluded)) => cm.tn += 1,
            _ => cm.dropped += 1,
        }
    }
    Ok(cm)
}

/// Absolute agreement, (tp + tn) / n.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let n = cm.require_rows()?;
    Ok((cm.tp + cm.tn) as f64 / n as f64)
}

/// Share of rows with truth `class` that were predicted as `class`.
pub fn sensitivity(cm: &ConfusionMatrix, class: Decision) -> Result<f64, MetricsError> {
    let support = cm.support(class)?;
    if support == 0 {
        return Err(MetricsError::ZeroSupport(class));
    }
    let hits = match class {
        Decision::Included => cm.tp,
        _ => cm.tn,
    };
    Ok(hits as f64 / support as f64)
}

/// Cohen's kappa, `None` when chance agreement is 1 (both raters constant on
/// the same class).
///
/// Evaluated as `(n·agree − S) / (n² − S)` with `S = n²·p_e` in integers, so
/// the degenerate case is detected exactly.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<Option<f64>, MetricsError> {
    let n = cm.require_rows()? as u128;
    let (tp, fn_, fp, tn) = (cm.tp as u128, cm.fn_ as u128, cm.fp as u128, cm.tn as u128);
    let chance = (tp + fn_) * (tp + fp) + (fp + tn) * (fn_ + tn);
    let n_sq = n * n;
    if chance == n_sq {
        return Ok(None);
    }
    let observed = n * (tp + tn);
    Ok(Some(
        (observed as f64 - chance as f64) / (n_sq as f64 - chance as f64),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a 0/0 ratio was reported as 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub included: ClassMetrics,
    pub excluded: ClassMetrics,
    pub accuracy: f64,
    pub macro_avg: AveragedMetrics,
    pub weighted_avg: AveragedMetrics,
}

impl ClassificationReport {
    pub fn zero_division(&self) -> bool {
        self.included.zero_division || self.excluded.zero_division
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn class_metrics(hits: u64, predicted: u64, support: u64) -> ClassMetrics {
    let (precision, p_zero) = ratio(hits, predicted);
    let (recall, r_zero) = ratio(hits, support);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support,
        zero_division: p_zero || r_zero,
    }
}

/// Per-class precision/recall/F1 with macro and support-weighted averages.
/// 0/0 ratios are reported as 0 and flagged.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let n = cm.require_rows()? as f64;
    let included = class_metrics(cm.tp, cm.tp + cm.fp, cm.tp + cm.fn_);
    let excluded = class_metrics(cm.tn, cm.tn + cm.fn_, cm.tn + cm.fp);
    let average = |w_inc: f64, w_exc: f64| AveragedMetrics {
        precision: w_inc * included.precision + w_exc * excluded.precision,
        recall: w_inc * included.recall + w_exc * excluded.recall,
        f1: w_inc * included.f1 + w_exc * excluded.f1,
    };
    Ok(ClassificationReport {
        included,
        excluded,
        accuracy: accuracy(cm)?,
        macro_avg: average(0.5, 0.5),
        weighted_avg: average(included.support as f64 / n, excluded.support as f64 / n),
    })
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub n: u64,
    pub n_included: u64,
    pub accuracy: f64,
    pub sensitivity_included: Option<f64>,
    pub sensitivity_excluded: Option<f64>,
    pub kappa: Option<f64>,
}

impl TableRow {
    pub fn n_excluded(&self) -> u64 {
        self.n - self.n_included
    }
}

/// Everything computed for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dataset: String,
    pub n: u64,
    pub n_included: u64,
    pub accuracy: f64,
    pub sensitivity_included: Option<f64>,
    pub sensitivity_excluded: Option<f64>,
    pub kappa: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
}

impl DatasetMetrics {
    pub fn compute(dataset: impl Into<String>, cm: ConfusionMatrix) -> Result<Self, MetricsError> {
        let optional = |r: Result<f64, MetricsError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(MetricsError::ZeroSupport(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            dataset: dataset.into(),
            n: cm.n(),
            n_included: cm.support(Decision::Included)?,
            accuracy: accuracy(&cm)?,
            sensitivity_included: optional(sensitivity(&cm, Decision::Included))?,
            sensitivity_excluded: optional(sensitivity(&cm, Decision::Excluded))?,
            kappa: cohens_kappa(&cm)?,
            confusion: cm,
            report: classification_report(&cm)?,
        })
    }

    pub fn table_row(&self) -> TableRow {
        TableRow {
            dataset: self.dataset.clone(),
            n: self.n,
            n_included: self.n_included,
            accuracy: self.accuracy,
            sensitivity_included: self.sensitivity_included,
            sensitivity_excluded: self.sensitivity_excluded,
            kappa: self.kappa,
        }
    }
}

pub const SUMMARY_LABEL: &str = "Total (Weighted Average)";
pub const WEIGHTING_NOTE: &str = "accuracy weighted by dataset size n; sensitivity (included) \
weighted by each dataset's included count; sensitivity (excluded) weighted by each dataset's \
excluded count; kappa is not aggregated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSummary {
    pub label: String,
    pub n: u64,
    pub n_included: u64,
    pub accuracy: f64,
    pub sensitivity_included: Option<f64>,
    pub sensitivity_excluded: Option<f64>,
    pub weighting: String,
}

/// Averages per-dataset rows, each ratio weighted by its own denominator.
///
/// Accuracy uses `n / Σn`. A sensitivity uses the dataset's support for that
/// class, which makes it equal to the pooled sensitivity whenever the rows
/// are internally consistent. Datasets without support for a class do not
/// contribute to that class's sensitivity.
pub fn weighted_summary(rows: &[TableRow]) -> Result<WeightedSummary, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let weighted = |pick: &dyn Fn(&TableRow) -> Option<(f64, u64)>| -> Option<f64> {
        let (sum, weight) = rows
            .iter()
            .filter_map(pick)
            .filter(|&(_, w)| w > 0)
            .fold((0.0, 0u64), |(s, tw), (v, w)| (s + v * w as f64, tw + w));
        (weight > 0).then(|| sum / weight as f64)
    };
    Ok(WeightedSummary {
        label: SUMMARY_LABEL.to_string(),
        n: rows.iter().map(|r| r.n).sum(),
        n_included: rows.iter().map(|r| r.n_included).sum(),
        accuracy: weighted(&|r| Some((r.accuracy, r.n))).ok_or(MetricsError::EmptyMatrix)?,
        sensitivity_included: weighted(&|r| r.sensitivity_included.map(|s| (s, r.n_included))),
        sensitivity_excluded: weighted(&|r| r.sensitivity_excluded.map(|s| (s, r.n_excluded()))),
        weighting: WEIGHTING_NOTE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Decision::{Excluded as E, Included as I, Unparseable as U};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion_matrix(&[I, E], &[I, E]).unwrap(), ConfusionMatrix::from_counts(1, 0, 0, 1));
        let cm = confusion_matrix(&[I, E, I], &[E, I, U]).unwrap();
        assert_eq!((cm.tp, cm.fn_, cm.fp, cm.tn, cm.dropped), (0, 1, 1, 0, 1));
        assert_eq!(
            confusion_matrix(&[Some(I), None], &[Some(I), Some(E)]).unwrap().dropped,
            1
        );
        assert_eq!(
            confusion_matrix(&[I], &[I, E]),
            Err(MetricsError::LengthMismatch { truth: 1, predicted: 2 })
        );
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&ConfusionMatrix::from_counts(1, 0, 0, 1)).unwrap(), 1.0);
        let llm = ConfusionMatrix::from_counts(23, 0, 165, 2682);
        assert!(close(accuracy(&llm).unwrap(), 0.9425, 5e-5));
        let ivm = ConfusionMatrix::from_counts(24, 11, 59, 185);
        assert!(close(accuracy(&ivm).unwrap(), 0.7491, 5e-5));
        assert_eq!(accuracy(&ConfusionMatrix::default()), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn sensitivity_examples() {
        let cm = ConfusionMatrix::from_counts(3, 1, 0, 0);
        assert_eq!(sensitivity(&cm, I).unwrap(), 0.75);
        assert_eq!(sensitivity(&cm, E), Err(MetricsError::ZeroSupport(E)));
        assert_eq!(sensitivity(&cm, U), Err(MetricsError::NotAClass(U)));
        let ivm = ConfusionMatrix::from_counts(24, 11, 59, 185);
        assert!(close(sensitivity(&ivm, I).unwrap(), 0.6857, 5e-5));
        let llm = ConfusionMatrix::from_counts(23, 0, 165, 2682);
        assert_eq!(sensitivity(&llm, I).unwrap(), 1.0);
    }

    #[test]
    fn kappa_examples() {
        // p_o = 0.8, p_e = 0.5
        let k = cohens_kappa(&ConfusionMatrix::from_counts(4, 1, 1, 4)).unwrap().unwrap();
        assert!(close(k, 0.6, 1e-15));
        assert_eq!(cohens_kappa(&ConfusionMatrix::from_counts(0, 0, 0, 7)).unwrap(), None);
        assert_eq!(cohens_kappa(&ConfusionMatrix::from_counts(5, 0, 0, 0)).unwrap(), None);
        let llm = cohens_kappa(&ConfusionMatrix::from_counts(23, 0, 165, 2682)).unwrap().unwrap();
        assert!(close(llm, 0.207, 5e-4), "{llm}");
        // perfect agreement with both classes present
        assert_eq!(cohens_kappa(&ConfusionMatrix::from_counts(3, 0, 0, 2)).unwrap(), Some(1.0));
        assert_eq!(cohens_kappa(&ConfusionMatrix::default()), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn report_perfect_and_degenerate() {
        let r = classification_report(&ConfusionMatrix::from_counts(5, 0, 0, 5)).unwrap();
        for m in [r.included, r.excluded] {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert!(!r.zero_division());

        let r = classification_report(&ConfusionMatrix::from_counts(0, 5, 0, 5)).unwrap();
        assert_eq!(r.included.precision, 0.0);
        assert_eq!(r.included.f1, 0.0);
        assert!(r.included.zero_division);
        assert_eq!(r.excluded.recall, 1.0);
        assert_eq!(r.excluded.precision, 0.5);
    }

    #[test]
    fn summary_single_dataset_is_identity() {
        let m = DatasetMetrics::compute("IVM", ConfusionMatrix::from_counts(24, 11, 59, 185)).unwrap();
        let s = weighted_summary(&[m.table_row()]).unwrap();
        assert!(close(s.accuracy, m.accuracy, 1e-15));
        assert!(close(s.sensitivity_included.unwrap(), m.sensitivity_included.unwrap(), 1e-15));
        assert!(close(s.sensitivity_excluded.unwrap(), m.sensitivity_excluded.unwrap(), 1e-15));
    }

    #[test]
    fn summary_weights_by_size() {
        let row = |n, acc| TableRow {
            dataset: String::new(),
            n,
            n_included: 0,
            accuracy: acc,
            sensitivity_included: None,
            sensitivity_excluded: None,
            kappa: None,
        };
        let s = weighted_summary(&[row(100, 0.9), row(300, 0.8)]).unwrap();
        assert!(close(s.accuracy, 0.825, 1e-12));
        assert_eq!(s.sensitivity_included, None);
        assert_eq!(weighted_summary(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn summary_matches_pooled_sensitivities() {
        let a = ConfusionMatrix::from_counts(24, 11, 59, 185);
        let b = ConfusionMatrix::from_counts(23, 0, 165, 2682);
        let rows: Vec<_> = [a, b]
            .iter()
            .map(|cm| DatasetMetrics::compute("x", *cm).unwrap().table_row())
            .collect();
        let s = weighted_summary(&rows).unwrap();
        let pooled = DatasetMetrics::compute("all", a + b).unwrap();
        assert!(close(s.accuracy, pooled.accuracy, 1e-12));
        assert!(close(s.sensitivity_included.unwrap(), pooled.sensitivity_included.unwrap(), 1e-12));
        assert!(close(s.sensitivity_excluded.unwrap(), pooled.sensitivity_excluded.unwrap(), 1e-12));
    }

    #[test]
    fn dataset_metrics_with_one_class() {
        let m = DatasetMetrics::compute("x", ConfusionMatrix::from_counts(0, 0, 2, 8)).unwrap();
        assert_eq!(m.sensitivity_included, None);
        assert_eq!(m.sensitivity_excluded, Some(0.8));
        assert_eq!(m.kappa, Some(0.0));
    }
}
