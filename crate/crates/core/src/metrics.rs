//! Confusion counting and precision / recall / F-beta under macro, weighted,
//! micro and sample averaging, plus the per-class report with a Total row.
//!
//! Every ratio whose denominator is zero evaluates to 0. F-beta from counts
//! is `(1+β²)·tp / ((1+β²)·tp + β²·fn + fp)`, which equals
//! `(1+β²)·p·r / (β²·p + r)` whenever both ratios are defined.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{Error, Result};

/// Which axis a [`ConfusionTable`] counts along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// One entry per label, counting samples.
    PerClass,
    /// One entry per sample, counting labels.
    PerSample,
}

/// TP/FP/TN/FN counts, one entry per class or per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub orientation: Orientation,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub tn: Vec<u64>,
    pub fn_: Vec<u64>,
}

/// `num / den`, or 0 when `den` is 0.
pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F-beta from precision and recall; 0 when both are 0.
pub fn fbeta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// F-beta from raw counts; 0 when `tp` is 0.
pub fn fbeta_counts(tp: u64, fp: u64, fn_: u64, beta: f64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let b2 = beta * beta;
    let num = (1.0 + b2) * tp as f64;
    num / (num + b2 * fn_ as f64 + fp as f64)
}

impl ConfusionTable {
    pub fn len(&self) -> usize {
        self.tp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tp.is_empty()
    }

    pub fn total(&self, i: usize) -> u64 {
        self.tp[i] + self.fp[i] + self.tn[i] + self.fn_[i]
    }

    pub fn precision(&self, i: usize) -> f64 {
        ratio(self.tp[i], self.tp[i] + self.fp[i])
    }

    pub fn recall(&self, i: usize) -> f64 {
        ratio(self.tp[i], self.tp[i] + self.fn_[i])
    }

    pub fn accuracy(&self, i: usize) -> f64 {
        ratio(self.tp[i] + self.tn[i], self.total(i))
    }

    pub fn fbeta(&self, i: usize, beta: f64) -> f64 {
        fbeta_counts(self.tp[i], self.fp[i], self.fn_[i], beta)
    }
}

/// Counts agreement between hard predictions and truth.
pub fn confusion(
    pred: &LabelMatrix,
    truth: &LabelMatrix,
    orientation: Orientation,
) -> Result<ConfusionTable> {
    pred.same_shape(truth, "prediction and truth")?;
    let len = match orientation {
        Orientation::PerClass => pred.n_labels(),
        Orientation::PerSample => pred.n_samples(),
    };
    let mut table = ConfusionTable {
        orientation,
        tp: vec![0; len],
        fp: vec![0; len],
        tn: vec![0; len],
        fn_: vec![0; len],
    };
    for ((i, j), &p) in pred.values().indexed_iter() {
        let t = truth.values()[[i, j]];
        let k = match orientation {
            Orientation::PerClass => j,
            Orientation::PerSample => i,
        };
        match (p, t) {
            (1, 1) => table.tp[k] += 1,
            (1, _) => table.fp[k] += 1,
            (_, 1) => table.fn_[k] += 1,
            _ => table.tn[k] += 1,
        }
    }
    Ok(table)
}

/// Averaging scheme for multi-label precision, recall and F-beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Averaging {
    /// Unweighted mean of per-class scores.
    Macro,
    /// Per-class scores weighted by user weights summing to 1.
    Weighted(Vec<f64>),
    /// Scores from counts pooled over all classes.
    Micro,
    /// Mean of per-sample scores.
    Sample,
}

/// Tolerance on the sum of class weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub fbeta: f64,
}

fn mean_over<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    if len == 0 {
        return 0.0;
    }
    (0..len).map(f).sum::<f64>() / len as f64
}

/// Averages a confusion table. `Sample` needs a per-sample table; the other
/// schemes need a per-class table.
pub fn averaged_from_table(
    table: &ConfusionTable,
    scheme: &Averaging,
    beta: f64,
) -> Result<Averaged> {
    let expected = match scheme {
        Averaging::Sample => Orientation::PerSample,
        _ => Orientation::PerClass,
    };
    if table.orientation != expected {
        return Err(Error::invalid(format!(
            "{scheme:?} averaging needs a {expected:?} confusion table"
        )));
    }
    let n = table.len();
    let out = match scheme {
        Averaging::Macro | Averaging::Sample => Averaged {
            precision: mean_over(n, |i| table.precision(i)),
            recall: mean_over(n, |i| table.recall(i)),
            fbeta: mean_over(n, |i| table.fbeta(i, beta)),
        },
        Averaging::Weighted(w) => {
            if w.len() != n {
                return Err(Error::invalid(format!("{} class weights for {n} classes", w.len())));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::invalid(format!("class weights sum to {sum}, not 1")));
            }
            let wsum = |f: &dyn Fn(usize) -> f64| (0..n).map(|i| w[i] * f(i)).sum::<f64>();
            Averaged {
                precision: wsum(&|i| table.precision(i)),
                recall: wsum(&|i| table.recall(i)),
                fbeta: wsum(&|i| table.fbeta(i, beta)),
            }
        }
        Averaging::Micro => {
            let tp: u64 = table.tp.iter().sum();
            let fp: u64 = table.fp.iter().sum();
            let fn_: u64 = table.fn_.iter().sum();
            Averaged {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                fbeta: fbeta_counts(tp, fp, fn_, beta),
            }
        }
    };
    Ok(out)
}

/// Averaged precision, recall and F-beta of hard predictions.
pub fn averaged(
    pred: &LabelMatrix,
    truth: &LabelMatrix,
    scheme: &Averaging,
    beta: f64,
) -> Result<Averaged> {
    let orientation = match scheme {
        Averaging::Sample => Orientation::PerSample,
        _ => Orientation::PerClass,
    };
    averaged_from_table(&confusion(pred, truth, orientation)?, scheme, beta)
}

/// Sample-averaged F-beta, the headline score.
pub fn sample_fbeta(pred: &LabelMatrix, truth: &LabelMatrix, beta: f64) -> Result<f64> {
    Ok(averaged(pred, truth, &Averaging::Sample, beta)?.fbeta)
}

/// Fraction of samples whose whole predicted label vector equals the truth.
pub fn subset_accuracy(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<f64> {
    pred.same_shape(truth, "prediction and truth")?;
    let n = pred.n_samples();
    let exact = (0..n).filter(|&i| pred.row(i) == truth.row(i)).count();
    Ok(ratio(exact as u64, n as u64))
}

/// One line of a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub f2: f64,
}

/// Per-class rows plus a Total row. Total precision, recall, F1 and F2 are
/// sample-averaged; Total accuracy is exact-match accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
}

pub fn report(pred: &LabelMatrix, truth: &LabelMatrix) -> Result<MetricsReport> {
    let per_class = confusion(pred, truth, Orientation::PerClass)?;
    let rows = pred
        .vocab()
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| ReportRow {
            label: name.clone(),
            precision: per_class.precision(j),
            recall: per_class.recall(j),
            accuracy: per_class.accuracy(j),
            f1: per_class.fbeta(j, 1.0),
            f2: per_class.fbeta(j, 2.0),
        })
        .collect();

    let per_sample = confusion(pred, truth, Orientation::PerSample)?;
    let s1 = averaged_from_table(&per_sample, &Averaging::Sample, 1.0)?;
    let s2 = averaged_from_table(&per_sample, &Averaging::Sample, 2.0)?;
    let total = ReportRow {
        label: "Total".to_string(),
        precision: s2.precision,
        recall: s2.recall,
        accuracy: subset_accuracy(pred, truth)?,
        f1: s1.fbeta,
        f2: s2.fbeta,
    };
    Ok(MetricsReport { rows, total })
}

const REPORT_HEADER: [&str; 6] = ["Class", "Precision", "Recall", "Accuracy", "F1 Score", "F2 Score"];

impl ReportRow {
    fn cells(&self) -> [String; 5] {
        [
            format!("{:.6}", self.precision),
            format!("{:.6}", self.recall),
            format!("{:.6}", self.accuracy),
            format!("{:.6}", self.f1),
            format!("{:.6}", self.f2),
        ]
    }
}

impl MetricsReport {
    pub fn all_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().chain(std::iter::once(&self.total))
    }

    /// CSV with the header `Class,Precision,Recall,Accuracy,F1 Score,F2 Score`.
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_HEADER.join(",");
        out.push('\n');
        for row in self.all_rows() {
            out.push_str(&row.label);
            for c in row.cells() {
                out.push(',');
                out.push_str(&c);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    /// Right-aligned text table, one row per class plus Total.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label_w = self
            .all_rows()
            .map(|r| r.label.len())
            .chain(std::iter::once(REPORT_HEADER[0].len()))
            .max()
            .unwrap_or(5);
        write!(f, "{:<label_w$}", REPORT_HEADER[0])?;
        for h in &REPORT_HEADER[1..] {
            write!(f, "  {h:>10}")?;
        }
        writeln!(f)?;
        for row in self.all_rows() {
            write!(f, "{:<label_w$}", row.label)?;
            for c in row.cells() {
                write!(f, "  {c:>10}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
