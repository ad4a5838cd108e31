//! Confusion matrix and accuracy / precision / recall / F1.
//!
//! Per-class values are one-vs-rest; macro values are unweighted means over
//! all `K` classes. A ratio with a zero denominator is reported as 0 and
//! flagged, and still counts toward the macro mean.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// Header `true\pred,0,1,…`, one row per true class.
    pub fn to_csv(&self) -> String {
        let k = self.num_classes();
        let mut out = String::from("true\\pred");
        for p in 0..k {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{t}");
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= num_classes {
                return Err(MetricsError::LabelOutOfRange { label, num_classes });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub support: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision had a zero denominator (class never predicted).
    pub precision_undefined: bool,
    /// Recall had a zero denominator (class absent from the truth).
    pub recall_undefined: bool,
    /// Precision + recall was zero.
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub total: u64,
    /// `trace / total`.
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<Report, MetricsError> {
    let total = cm.total();
    if total == 0 || cm.num_classes() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|k| {
            let tp = cm.get(k, k);
            let fp = cm.col_sum(k) - tp;
            let fn_ = cm.row_sum(k) - tp;
            let tn = total - tp - fp - fn_;
            let (precision, precision_undefined) = ratio(tp, tp + fp);
            let (recall, recall_undefined) = ratio(tp, tp + fn_);
            let (f1, f1_undefined) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                class: k,
                tp,
                fp,
                fn_,
                tn,
                support: tp + fn_,
                accuracy: (tp + tn) as f64 / total as f64,
                precision,
                recall,
                f1,
                precision_undefined,
                recall_undefined,
                f1_undefined,
            }
        })
        .collect();
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_avg = MacroMetrics {
        accuracy: mean(|c| c.accuracy),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    };
    Ok(Report {
        total,
        accuracy: cm.trace() as f64 / total as f64,
        per_class,
        macro_avg,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table; `*` marks a 0/0 value.
    pub fn to_table(&self) -> String {
        let mark = |v: f64, undefined: bool| format!("{v:.4}{}", if undefined { "*" } else { " " });
        let mut out = format!(
            "{:<7} {:>8} {:>10} {:>10} {:>10} {:>10}\n",
            "class", "support", "accuracy", "precision", "recall", "f1"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<7} {:>8} {:>10} {:>10} {:>10} {:>10}",
                c.class,
                c.support,
                mark(c.accuracy, false),
                mark(c.precision, c.precision_undefined),
                mark(c.recall, c.recall_undefined),
                mark(c.f1, c.f1_undefined)
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(
            out,
            "{:<7} {:>8} {:>10} {:>10} {:>10} {:>10}",
            "macro",
            self.total,
            mark(m.accuracy, false),
            mark(m.precision, false),
            mark(m.recall, false),
            mark(m.f1, false)
        );
        let _ = writeln!(out, "overall accuracy {:.4}", self.accuracy);
        if self.per_class.iter().any(|c| c.precision_undefined || c.recall_undefined || c.f1_undefined) {
            out.push_str("* zero denominator, reported as 0\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let y = [0, 1, 2, 3, 1, 2];
        let cm = confusion(&y, &y, 4).unwrap();
        assert_eq!(cm.trace(), 6);
        let r = report(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for c in &r.per_class {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_avg.f1, 1.0);
    }

    #[test]
    fn constant_prediction_fills_one_column() {
        let cm = confusion(&[0, 1, 2, 3], &[0, 0, 0, 0], 4).unwrap();
        for t in 0..4 {
            for p in 1..4 {
                assert_eq!(cm.get(t, p), 0);
            }
            assert_eq!(cm.get(t, 0), 1);
        }
    }

    #[test]
    fn hand_counted_example() {
        let cm = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(2, 2)), (1, 1, 1));
        assert_eq!(cm.total(), 4);
        let r = report(&cm).unwrap();
        assert_eq!(r.per_class[1].recall, 0.5);
        assert_eq!(r.per_class[2].precision, 0.5);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn absent_class_is_flagged() {
        let cm = confusion(&[0, 1, 0], &[0, 1, 1], 3).unwrap();
        let r = report(&cm).unwrap();
        let c = &r.per_class[2];
        assert!(c.precision_undefined && c.recall_undefined && c.f1_undefined);
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        let expect = (r.per_class[0].f1 + r.per_class[1].f1) / 3.0;
        assert!((r.macro_avg.f1 - expect).abs() < 1e-15);
        assert!(r.to_table().contains('*'));
    }

    #[test]
    fn errors() {
        assert_eq!(
            confusion(&[0, 1], &[0], 2),
            Err(MetricsError::LengthMismatch { truth: 2, predicted: 1 })
        );
        assert_eq!(
            confusion(&[0, 2], &[0, 1], 2),
            Err(MetricsError::LabelOutOfRange { label: 2, num_classes: 2 })
        );
        assert_eq!(report(&ConfusionMatrix::new(3)), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn csv_and_json() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(cm.to_csv(), "true\\pred,0,1\n0,1,0\n1,1,1\n");
        let json: serde_json::Value = serde_json::from_str(&report(&cm).unwrap().to_json()).unwrap();
        assert!(json["macro"]["f1"].is_number());
        assert_eq!(json["per_class"].as_array().unwrap().len(), 2);
    }
}
