//! Confusion-matrix accounting and per-class fault-classification metrics.
//!
//! Each class is scored one-vs-rest from the `C × C` confusion matrix
//! (rows are true classes, columns are predictions):
//!
//! * precision `TP / (TP + FP)`
//! * recall `TP / (TP + FN)`
//! * F1 `2·P·R / (P + R)`
//! * false alarm rate `FP / (TN + FP)`
//! * misclassification rate `(FP + FN) / total`
//!
//! Precision uses the predicted-positive denominator. Some write-ups of this
//! metric set print `TP / (TP + FN)` for precision, which is recall again.
//!
//! Every `0 / 0` evaluates to 0, so reports never contain NaN. Values are
//! fractions in `[0, 1]`; percentages are a presentation concern.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// `(TP, FP, TN, FN)` for `class` against the rest.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let row: u64 = self.counts[class].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        let tn = self.total - tp - fn_ - fp;
        (tp, fp, tn, fn_)
    }
}

/// Tallies `(prediction, label)` pairs into a `C × C` matrix.
pub fn confusion(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension {
            op: "confusion",
            lhs: vec![preds.len()],
            rhs: vec![labels.len()],
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (position, (&p, &t)) in preds.iter().zip(labels).enumerate() {
        for value in [p, t] {
            if value >= n_classes {
                return Err(Error::Index {
                    position,
                    value,
                    bound: n_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        total: preds.len() as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub far: f64,
    pub mar: f64,
    /// Number of samples whose true class is this one.
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<Vec<ClassMetrics>> {
    if cm.total == 0 {
        return Err(Error::contract("metrics need a non-empty confusion matrix"));
    }
    Ok((0..cm.n_classes())
        .map(|c| {
            let (tp, fp, tn, fn_) = cm.one_vs_rest(c);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                class: c,
                precision,
                recall,
                f1: f1_score(precision, recall),
                far: ratio(fp, tn + fp),
                mar: ratio(fp + fn_, cm.total),
                support: tp + fn_,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub far: f64,
    pub mar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    /// Population variance of the per-class F1 scores.
    pub f1_variance: f64,
    pub accuracy: f64,
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let per_class = per_class_metrics(cm)?;
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let macro_avg = MacroMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        far: mean(|m| m.far),
        mar: mean(|m| m.mar),
    };
    let f1_variance = per_class.iter().map(|m| (m.f1 - macro_avg.f1).powi(2)).sum::<f64>() / n;
    Ok(ClassificationReport {
        accuracy: ratio(cm.trace(), cm.total),
        matrix: cm.clone(),
        per_class,
        macro_avg,
        f1_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: vec![vec![tp, fn_], vec![fp, tn]],
            total: tp + fp + tn + fn_,
        }
    }

    #[test]
    fn confusion_examples() {
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let cm = confusion(&labels, &labels, 3).unwrap();
        assert_eq!(cm.trace(), 9);
        assert_eq!(cm.counts[0][1] + cm.counts[1][0], 0);

        let cm = confusion(&[], &[], 3).unwrap();
        assert_eq!(cm.total, 0);
        assert!(cm.counts.iter().flatten().all(|&c| c == 0));

        // pairs are (pred, label)
        let cm = confusion(&[0, 1, 1], &[1, 1, 0], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 1], vec![1, 1]]);
    }

    #[test]
    fn confusion_rejects_out_of_range() {
        let err = confusion(&[0, 3], &[0, 1], 3).unwrap_err();
        assert!(matches!(
            err,
            Error::Index {
                position: 1,
                value: 3,
                bound: 3
            }
        ));
        assert!(confusion(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn binary_counts_example() {
        let m = &per_class_metrics(&binary(8, 2, 85, 5)).unwrap()[0];
        assert_eq!(m.precision, 0.8);
        assert_eq!(m.recall, 8.0 / 13.0);
        assert_eq!(m.far, 2.0 / 87.0);
        assert_eq!(m.mar, 0.07);
        assert_eq!(m.support, 13);
    }

    #[test]
    fn perfect_and_absent_classes() {
        let labels = [0, 1, 2, 0, 1, 2];
        let r = report(&confusion(&labels, &labels, 4).unwrap()).unwrap();
        for m in &r.per_class[..3] {
            assert_eq!((m.precision, m.recall, m.f1, m.far, m.mar), (1.0, 1.0, 1.0, 0.0, 0.0));
        }
        let absent = &r.per_class[3];
        assert_eq!(
            (absent.precision, absent.recall, absent.f1, absent.far),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn report_examples() {
        let labels = [0, 1, 1, 0];
        let r = report(&confusion(&labels, &labels, 2).unwrap()).unwrap();
        assert_eq!((r.macro_avg.f1, r.f1_variance, r.accuracy), (1.0, 0.0, 1.0));

        // class 0 perfect, class 1 never predicted and never present in a
        // way that scores: f1 {1, 0}
        let cm = ConfusionMatrix {
            counts: vec![vec![5, 0], vec![0, 0]],
            total: 5,
        };
        let r = report(&cm).unwrap();
        assert_eq!(r.per_class[0].f1, 1.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(r.macro_avg.f1, 0.5);
        assert_eq!(r.f1_variance, 0.25);

        let cm = confusion(&[0, 0], &[0, 0], 1).unwrap();
        let r = report(&cm).unwrap();
        assert_eq!(r.macro_avg.f1, r.per_class[0].f1);
        assert_eq!(r.f1_variance, 0.0);
    }

    #[test]
    fn empty_matrix_is_a_contract_error() {
        let cm = confusion(&[], &[], 2).unwrap();
        assert!(matches!(per_class_metrics(&cm), Err(Error::Contract(_))));
    }

    #[test]
    fn mean_mar_tracks_accuracy() {
        let preds = [0, 1, 2, 2, 1, 0, 0, 2];
        let labels = [0, 1, 1, 2, 0, 0, 2, 2];
        let r = report(&confusion(&preds, &labels, 3).unwrap()).unwrap();
        let expected = 2.0 * (1.0 - r.accuracy) / 3.0;
        assert!((r.macro_avg.mar - expected).abs() < 1e-15);
    }
}
