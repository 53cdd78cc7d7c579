//! Confusion matrix and support-weighted classification metrics.
//!
//! Rows of the confusion matrix are true classes and columns predicted
//! classes. Precision, recall or F1 with a zero denominator is reported as 0.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_codec::{IceClass, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let l = counts.len();
        if let Some(row) = counts.iter().find(|r| r.len() != l) {
            return Err(Error::LengthMismatch { left: l, right: row.len() });
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum::<u64>() - self.counts[class][class]
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.support(class) - self.counts[class][class]
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Adds another matrix of the same size, e.g. a separately counted shard.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::LengthMismatch {
                left: self.classes(),
                right: other.classes(),
            });
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }

    /// CSV with a header naming the predicted classes; first column is the
    /// true class.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let names = class_names(self.classes());
        writeln!(out, "true\\pred,{}", names.join(","))?;
        for (name, row) in names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn class_names(classes: usize) -> Vec<String> {
    if classes == NUM_CLASSES {
        IceClass::ALL.iter().map(|c| c.abbrev().to_string()).collect()
    } else {
        (0..classes).map(|i| i.to_string()).collect()
    }
}

/// Confusion matrix over the six ice classes.
pub fn confusion(preds: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    confusion_with_classes(preds, truths, NUM_CLASSES)
}

pub fn confusion_with_classes(preds: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in preds.iter().zip(truths) {
        for index in [p, t] {
            if index >= classes {
                return Err(Error::IndexOutOfRange { index, classes });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<u64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let l = cm.classes();
    let mut report = MetricsReport {
        accuracy: ratio((0..l).map(|i| cm.true_positives(i)).sum(), n),
        weighted_precision: 0.0,
        weighted_recall: 0.0,
        weighted_f1: 0.0,
        per_class_precision: Vec::with_capacity(l),
        per_class_recall: Vec::with_capacity(l),
        per_class_f1: Vec::with_capacity(l),
        support: Vec::with_capacity(l),
    };
    for i in 0..l {
        let (tp, fp, fn_) = (cm.true_positives(i), cm.false_positives(i), cm.false_negatives(i));
        let support = cm.support(i);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        let w = ratio(support, n);
        report.weighted_precision += w * precision;
        report.weighted_recall += w * recall;
        report.weighted_f1 += w * f1;
        report.per_class_precision.push(precision);
        report.per_class_recall.push(recall);
        report.per_class_f1.push(f1);
        report.support.push(support);
    }
    Ok(report)
}

impl MetricsReport {
    pub fn samples(&self) -> u64 {
        self.support.iter().sum()
    }

    /// Aligned plain-text rendering with one row per class.
    pub fn to_table(&self) -> String {
        let names = class_names(self.support.len());
        let mut s = String::new();
        let _ = writeln!(s, "per-class metrics on the evaluated split");
        let _ = writeln!(s, "{:<6} {:>10} {:>10} {:>10} {:>9}", "class", "precision", "recall", "f1", "support");
        for (i, name) in names.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>9}",
                name, self.per_class_precision[i], self.per_class_recall[i], self.per_class_f1[i], self.support[i]
            );
        }
        let _ = writeln!(
            s,
            "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>9}",
            "wavg", self.weighted_precision, self.weighted_recall, self.weighted_f1, self.samples()
        );
        let _ = writeln!(s, "accuracy {:.4}", self.accuracy);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2, 5], &[0, 1, 2, 5]).unwrap();
        for t in 0..6 {
            for p in 0..6 {
                let expected = u64::from(t == p && [0, 1, 2, 5].contains(&t));
                assert_eq!(cm.get(t, p), expected);
            }
        }
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionMatrix::zeros(6));
        let cm = confusion_with_classes(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0], vec![1, 2]]);
        assert!(matches!(confusion(&[0], &[]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(confusion(&[6], &[0]), Err(Error::IndexOutOfRange { index: 6, .. })));
    }

    #[test]
    fn metrics_examples() {
        let cm = confusion(&[0, 1, 3, 3, 4], &[0, 1, 3, 3, 4]).unwrap();
        let r = compute_metrics(&cm).unwrap();
        assert_eq!((r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.per_class_f1, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);

        let cm = ConfusionMatrix::from_counts(vec![vec![1, 0], vec![1, 2]]).unwrap();
        let r = compute_metrics(&cm).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class_f1[1] - 0.8).abs() < 1e-15);
        // (1/4)(2/3) + (3/4)(0.8)
        assert!((r.weighted_f1 - 0.766_666_666_666_666_7).abs() < 1e-15);
        assert!((r.weighted_recall - r.accuracy).abs() < 1e-15);

        assert!(matches!(compute_metrics(&ConfusionMatrix::zeros(6)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn csv_and_table() {
        let cm = confusion(&[0, 3, 3], &[0, 3, 2]).unwrap();
        let mut buf = Vec::new();
        cm.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "true\\pred,NI,N,YI,FYI,OI,W");
        assert_eq!(lines[3], "YI,0,0,0,1,0,0");
        let table = compute_metrics(&cm).unwrap().to_table();
        assert!(table.contains("FYI"));
        assert!(table.contains("accuracy 0.6667"));
    }

    #[test]
    fn merge_shards() {
        let mut a = confusion(&[0, 1], &[0, 2]).unwrap();
        let b = confusion(&[1, 1], &[1, 2]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, confusion(&[0, 1, 1, 1], &[0, 2, 1, 2]).unwrap());
    }

    fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..200).prop_flat_map(|n| {
            (prop::collection::vec(0usize..6, n), prop::collection::vec(0usize..6, n))
        })
    }

    proptest! {
        #[test]
        fn recall_equals_accuracy((p, t) in labels()) {
            let r = compute_metrics(&confusion(&p, &t).unwrap()).unwrap();
            prop_assert!((r.weighted_recall - r.accuracy).abs() < 1e-12);
            for v in [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r.samples(), p.len() as u64);
        }

        #[test]
        fn f1_is_harmonic_mean((p, t) in labels()) {
            let r = compute_metrics(&confusion(&p, &t).unwrap()).unwrap();
            for i in 0..6 {
                let (pr, rc) = (r.per_class_precision[i], r.per_class_recall[i]);
                if pr + rc > 0.0 {
                    prop_assert!((r.per_class_f1[i] - 2.0 * pr * rc / (pr + rc)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn order_invariant((p, t) in labels(), rot in 0usize..200) {
            let k = rot % p.len();
            let mut p2 = p.clone();
            let mut t2 = t.clone();
            p2.rotate_left(k);
            t2.rotate_left(k);
            p2.reverse();
            t2.reverse();
            let a = compute_metrics(&confusion(&p, &t).unwrap()).unwrap();
            let b = compute_metrics(&confusion(&p2, &t2).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
