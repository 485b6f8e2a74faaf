//! Confusion matrices and per-class classification reports.
//!
//! "Specificity" here is `TP / (TP + FP)` per class, which is what most
//! libraries call precision; the report labels the column with both names.
//! Any metric whose denominator is zero is reported as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        predictions: &[usize],
        labels: &[usize],
        class_names: Vec<String>,
    ) -> Result<Self> {
        let c = class_names.len();
        if c < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {c}"
            )));
        }
        if predictions.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![vec![0; c]; c];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= c || y >= c {
                return Err(Error::InvalidInput(format!(
                    "class index out of range 0..{c}: label {y}, prediction {p}"
                )));
            }
            counts[y][p] += 1;
        }
        Ok(Self {
            counts,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&i| i != c)
            .map(|i| self.counts[i][c])
            .sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&j| j != c)
            .map(|j| self.counts[c][j])
            .sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes())
            .map(|c| self.true_positives(c))
            .sum();
        ratio(correct, self.total())
    }
}

/// Confusion matrix over classes `0..num_classes`, named by index.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    let names = (0..num_classes).map(|c| c.to_string()).collect();
    ConfusionMatrix::from_predictions(predictions, labels, names)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `TP_c / (TP_c + FP_c)` per class.
pub fn specificity_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|c| {
            ratio(
                cm.true_positives(c),
                cm.true_positives(c) + cm.false_positives(c),
            )
        })
        .collect()
}

/// `TP_c / (TP_c + FN_c)` per class.
pub fn sensitivity_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|c| {
            ratio(
                cm.true_positives(c),
                cm.true_positives(c) + cm.false_negatives(c),
            )
        })
        .collect()
}

/// Harmonic mean of specificity and sensitivity.
pub fn f1_score(specificity: f64, sensitivity: f64) -> f64 {
    let den = specificity + sensitivity;
    if den == 0.0 {
        0.0
    } else {
        2.0 * specificity * sensitivity / den
    }
}

pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    specificity_per_class(cm)
        .into_iter()
        .zip(sensitivity_per_class(cm))
        .map(|(p, r)| f1_score(p, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: String,
    pub specificity: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub rows: Vec<ReportRow>,
    /// Unweighted mean of the per-class rows; support is the total.
    pub average: ReportRow,
}

pub fn classification_report(cm: &ConfusionMatrix) -> ClassificationReport {
    let spec = specificity_per_class(cm);
    let sens = sensitivity_per_class(cm);
    let f1 = f1_per_class(cm);
    let rows: Vec<ReportRow> = (0..cm.num_classes())
        .map(|c| ReportRow {
            class: cm.class_names[c].clone(),
            specificity: spec[c],
            sensitivity: sens[c],
            f1: f1[c],
            support: cm.support(c),
        })
        .collect();
    let n = rows.len() as f64;
    // Summing in sorted order makes the average independent of class order.
    let mean = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / n
    };
    let average = ReportRow {
        class: "average".into(),
        specificity: mean(&spec),
        sensitivity: mean(&sens),
        f1: mean(&f1),
        support: cm.total(),
    };
    ClassificationReport { rows, average }
}

impl ClassificationReport {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.class.len())
            .chain(["average".len(), "class".len()])
            .max()
            .unwrap_or(7);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>width$}  {:>23}  {:>20}  {:>8}  {:>7}",
            "class", "specificity (precision)", "sensitivity (recall)", "f1", "support"
        );
        let line = |s: &mut String, r: &ReportRow| {
            let _ = writeln!(
                s,
                "{:>width$}  {:>23.4}  {:>20.4}  {:>8.4}  {:>7}",
                r.class, r.specificity, r.sensitivity, r.f1, r.support
            );
        };
        for r in &self.rows {
            line(&mut s, r);
        }
        s.push('\n');
        line(&mut s, &self.average);
        s
    }

    /// JSON array with one object per class followed by the `average` object.
    pub fn to_json(&self) -> String {
        let all: Vec<&ReportRow> = self
            .rows
            .iter()
            .chain(std::iter::once(&self.average))
            .collect();
        serde_json::to_string_pretty(&all).expect("report rows serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
        ConfusionMatrix {
            counts,
            class_names: names,
        }
    }

    #[test]
    fn confusion_matrix_examples() {
        let m = confusion_matrix(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4], 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.counts[i][j], u64::from(i == j));
            }
        }
        let m = confusion_matrix(&[0, 0], &[0, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![1, 0]]);
        let m = confusion_matrix(&[], &[], 3).unwrap();
        assert_eq!(m.total(), 0);
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
        assert!(confusion_matrix(&[2], &[0], 2).is_err());
    }

    #[test]
    fn metric_examples() {
        let ident = cm(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]);
        assert_eq!(specificity_per_class(&ident), vec![1.0; 3]);
        assert_eq!(sensitivity_per_class(&ident), vec![1.0; 3]);

        let m = cm(vec![vec![9, 1], vec![1, 9]]);
        assert_eq!(specificity_per_class(&m), vec![0.9, 0.9]);
        assert_eq!(sensitivity_per_class(&m), vec![0.9, 0.9]);
        let r = classification_report(&m);
        assert!((r.average.specificity - 0.9).abs() < 1e-15);
        assert!((r.average.sensitivity - 0.9).abs() < 1e-15);
        assert!((r.average.f1 - 0.9).abs() < 1e-15);

        // Everything predicted as class 0.
        let all0 = confusion_matrix(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(sensitivity_per_class(&all0), vec![1.0, 0.0]);
        assert_eq!(specificity_per_class(&all0)[1], 0.0);

        assert_eq!(f1_score(0.9, 0.9), 0.9);
        assert!((f1_score(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn identity_report_is_perfect() {
        let r = classification_report(
            &confusion_matrix(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4], 5).unwrap(),
        );
        for row in r.rows.iter().chain([&r.average]) {
            assert_eq!((row.specificity, row.sensitivity, row.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.average.support, 5);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let arr = json.as_array().unwrap();
        assert_eq!(arr.len(), 6);
        assert_eq!(arr[5]["class"], "average");
        for key in ["class", "specificity", "sensitivity", "f1", "support"] {
            assert!(arr[0].get(key).is_some());
        }
        assert!(r.to_text().contains("specificity (precision)"));
    }

    fn instance() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..=5).prop_flat_map(|c| (Just(c), proptest::collection::vec((0..c, 0..c), 0..=50)))
    }

    proptest! {
        #[test]
        fn micro_sensitivity_is_accuracy((c, pairs) in instance()) {
            let (p, y): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let m = confusion_matrix(&p, &y, c).unwrap();
            let tp: u64 = (0..c).map(|k| m.true_positives(k)).sum();
            let correct = p.iter().zip(&y).filter(|(a, b)| a == b).count() as u64;
            prop_assert_eq!(ratio(tp, m.total()), ratio(correct, y.len() as u64));
            prop_assert_eq!(m.accuracy(), ratio(correct, y.len() as u64));
        }

        #[test]
        fn f1_lies_between_its_inputs((c, pairs) in instance()) {
            let (p, y): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let m = confusion_matrix(&p, &y, c).unwrap();
            let (s, r, f) = (specificity_per_class(&m), sensitivity_per_class(&m), f1_per_class(&m));
            for k in 0..c {
                for v in [s[k], r[k], f[k]] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if s[k] + r[k] > 0.0 {
                    prop_assert!(f[k] <= s[k].max(r[k]) + 1e-15 && f[k] >= s[k].min(r[k]) - 1e-15);
                }
            }
        }

        #[test]
        fn relabelling_permutes_metrics((c, pairs) in instance(), rot in 1usize..5) {
            let perm = |k: usize| (k + rot) % c;
            let (p, y): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = classification_report(&confusion_matrix(&p, &y, c).unwrap());
            let pp: Vec<usize> = p.iter().map(|&k| perm(k)).collect();
            let yy: Vec<usize> = y.iter().map(|&k| perm(k)).collect();
            let b = classification_report(&confusion_matrix(&pp, &yy, c).unwrap());
            for k in 0..c {
                prop_assert_eq!(a.rows[k].specificity, b.rows[perm(k)].specificity);
                prop_assert_eq!(a.rows[k].sensitivity, b.rows[perm(k)].sensitivity);
                prop_assert_eq!(a.rows[k].f1, b.rows[perm(k)].f1);
            }
            prop_assert_eq!(&a.average, &b.average);
        }
    }
}
