//! Confusion matrices, detection metrics and ROC AUC.
//!
//! The positive class is `Normal`: a true positive is a normal instance
//! accepted as normal, a true negative an attack flagged as an attack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// normal predicted normal
    pub tp: u64,
    /// normal predicted attack
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// attack predicted normal
    pub fp: u64,
    /// attack predicted attack
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, truth: Label, predicted: Label) -> Result<()> {
        match (truth, predicted) {
            (Label::Normal, Label::Normal) => self.tp += 1,
            (Label::Normal, Label::Attack) => self.fn_ += 1,
            (Label::Attack, Label::Normal) => self.fp += 1,
            (Label::Attack, Label::Attack) => self.tn += 1,
            _ => return Err(Error::Unlabeled),
        }
        Ok(())
    }
}

pub fn build_confusion(truth: &[Label], predicted: &[Label]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no instances to tabulate"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Detection metrics. A ratio whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dr: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub far: Option<f64>,
    pub tpr: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix, auc: Option<f64>) -> MetricsReport {
    let fpr = ratio(cm.fp, cm.fp + cm.tn);
    let fnr = ratio(cm.fn_, cm.fn_ + cm.tp);
    MetricsReport {
        dr: ratio(cm.tn, cm.tn + cm.fp),
        fpr,
        fnr,
        far: fpr.zip(fnr).map(|(a, b)| (a + b) / 2.0),
        tpr: ratio(cm.tp, cm.tp + cm.fn_),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        auc,
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counted half (Mann-Whitney U over average ranks).
pub fn rank_auc<T: Scalar>(positives: &[T], negatives: &[T]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut all: Vec<(T, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    // twice the rank sum keeps tied (half-integer) ranks exact
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j, average (i+1+j)/2
        let pos_in_group = all[i..j].iter().filter(|e| e.1).count() as u128;
        rank_sum2 += pos_in_group * (i + 1 + j) as u128;
        i = j;
    }
    let np = positives.len() as u128;
    let nn = negatives.len() as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// ROC AUC for scores where larger means more normal.
pub fn roc_auc<T: Scalar>(scores: &[T], truth: &[Label]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch(scores.len(), truth.len()));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &t) in scores.iter().zip(truth) {
        match t {
            Label::Normal => pos.push(s),
            Label::Attack => neg.push(s),
            Label::Unlabeled => return Err(Error::Unlabeled),
        }
    }
    rank_auc(&pos, &neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Attack as A, Normal as N};

    fn pair_count(scores: &[f64], truth: &[Label]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if truth[i] == N && truth[j] == A {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn enumerated_confusion() {
        let cm = build_confusion(&[N, N, A, A], &[N, A, N, A]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fn_: 1, fp: 1, tn: 1 });
        let perfect = build_confusion(&[N, A, A], &[N, A, A]).unwrap();
        assert_eq!((perfect.fn_, perfect.fp), (0, 0));
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(build_confusion(&[N], &[]), Err(Error::LengthMismatch(1, 0))));
        assert!(matches!(build_confusion(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(build_confusion(&[Label::Unlabeled], &[N]), Err(Error::Unlabeled)));
    }

    #[test]
    fn rbfn_table_counts() {
        let cm = ConfusionMatrix {
            tp: 183566,
            fn_: 1630,
            fp: 43,
            tn: 10651,
        };
        assert_eq!(cm.total(), 195890);
        let m = compute_metrics(&cm, None);
        assert!((m.dr.unwrap() - 10651.0 / 10694.0).abs() < 1e-15);
        assert!((m.dr.unwrap() - 0.996).abs() < 5e-3);
        assert!((m.fpr.unwrap() - 0.004).abs() < 5e-3);
        assert!((m.far.unwrap() - 0.006).abs() < 5e-3);
        assert!((m.accuracy.unwrap() - 194217.0 / 195890.0).abs() < 1e-15);
        assert!((m.accuracy.unwrap() - 0.99146).abs() < 1e-5);
    }

    #[test]
    fn forest_table_counts() {
        let cm = ConfusionMatrix {
            tp: 183066,
            fn_: 2130,
            fp: 71,
            tn: 10623,
        };
        let m = compute_metrics(&cm, None);
        assert!((m.dr.unwrap() - 0.9934).abs() < 1e-4);
        assert!((m.fpr.unwrap() - 0.0066).abs() < 1e-4);
        assert!((m.far.unwrap() - 0.009).abs() < 5e-3);
    }

    #[test]
    fn absent_ratios_on_normal_only_data() {
        let m = compute_metrics(&ConfusionMatrix { tp: 5, fn_: 1, fp: 0, tn: 0 }, None);
        assert_eq!((m.dr, m.fpr, m.far), (None, None, None));
        assert!((m.fnr.unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(compute_metrics(&ConfusionMatrix::default(), None).accuracy, None);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(rank_auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(rank_auc(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(rank_auc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.25);
        assert_eq!(pair_count(&[1.0, 3.0, 2.0, 4.0], &[N, N, A, A]), 0.25);
        assert!(matches!(rank_auc::<f64>(&[1.0], &[]), Err(Error::SingleClass)));
        assert!(matches!(roc_auc(&[1.0, 2.0], &[N, N]), Err(Error::SingleClass)));
    }

    proptest! {
        #[test]
        fn matches_pair_counting(
            data in prop::collection::vec((0i32..6, any::<bool>()), 2..=12),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let truth: Vec<Label> = data.iter().map(|d| if d.1 { N } else { A }).collect();
            prop_assume!(truth.contains(&N) && truth.contains(&A));
            prop_assert_eq!(roc_auc(&scores, &truth).unwrap(), pair_count(&scores, &truth));
        }

        #[test]
        fn negation_complements(
            data in prop::collection::vec((-1e6f64..1e6, any::<bool>()), 2..40),
        ) {
            let truth: Vec<Label> = data.iter().map(|d| if d.1 { N } else { A }).collect();
            prop_assume!(truth.contains(&N) && truth.contains(&A));
            let mut s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let mut sorted = s.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
            let a = roc_auc(&s, &truth).unwrap();
            s.iter_mut().for_each(|x| *x = -*x);
            let b = roc_auc(&s, &truth).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn complementary_rates(tp in 0u64..1000, fn_ in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000) {
            let m = compute_metrics(&ConfusionMatrix { tp, fn_, fp, tn }, None);
            if let (Some(dr), Some(fpr)) = (m.dr, m.fpr) {
                prop_assert!((dr + fpr - 1.0).abs() < 1e-12);
            }
            if let (Some(tpr), Some(fnr)) = (m.tpr, m.fnr) {
                prop_assert!((tpr + fnr - 1.0).abs() < 1e-12);
            }
            if let (Some(far), Some(fpr), Some(fnr)) = (m.far, m.fpr, m.fnr) {
                prop_assert_eq!(far, (fpr + fnr) / 2.0);
            }
        }
    }
}
