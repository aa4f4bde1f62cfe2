use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BinaryQuality;

/// Binary classification scores with defect as the positive class.
/// Ratios with a zero denominator are `None` rather than 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(
    pred: &[BinaryQuality],
    truth: &[BinaryQuality],
) -> Result<ClassificationMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("classification metrics"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (BinaryQuality::Defect, BinaryQuality::Defect) => tp += 1,
            (BinaryQuality::Defect, BinaryQuality::Normal) => fp += 1,
            (BinaryQuality::Normal, BinaryQuality::Defect) => fn_ += 1,
            (BinaryQuality::Normal, BinaryQuality::Normal) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    // 2TP / (2TP + FP + FN) equals 2PR / (P + R) and stays defined at P = R = 0.
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) => ratio(2 * tp, 2 * tp + fp + fn_),
        _ => None,
    };
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / pred.len() as f64,
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use BinaryQuality::{Defect as D, Normal as N};

    #[test]
    fn perfect_prediction() {
        let labels = [D, N, N, D, N];
        let m = classification_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, Some(1.0));
    }

    #[test]
    fn no_positive_predictions() {
        let m = classification_metrics(&[N, N, N], &[D, N, D]).unwrap();
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);
    }

    #[test]
    fn hand_counted_confusion_matrix() {
        // TP=2 FP=1 FN=1 TN=6
        let pred = [D, D, D, N, N, N, N, N, N, N];
        let truth = [D, D, N, D, N, N, N, N, N, N];
        let m = classification_metrics(&pred, &truth).unwrap();
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives, m.true_negatives), (2, 1, 1, 6));
        let two_thirds = 2.0 / 3.0;
        assert!((m.precision.unwrap() - two_thirds).abs() < 1e-15);
        assert!((m.recall.unwrap() - two_thirds).abs() < 1e-15);
        assert!((m.f1.unwrap() - two_thirds).abs() < 1e-15);
        assert!((m.accuracy - 0.8).abs() < 1e-15);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(classification_metrics(&[D], &[D, N]), Err(Error::LengthMismatch(1, 2))));
        assert!(classification_metrics(&[], &[]).is_err());
    }

    fn flip(b: BinaryQuality) -> BinaryQuality {
        match b {
            D => N,
            N => D,
        }
    }

    proptest! {
        #[test]
        fn f1_is_harmonic_mean(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
            let to = |b: bool| if b { D } else { N };
            let pred: Vec<_> = pairs.iter().map(|p| to(p.0)).collect();
            let truth: Vec<_> = pairs.iter().map(|p| to(p.1)).collect();
            let m = classification_metrics(&pred, &truth).unwrap();
            if let (Some(p), Some(r)) = (m.precision, m.recall) {
                if p + r > 0.0 {
                    prop_assert!((m.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
                }
            }
            let flipped_pred: Vec<_> = pred.iter().copied().map(flip).collect();
            let flipped_truth: Vec<_> = truth.iter().copied().map(flip).collect();
            let flipped = classification_metrics(&flipped_pred, &flipped_truth).unwrap();
            prop_assert_eq!(flipped.accuracy, m.accuracy);
        }
    }
}
