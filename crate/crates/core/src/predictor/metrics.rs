//! Binary classification metrics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("empty input")]
    Empty,
}

/// Per-class and macro F1 over the two availability classes.
///
/// `true` is the Available class. A class absent from both labels and
/// predictions contributes F1 = 0 and is flagged so callers can report it
/// instead of silently averaging over a phantom class.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub macro_f1: f64,
    pub f1_available: f64,
    pub f1_unavailable: f64,
    pub absent_available: bool,
    pub absent_unavailable: bool,
}

fn class_f1(predictions: &[bool], labels: &[bool], class: bool) -> (f64, bool) {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let absent = tp + fp + fn_ == 0;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (f1, absent)
}

/// Unweighted mean of per-class F1 over {Available, Unavailable}.
pub fn f1_macro(predictions: &[bool], labels: &[bool]) -> Result<F1Report, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let (f1_available, absent_available) = class_f1(predictions, labels, true);
    let (f1_unavailable, absent_unavailable) = class_f1(predictions, labels, false);
    Ok(F1Report {
        macro_f1: (f1_available + f1_unavailable) / 2.0,
        f1_available,
        f1_unavailable,
        absent_available,
        absent_unavailable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = vec![true, false, true, true, false];
        let r = f1_macro(&labels, &labels).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.f1_available, 1.0);
        assert_eq!(r.f1_unavailable, 1.0);
    }

    #[test]
    fn all_available_on_balanced_set_scores_one_third() {
        // Available: precision 0.5, recall 1.0 => F1 = 2/3.
        // Unavailable: never predicted => F1 = 0. Macro = 1/3.
        let labels = vec![true, true, false, false];
        let preds = vec![true, true, true, true];
        let r = f1_macro(&preds, &labels).unwrap();
        assert_eq!(r.f1_available, 2.0 / 3.0);
        assert_eq!(r.f1_unavailable, 0.0);
        assert_eq!(r.macro_f1, 1.0 / 3.0);
    }

    #[test]
    fn inverted_predictions_score_zero() {
        let labels = vec![true, true, false, false];
        let preds = vec![false, false, true, true];
        let r = f1_macro(&preds, &labels).unwrap();
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn absent_class_is_flagged() {
        let labels = vec![true, true];
        let preds = vec![true, true];
        let r = f1_macro(&preds, &labels).unwrap();
        assert!(r.absent_unavailable);
        assert!(!r.absent_available);
        // Macro still averages over both classes.
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(f1_macro(&[true], &[true, false]).is_err());
        assert!(f1_macro(&[], &[]).is_err());
    }

    proptest! {
        // Renaming both classes simultaneously leaves the macro unchanged.
        #[test]
        fn macro_invariant_under_class_renaming(
            rows in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..100)
        ) {
            let preds: Vec<bool> = rows.iter().map(|(p, _)| *p).collect();
            let labels: Vec<bool> = rows.iter().map(|(_, l)| *l).collect();
            let flipped_preds: Vec<bool> = preds.iter().map(|p| !p).collect();
            let flipped_labels: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = f1_macro(&preds, &labels).unwrap();
            let b = f1_macro(&flipped_preds, &flipped_labels).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
            prop_assert!((a.f1_available - b.f1_unavailable).abs() < 1e-15);
        }
    }
}
