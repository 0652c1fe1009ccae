use serde::{Deserialize, Serialize};

use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// F1 of the positive (condition present) class.
    pub f1_d: f64,
    /// F1 of the negative class.
    pub f1_nd: f64,
    /// Unweighted mean of the two.
    pub f1_avg: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sid_accuracy: Option<f64>,
}

impl F1Report {
    pub fn with_sid_accuracy(self, acc: f64) -> Self {
        Self {
            sid_accuracy: Some(acc),
            ..self
        }
    }
}

fn class_f1(pred: &[u8], truth: &[u8], class: u8) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class F1 with 1 as the positive class; a class with no true or
/// predicted members scores 0.
pub fn f1_report(pred: &[u8], truth: &[u8]) -> Result<F1Report, AnalysisError> {
    if pred.len() != truth.len() {
        return Err(AnalysisError::LengthMismatch {
            what: "predicted vs true labels",
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(AnalysisError::Empty("label list"));
    }
    let f1_d = class_f1(pred, truth, 1);
    let f1_nd = class_f1(pred, truth, 0);
    Ok(F1Report {
        f1_d,
        f1_nd,
        f1_avg: (f1_d + f1_nd) / 2.0,
        sid_accuracy: None,
    })
}
