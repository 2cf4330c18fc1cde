use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Binary confusion counts with class 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![truth.len()],
                got: vec![predicted.len()],
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => cm.tp += 1,
                (0, 0) => cm.tn += 1,
                (0, 1) => cm.fp += 1,
                (1, 0) => cm.fn_ += 1,
                _ => return Err(Error::Domain(format!("labels must be 0 or 1, got ({t}, {p})"))),
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    (cm.tp + cm.tn) as f64 / cm.total() as f64
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / den.sqrt()
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect() {
        let cm = ConfusionMatrix::new(5, 5, 0, 0);
        assert_eq!(accuracy(&cm), 1.0);
        assert_eq!(mcc(&cm), 1.0);
    }

    #[test]
    fn formula_value() {
        let cm = ConfusionMatrix::new(3, 4, 2, 1);
        assert!((mcc(&cm) - 10.0 / 600f64.sqrt()).abs() < 1e-12);
        assert!((accuracy(&cm) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn one_class_predictions() {
        let cm = ConfusionMatrix::from_predictions(&[1, 0, 1, 0], &[1, 1, 1, 1]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2, 0, 2, 0));
        assert_eq!(mcc(&cm), 0.0);
        let inverted = ConfusionMatrix::from_predictions(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap();
        assert_eq!(mcc(&inverted), -1.0);
    }

    #[test]
    fn stats() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }

    proptest! {
        #[test]
        fn swap_symmetry(tp in 0u64..50, tn in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            prop_assume!(tp + tn + fp + fn_ > 0);
            let a = ConfusionMatrix::new(tp, tn, fp, fn_);
            let b = ConfusionMatrix::new(tn, tp, fn_, fp);
            prop_assert!((mcc(&a) - mcc(&b)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&mcc(&a)));
            prop_assert!((0.0..=1.0).contains(&accuracy(&a)));
        }
    }
}
