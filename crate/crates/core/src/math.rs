//! Small numeric helpers shared across modules.

use crate::error::{Error, Result};

/// Probabilities below this are floored before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Checks that `values` is a probability vector of length `len`.
pub fn check_distribution(what: &str, values: &[f64], len: usize, tol: f64) -> Result<()> {
    if values.len() != len {
        return Err(Error::DimensionMismatch {
            what: what.to_owned(),
            expected: len,
            actual: values.len(),
        });
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidData(format!(
            "{what}: entries must be finite and nonnegative"
        )));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidData(format!(
            "{what}: entries sum to {total}, not 1"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[3f64.ln(), 0.0]);
        assert!((a[0] - 0.75).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15);
        let b = softmax(&[3f64.ln() + 1000.0, 1000.0]);
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn distribution_check() {
        assert!(check_distribution("x", &[0.5, 0.5], 2, 1e-6).is_ok());
        assert!(check_distribution("x", &[0.5, 0.6], 2, 1e-6).is_err());
        assert!(check_distribution("x", &[1.0], 2, 1e-6).is_err());
        assert!(check_distribution("x", &[1.5, -0.5], 2, 1e-6).is_err());
    }
}
