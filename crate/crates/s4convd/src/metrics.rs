//! Evaluation metrics for non-negative forecasts.

use crate::{Error, Result};

fn check_pair(name: &str, predictions: &[f64], actuals: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} of empty slices")));
    }
    if predictions.len() != actuals.len() {
        return Err(Error::ShapeMismatch(format!(
            "{name}: {} predictions vs {} actuals",
            predictions.len(),
            actuals.len()
        )));
    }
    for (i, v) in predictions.iter().chain(actuals.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} input {i}")));
        }
    }
    Ok(())
}

/// Root mean squared logarithmic error with natural logarithms:
/// `sqrt(mean((ln(1+p) - ln(1+a))^2))`. Inputs must be non-negative.
pub fn rmsle(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair("rmsle", predictions, actuals)?;
    let mut sum = 0.0;
    for (i, (&p, &a)) in predictions.iter().zip(actuals).enumerate() {
        if p < 0.0 || a < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rmsle needs non-negative values, got prediction {p}, actual {a} at index {i}"
            )));
        }
        let d = p.ln_1p() - a.ln_1p();
        sum += d * d;
    }
    Ok((sum / predictions.len() as f64).sqrt())
}

/// Root mean squared error `sqrt(mean((p - a)^2))`.
pub fn rmse(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair("rmse", predictions, actuals)?;
    let sum: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(&p, &a)| (p - a) * (p - a))
        .sum();
    Ok((sum / predictions.len() as f64).sqrt())
}
