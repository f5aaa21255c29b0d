//! Agreement measures between predicted and ground-truth intensities.

use crate::error::{Error, Result};

fn check_lengths(op: &'static str, truth: &[f64], pred: &[f64], min: usize) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension {
            op,
            axis: "n",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.len() < min {
        return Err(Error::UndefinedMetric(format!(
            "{op} needs at least {min} samples, got {}",
            truth.len()
        )));
    }
    Ok(())
}

/// ICC(3,1): two-way mixed, single rater, consistency form, with the two
/// vectors as raters.
///
/// Constant `truth` leaves the between-targets mean square undefined for
/// ranking purposes and is reported as an error rather than a silent value.
pub fn icc31(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths("icc31", truth, pred, 2)?;
    let n = truth.len() as f64;
    let t_mean = truth.iter().sum::<f64>() / n;
    if truth.iter().all(|&t| t == truth[0]) {
        return Err(Error::UndefinedMetric("icc31: ground truth is constant".into()));
    }
    let p_mean = pred.iter().sum::<f64>() / n;
    let grand = 0.5 * (t_mean + p_mean);
    let mut ss_rows = 0.0;
    let mut ss_err = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        let m = 0.5 * (t + p);
        ss_rows += (m - grand) * (m - grand);
        let et = t - m - t_mean + grand;
        let ep = p - m - p_mean + grand;
        ss_err += et * et + ep * ep;
    }
    let bms = 2.0 * ss_rows / (n - 1.0);
    let ems = ss_err / (n - 1.0);
    let denom = bms + ems;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::UndefinedMetric("icc31: zero total variance".into()));
    }
    Ok(((bms - ems) / denom).clamp(-1.0, 1.0))
}

/// Mean squared difference.
pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths("mse", truth, pred, 1)?;
    let sum: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(sum / truth.len() as f64)
}
