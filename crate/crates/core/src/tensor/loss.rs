use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Smooth-L1 penalty of a single residual.
pub fn huber<T: Scalar>(r: T) -> T {
    let a = r.abs();
    let half = T::of(0.5);
    if a < T::one() {
        half * r * r
    } else {
        a - half
    }
}

fn huber_slope<T: Scalar>(r: T) -> T {
    if r.abs() < T::one() {
        r
    } else {
        r.signum()
    }
}

fn check_pair<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<[usize; 4]> {
    let dims = pred.dims4("huber_loss")?;
    let tdims = target.dims4("huber_loss")?;
    for (axis, (&a, &b)) in ["B", "N", "H", "W"].iter().zip(dims.iter().zip(tdims.iter())) {
        if a != b {
            return Err(Error::Dimension {
                op: "huber_loss",
                axis,
                expected: a,
                got: b,
            });
        }
    }
    if !pred.is_finite() || !target.is_finite() {
        return Err(Error::Numeric("huber_loss received non-finite values".into()));
    }
    Ok(dims)
}

/// Unweighted mean Huber penalty per channel, averaged over pixels and batch.
pub fn huber_per_channel<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>> {
    let [b, n, h, w] = check_pair(pred, target)?;
    let plane = h * w;
    let mut out = vec![0.0; n];
    for bi in 0..b {
        for (ch, acc) in out.iter_mut().enumerate() {
            let off = (bi * n + ch) * plane;
            let p = &pred.data()[off..off + plane];
            let t = &target.data()[off..off + plane];
            *acc += p
                .iter()
                .zip(t)
                .map(|(&x, &y)| huber(x - y).to_f64().unwrap())
                .sum::<f64>();
        }
    }
    out.iter_mut().for_each(|v| *v /= (b * plane) as f64);
    Ok(out)
}

/// Weighted loss value and its gradient with respect to `pred`.
pub(crate) fn huber_forward<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: &[T],
) -> Result<(T, Vec<T>)> {
    let [b, n, h, w] = check_pair(pred, target)?;
    if weights.len() != n {
        return Err(Error::Dimension {
            op: "huber_loss",
            axis: "N",
            expected: n,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("huber_loss weights must be finite".into()));
    }
    let plane = h * w;
    let norm = T::from_usize(b * n * plane).unwrap();
    let mut total = T::zero();
    let mut grad = vec![T::zero(); pred.numel()];
    for bi in 0..b {
        for (ch, &wt) in weights.iter().enumerate() {
            let off = (bi * n + ch) * plane;
            let mut acc = T::zero();
            for i in off..off + plane {
                let r = pred.data()[i] - target.data()[i];
                acc += huber(r);
                grad[i] = wt * huber_slope(r) / norm;
            }
            total += wt * acc;
        }
    }
    Ok((total / norm, grad))
}
