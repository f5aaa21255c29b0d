use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Variance epsilon.
pub const BN_EPS: f64 = 1e-5;

pub(crate) struct BnForward<T> {
    pub output: Vec<T>,
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased variance (training only).
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

fn check_channels<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<[usize; 4]> {
    let dims = input.dims4("batchnorm2d")?;
    for len in [gamma.len(), beta.len()] {
        if len != dims[1] {
            return Err(Error::Dimension {
                op: "batchnorm2d",
                axis: "C",
                expected: dims[1],
                got: len,
            });
        }
    }
    Ok(dims)
}

pub(crate) fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
    eps: T,
) -> Result<BnForward<T>> {
    let [b, c, h, w] = check_channels(input, gamma, beta)?;
    let plane = h * w;
    let count = b * plane;
    let x = input.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let training = running.is_none();
    match running {
        Some((rm, rv)) => {
            if rm.len() != c || rv.len() != c {
                return Err(Error::Dimension {
                    op: "batchnorm2d",
                    axis: "C",
                    expected: c,
                    got: rm.len().min(rv.len()),
                });
            }
            mean.copy_from_slice(rm);
            var.copy_from_slice(rv);
        }
        None => {
            if count < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batchnorm2d needs at least 2 values per channel in training, got B·H·W = {count}"
                )));
            }
            let n = T::from_usize(count).unwrap();
            for ch in 0..c {
                let mut acc = T::zero();
                for n_ in 0..b {
                    let off = (n_ * c + ch) * plane;
                    acc += x[off..off + plane].iter().copied().sum::<T>();
                }
                let m = acc / n;
                let mut sq = T::zero();
                for n_ in 0..b {
                    let off = (n_ * c + ch) * plane;
                    for &v in &x[off..off + plane] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = sq / n;
            }
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut output = vec![T::zero(); x.len()];
    for n_ in 0..b {
        for ch in 0..c {
            let off = (n_ * c + ch) * plane;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in off..off + plane {
                let xh = (x[i] - m) * s;
                normalized[i] = xh;
                output[i] = g * xh + bt;
            }
        }
    }

    let batch_stats = training.then(|| {
        let n = T::from_usize(count).unwrap();
        let unbiased = var.iter().map(|&v| v * n / (n - T::one())).collect();
        (mean, unbiased)
    });
    Ok(BnForward {
        output,
        normalized,
        inv_std,
        batch_stats,
    })
}

pub(crate) struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn batchnorm_backward<T: Scalar>(
    dims: [usize; 4],
    gamma: &[T],
    normalized: &[T],
    inv_std: &[T],
    training: bool,
    grad_out: &[T],
) -> BnGrads<T> {
    let [b, c, h, w] = dims;
    let plane = h * w;
    let n = T::from_usize(b * plane).unwrap();
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for n_ in 0..b {
        for ch in 0..c {
            let off = (n_ * c + ch) * plane;
            for i in off..off + plane {
                d_beta[ch] += grad_out[i];
                d_gamma[ch] += grad_out[i] * normalized[i];
            }
        }
    }
    let mut d_input = vec![T::zero(); grad_out.len()];
    for n_ in 0..b {
        for ch in 0..c {
            let off = (n_ * c + ch) * plane;
            let scale = gamma[ch] * inv_std[ch];
            if training {
                let (sum_dy, sum_dy_xh) = (d_beta[ch], d_gamma[ch]);
                for i in off..off + plane {
                    d_input[i] =
                        scale / n * (n * grad_out[i] - sum_dy - normalized[i] * sum_dy_xh);
                }
            } else {
                for i in off..off + plane {
                    d_input[i] = scale * grad_out[i];
                }
            }
        }
    }
    BnGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_output_is_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.random_range(-3.0..5.0)).collect();
        let x = Tensor::new(&[2, 3, 4, 4], data).unwrap();
        let out = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], None, BN_EPS).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| out.output[(b * 3 + ch) * 16..(b * 3 + ch + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = Tensor::new(&[1, 2, 2, 2], vec![0.5f64, -1.0, 2.0, 3.0, 0.0, 1.0, -2.0, 4.0]).unwrap();
        let out = batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], Some((&[0.0; 2], &[1.0; 2])), BN_EPS).unwrap();
        for (o, i) in out.output.iter().zip(x.data()) {
            assert!((o - i).abs() <= i.abs() * 1e-5 + 1e-12);
        }
    }

    #[test]
    fn degenerate_batch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        assert!(matches!(
            batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], None, 1e-5),
            Err(Error::DegenerateBatch(_))
        ));
    }
}
