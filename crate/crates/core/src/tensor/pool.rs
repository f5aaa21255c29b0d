use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// 2×2 stride-2 max pooling. Returns the pooled values and, for each output,
/// the flat input index it was taken from. Ties keep the first element in
/// row-major order.
pub(crate) fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = input.dims4("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2",
            format!("spatial extents must be even, got {h}×{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[b, c, oh, ow], out)?, argmax))
}

pub(crate) fn upsample2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("upsample_nearest2")?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let row = &src[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, v) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *v = row[ox / 2];
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn upsample2_backward<T: Scalar>(dims_in: [usize; 4], grad_out: &[T]) -> Vec<T> {
    let [b, c, h, w] = dims_in;
    let ow = 2 * w;
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let src = &grad_out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oy, line) in src.chunks(ow).enumerate() {
            for (ox, &g) in line.iter().enumerate() {
                dst[(oy / 2) * w + ox / 2] += g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_replicates_and_pool_inverts() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample2_forward(&x).unwrap();
        assert_eq!(
            up.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let (down, _) = maxpool2_forward(&up).unwrap();
        assert_eq!(down.data(), x.data());
    }

    #[test]
    fn pool_ties_pick_first_row_major() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![7.0f32, 7.0, 7.0, 7.0]).unwrap();
        let (_, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(arg, vec![0]);
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 3.0, 3.0, 2.0]).unwrap();
        let (_, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn pool_rejects_odd_extent() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(maxpool2_forward(&x).is_err());
    }
}
