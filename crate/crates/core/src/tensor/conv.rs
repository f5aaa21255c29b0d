use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.height * self.width
    }
}

pub(crate) fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [batch, in_channels, height, width] = input.dims4("conv2d")?;
    let [filters, w_channels, kh, kw] = weight.dims4("conv2d")?;
    if w_channels != in_channels {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "C",
            expected: in_channels,
            got: w_channels,
        });
    }
    if let Some(b) = bias {
        if b.numel() != filters {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "F",
                expected: filters,
                got: b.numel(),
            });
        }
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be at least 1".into()));
    }
    if kh > height + 2 * padding {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "H",
            expected: kh,
            got: height + 2 * padding,
        });
    }
    if kw > width + 2 * padding {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "W",
            expected: kw,
            got: width + 2 * padding,
        });
    }
    Ok(ConvGeometry {
        batch,
        in_channels,
        height,
        width,
        filters,
        kh,
        kw,
        stride,
        padding,
        out_h: conv_output_extent(height, kh, stride, padding),
        out_w: conv_output_extent(width, kw, stride, padding),
    })
}

fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let src = &image[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Direct 2-D cross-correlation, `[B,C,H,W] ⋆ [F,C,kH,kW] → [B,F,H',W']`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride, padding)?;
    let plane = g.out_plane();
    let rows = g.col_rows();
    let mut out = vec![T::zero(); g.batch * g.filters * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for b in 0..g.batch {
        let image = &input.data()[b * g.in_channels * g.in_plane()..(b + 1) * g.in_channels * g.in_plane()];
        let cols_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        let dst = &mut out[b * g.filters * plane..(b + 1) * g.filters * plane];
        if let Some(bias) = bias {
            for (f, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias.data()[f]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.filters,
            rows,
            plane,
            T::one(),
            weight.data(),
            (rows as isize, 1),
            cols_ref,
            (plane as isize, 1),
            beta,
            dst,
            (plane as isize, 1),
        );
    }
    Tensor::new(&[g.batch, g.filters, g.out_h, g.out_w], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_len = g.in_channels * g.in_plane();
    let out_len = g.filters * plane;
    let (need_input, need_weight, need_bias) = need;

    let mut d_input = need_input.then(|| vec![T::zero(); g.batch * in_len]);
    let mut d_weight = need_weight.then(|| vec![T::zero(); g.filters * rows]);
    let d_bias = need_bias.then(|| {
        let mut db = vec![T::zero(); g.filters];
        for b in 0..g.batch {
            for (f, chunk) in grad_out[b * out_len..(b + 1) * out_len].chunks(plane).enumerate() {
                db[f] += chunk.iter().copied().sum::<T>();
            }
        }
        db
    });

    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * plane }];
    let mut d_cols = vec![T::zero(); if need_input && !g.is_pointwise() { rows * plane } else { 0 }];
    for b in 0..g.batch {
        let dy = &grad_out[b * out_len..(b + 1) * out_len];
        let image = &input[b * in_len..(b + 1) * in_len];
        if let Some(dw) = d_weight.as_mut() {
            let cols_ref: &[T] = if g.is_pointwise() {
                image
            } else {
                im2col(g, image, &mut cols);
                &cols
            };
            // dW += dY · colsᵀ
            T::gemm(
                g.filters,
                plane,
                rows,
                T::one(),
                dy,
                (plane as isize, 1),
                cols_ref,
                (1, plane as isize),
                T::one(),
                dw,
                (rows as isize, 1),
            );
        }
        if let Some(dx) = d_input.as_mut() {
            let dx_b = &mut dx[b * in_len..(b + 1) * in_len];
            // dcols = Wᵀ · dY
            if g.is_pointwise() {
                T::gemm(
                    rows,
                    g.filters,
                    plane,
                    T::one(),
                    weight,
                    (1, rows as isize),
                    dy,
                    (plane as isize, 1),
                    T::one(),
                    dx_b,
                    (plane as isize, 1),
                );
            } else {
                T::gemm(
                    rows,
                    g.filters,
                    plane,
                    T::one(),
                    weight,
                    (1, rows as isize),
                    dy,
                    (plane as isize, 1),
                    T::zero(),
                    &mut d_cols,
                    (plane as isize, 1),
                );
                col2im_add(g, &d_cols, dx_b);
            }
        }
    }
    ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    }
}
