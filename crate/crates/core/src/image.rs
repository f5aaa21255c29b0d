//! Planar RGB and 8-bit grayscale rasters.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image with channel-planar `f32` samples nominally in `[0, 1]`.
///
/// Pixel `(x, y)` sits at integer coordinates; `x` grows to the right and `y`
/// downwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape(
                "rgb_image",
                format!("{width}×{height} needs {} samples, got {}", 3 * width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    /// Interleaved 8-bit samples, as stored in a binary PPM.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::shape(
                "rgb_image",
                format!("{width}×{height} needs {} bytes, got {}", 3 * width * height, bytes.len()),
            ));
        }
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in bytes.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Ok(Self { width, height, data })
    }

    /// Quantises to interleaved 8-bit samples with rounding and clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push(quantize(self.data[c * plane + i]));
            }
        }
        out
    }

    /// Round-trips through 8-bit storage.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(self.width, self.height, &self.to_rgb8()).expect("same extent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[plane + i] = rgb[1];
        self.data[2 * plane + i] = rgb[2];
    }

    fn at_or_black(&self, c: usize, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.data[c * self.width * self.height + y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample; neighbours outside the raster count as black.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let mut out = [0.0f32; 3];
        for (c, v) in out.iter_mut().enumerate() {
            let p00 = self.at_or_black(c, xi, yi);
            if fx == 0.0 && fy == 0.0 {
                *v = p00;
                continue;
            }
            let p10 = self.at_or_black(c, xi + 1, yi);
            let p01 = self.at_or_black(c, xi, yi + 1);
            let p11 = self.at_or_black(c, xi + 1, yi + 1);
            let top = p00 + (p10 - p00) * fx;
            let bottom = p01 + (p11 - p01) * fx;
            *v = top + (bottom - top) * fy;
        }
        out
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.put(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Max absolute sample difference over pixels at least `margin` from the border.
    pub fn interior_max_abs_diff(&self, other: &Self, margin: usize) -> f32 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut worst = 0.0f32;
        for c in 0..3 {
            for y in margin..self.height.saturating_sub(margin) {
                for x in margin..self.width.saturating_sub(margin) {
                    let i = c * self.width * self.height + y * self.width + x;
                    worst = worst.max((self.data[i] - other.data[i]).abs());
                }
            }
        }
        worst
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks same-sized images into a `[B, 3, H, W]` tensor.
pub fn batch_tensor(images: &[&RgbImage]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("batch_tensor", "empty batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::shape(
                "batch_tensor",
                format!("mixed extents {w}×{h} and {}×{}", img.width, img.height),
            ));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Interleaved 8-bit RGB, the storage form of dataset images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape(
                "rgb8_image",
                format!("{width}×{height} needs {} bytes, got {}", 3 * width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.to_rgb8(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_rgb8(self.width, self.height, &self.data).expect("extent checked on construction")
    }
}

/// 8-bit single-channel raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "gray_image",
                format!("{width}×{height} needs {} bytes, got {}", width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_integer_is_exact_and_outside_is_black() {
        let img = RgbImage::from_fn(3, 2, |x, y| [x as f32 * 0.1, y as f32 * 0.3, 0.7]);
        assert_eq!(img.sample_bilinear(2.0, 1.0), img.get(2, 1));
        assert_eq!(img.sample_bilinear(-5.0, 0.0), [0.0; 3]);
        let mid = img.sample_bilinear(0.5, 0.0);
        assert!((mid[0] - 0.05).abs() < 1e-7);
    }

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..4 * 3 * 3).map(|v| (v * 7 % 256) as u8).collect();
        let img = RgbImage::from_rgb8(4, 3, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }
}
