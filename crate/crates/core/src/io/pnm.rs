//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Rgb8Image};

fn encode(magic: &str, width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b' ' | b'\t' | b'\n' | b'\r' => pos += 1,
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ => break,
        }
    }
    pos
}

fn number(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let pos = skip_space(bytes, pos);
    let end = bytes[pos..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |i| pos + i);
    if end == pos {
        return Err(Error::parse(pos, format!("expected {what}")));
    }
    let v = std::str::from_utf8(&bytes[pos..end])
        .unwrap()
        .parse()
        .map_err(|_| Error::parse(pos, format!("{what} is out of range")))?;
    Ok((v, end))
}

/// Parses the header and returns `(width, height, data offset)`.
fn decode_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::parse(
            0,
            format!("expected magic `{}`", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let (width, pos) = number(bytes, 2, "width")?;
    let (height, pos) = number(bytes, pos, "height")?;
    let (maxval, pos) = number(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::parse(pos, format!("only maxval 255 is supported, got {maxval}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(Error::parse(pos, "expected one whitespace byte before the raster")),
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "empty raster"));
    }
    Ok((width, height, pos + 1))
}

fn raster(bytes: &[u8], start: usize, len: usize) -> Result<Vec<u8>> {
    let have = bytes.len() - start;
    if have < len {
        return Err(Error::parse(bytes.len(), format!("truncated raster: expected {len} bytes, got {have}")));
    }
    if have > len {
        return Err(Error::parse(start + len, "trailing bytes after raster"));
    }
    Ok(bytes[start..].to_vec())
}

pub fn encode_ppm(img: &Rgb8Image) -> Vec<u8> {
    encode("P6", img.width, img.height, &img.data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Rgb8Image> {
    let (w, h, start) = decode_header(bytes, b"P6")?;
    Rgb8Image::new(w, h, raster(bytes, start, 3 * w * h)?)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    encode("P5", img.width, img.height, &img.data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (w, h, start) = decode_header(bytes, b"P5")?;
    GrayImage::new(w, h, raster(bytes, start, w * h)?)
}

pub fn read_ppm(path: &Path) -> Result<Rgb8Image> {
    decode_ppm(&read_bytes(path)?)
}

pub fn write_ppm(path: &Path, img: &Rgb8Image) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_bytes(path)?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm(img))
}
