//! File formats: PPM/PGM rasters, landmark text files, label CSVs,
//! checkpoints, heatmap stacks and dataset directories.

mod checkpoint;
mod dataset;
mod heatmaps;
mod labels;
mod landmarks;
mod pnm;

use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, write_dataset, Dataset, LabeledSample, Manifest, ManifestEntry};
pub use heatmaps::{decode_heatmaps, encode_heatmaps, read_heatmaps, write_heatmaps};
pub use labels::{decode_labels_csv, encode_labels_csv, read_labels_csv, write_labels_csv, LabelTable};
pub use landmarks::{format_landmarks, parse_landmarks, read_landmarks, write_landmarks};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits `key=value` header lines up to the first blank line. Returns the
/// pairs and the byte offset just past the blank line.
pub(crate) fn parse_header(bytes: &[u8], start: usize) -> Result<(Vec<(String, String)>, usize)> {
    let mut pairs = Vec::new();
    let mut pos = start;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| Error::parse(pos, "header is not terminated by a blank line"))?;
        let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| Error::parse(pos, "header is not UTF-8"))?;
        if line.is_empty() {
            return Ok((pairs, end + 1));
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(pos, format!("expected key=value, got `{line}`")))?;
        pairs.push((k.to_string(), v.to_string()));
        pos = end + 1;
    }
}

pub(crate) fn header_value<'a>(pairs: &'a [(String, String)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("header is missing `{key}`")))
}

pub(crate) fn header_parse<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
    let v = header_value(pairs, key)?;
    v.parse()
        .map_err(|_| Error::Format(format!("header `{key}` has bad value `{v}`")))
}

/// Little-endian cursor over a byte buffer that reports truncation offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.bytes.len(),
                format!("truncated {what}: needed {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
