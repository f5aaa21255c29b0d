//! Label CSVs: `file,AU6,AU10,...` with one row per sample.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::codec::AuLabels;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    pub au_ids: Vec<u32>,
    pub rows: Vec<(String, AuLabels)>,
}

pub fn encode_labels_csv(table: &LabelTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["file".to_string()];
    header.extend(table.au_ids.iter().map(|id| format!("AU{id}")));
    w.write_record(&header)?;
    for (file, labels) in &table.rows {
        if labels.len() != table.au_ids.len() {
            return Err(Error::Label(format!(
                "row `{file}` has {} labels for {} AUs",
                labels.len(),
                table.au_ids.len()
            )));
        }
        let mut rec = vec![file.clone()];
        rec.extend(labels.values().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("flushing label CSV: {e}")))
}

pub fn decode_labels_csv(bytes: &[u8]) -> Result<LabelTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers()?.clone();
    if header.get(0) != Some("file") {
        return Err(Error::parse(0, "first column must be `file`"));
    }
    let au_ids = header
        .iter()
        .skip(1)
        .map(|h| {
            h.strip_prefix("AU")
                .and_then(|d| d.parse::<u32>().ok())
                .ok_or_else(|| Error::parse(0, format!("bad AU column `{h}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if au_ids.is_empty() {
        return Err(Error::parse(0, "no AU columns"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let at = rec.position().map_or(0, |p| p.byte() as usize);
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(at, format!("bad intensity `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = AuLabels::new(values).map_err(|e| Error::parse(at, e.to_string()))?;
        rows.push((rec[0].to_string(), labels));
    }
    Ok(LabelTable { au_ids, rows })
}

pub fn read_labels_csv(path: &Path) -> Result<LabelTable> {
    decode_labels_csv(&read_bytes(path)?)
}

pub fn write_labels_csv(path: &Path, table: &LabelTable) -> Result<()> {
    write_bytes(path, &encode_labels_csv(table)?)
}
