//! Heatmap stack files: `AUHS1` magic, a key=value header, then
//! little-endian `f32` values channel by channel in row-major order.

use std::fmt::Write;
use std::path::Path;

use super::{header_parse, header_value, parse_header, read_bytes, write_bytes, Reader};
use crate::codec::HeatmapStack;
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"AUHS1\n";

pub fn encode_heatmaps(stack: &HeatmapStack, au_ids: &[u32]) -> Result<Vec<u8>> {
    if au_ids.len() != stack.channels() {
        return Err(Error::Label(format!(
            "{} AU ids for {} channels",
            au_ids.len(),
            stack.channels()
        )));
    }
    let ids: Vec<String> = au_ids.iter().map(u32::to_string).collect();
    let mut header = String::new();
    writeln!(header, "channels={}", stack.channels()).unwrap();
    writeln!(header, "size={}", stack.size()).unwrap();
    writeln!(header, "au_ids={}", ids.join(",")).unwrap();
    header.push('\n');
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(header.as_bytes());
    for v in stack.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Returns the AU ids and the stack.
pub fn decode_heatmaps(bytes: &[u8]) -> Result<(Vec<u32>, HeatmapStack)> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Format("not a heatmap stack (bad magic)".into()));
    }
    let (pairs, start) = parse_header(bytes, MAGIC.len())?;
    let channels: usize = header_parse(&pairs, "channels")?;
    let size: usize = header_parse(&pairs, "size")?;
    let au_ids = header_value(&pairs, "au_ids")?
        .split(',')
        .map(|t| t.parse::<u32>().map_err(|_| Error::Format(format!("bad AU id `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if au_ids.len() != channels {
        return Err(Error::Format(format!("{} AU ids for {channels} channels", au_ids.len())));
    }
    let mut r = Reader::new(bytes, start);
    let data = r.f32s(channels * size * size, "heatmap values")?;
    if !r.at_end() {
        return Err(Error::parse(r.pos, "trailing bytes after heatmap values"));
    }
    let stack = HeatmapStack::from_data(channels, size, data.into_iter().map(f64::from).collect())?;
    Ok((au_ids, stack))
}

pub fn read_heatmaps(path: &Path) -> Result<(Vec<u32>, HeatmapStack)> {
    decode_heatmaps(&read_bytes(path)?)
}

pub fn write_heatmaps(path: &Path, stack: &HeatmapStack, au_ids: &[u32]) -> Result<()> {
    write_bytes(path, &encode_heatmaps(stack, au_ids)?)
}
