//! Checkpoints: `AUHM1` magic, a human-readable key=value header ended by a
//! blank line, then one record per tensor:
//! `u32 name length | name | u32 rank | u32 extents… | f32 values…`, all
//! little-endian. Batch-norm statistics are stored as `<name>.running_mean`
//! and `<name>.running_var` records.

use std::fmt::Write;
use std::path::Path;

use super::{header_parse, header_value, parse_header, read_bytes, write_bytes, Reader};
use crate::codec::{parse_au_specs, AuSpec, CodecConfig, SigmaRule};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, RunningStats};
use crate::registration::{Point, RegistrationConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"AUHM1\n";
const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

/// A trained model with everything needed to preprocess and decode.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub au_specs: Vec<AuSpec>,
    pub codec: CodecConfig,
    pub registration: RegistrationConfig,
    pub seed: u64,
}

impl Checkpoint {
    pub fn au_ids(&self) -> Vec<u32> {
        self.au_specs.iter().map(|s| s.au_id).collect()
    }
}

fn push_record(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let c = ck.model.config();
    let mut h = String::new();
    writeln!(h, "model.input_size={}", c.input_size).unwrap();
    writeln!(h, "model.heatmap_size={}", c.heatmap_size).unwrap();
    writeln!(h, "model.n_aus={}", c.n_aus).unwrap();
    writeln!(h, "model.base_channels={}", c.base_channels).unwrap();
    writeln!(h, "model.mid_channels={}", c.mid_channels).unwrap();
    writeln!(h, "model.hourglass_depth={}", c.hourglass_depth).unwrap();
    let ids: Vec<String> = ck.au_ids().iter().map(u32::to_string).collect();
    writeln!(h, "au_ids={}", ids.join(",")).unwrap();
    for spec in &ck.au_specs {
        let text = spec.to_string();
        let groups = text.split_once(": ").map_or("", |(_, g)| g);
        writeln!(h, "au.{}={groups}", spec.au_id).unwrap();
    }
    match ck.codec.sigma_rule {
        SigmaRule::Proportional { factor } => writeln!(h, "codec.sigma_rule=proportional:{factor}").unwrap(),
        SigmaRule::Fixed { sigma } => writeln!(h, "codec.sigma_rule=fixed:{sigma}").unwrap(),
    }
    writeln!(h, "codec.truncation_factor={}", ck.codec.truncation_factor).unwrap();
    writeln!(h, "codec.heatmap_size={}", ck.codec.heatmap_size).unwrap();
    writeln!(h, "codec.scale_divisor={}", ck.codec.scale_divisor).unwrap();
    writeln!(h, "registration.out_size={}", ck.registration.out_size).unwrap();
    let refs: Vec<String> = ck.registration.reference.iter().map(|p| format!("{},{}", p.x, p.y)).collect();
    writeln!(h, "registration.reference={}", refs.join(";")).unwrap();
    writeln!(h, "seed={}", ck.seed).unwrap();
    h.push('\n');

    let mut out = MAGIC.to_vec();
    out.extend_from_slice(h.as_bytes());
    for (name, t) in ck.model.named_params() {
        push_record(&mut out, name, t.shape(), t.data());
    }
    for s in ck.model.running_stats() {
        push_record(&mut out, &format!("{}{MEAN_SUFFIX}", s.name), &[s.mean.len()], &s.mean);
        push_record(&mut out, &format!("{}{VAR_SUFFIX}", s.name), &[s.var.len()], &s.var);
    }
    out
}

fn parse_sigma_rule(v: &str) -> Result<SigmaRule> {
    let bad = || Error::Format(format!("bad sigma rule `{v}`"));
    let (kind, num) = v.split_once(':').ok_or_else(bad)?;
    let num: f64 = num.parse().map_err(|_| bad())?;
    match kind {
        "proportional" => Ok(SigmaRule::Proportional { factor: num }),
        "fixed" => Ok(SigmaRule::Fixed { sigma: num }),
        _ => Err(bad()),
    }
}

fn parse_reference(v: &str) -> Result<[Point; 3]> {
    let bad = || Error::Format(format!("bad registration reference `{v}`"));
    let pts = v
        .split(';')
        .map(|p| {
            let (x, y) = p.split_once(',').ok_or_else(bad)?;
            Ok(Point::new(x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?))
        })
        .collect::<Result<Vec<_>>>()?;
    pts.try_into().map_err(|_| bad())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let (pairs, start) = parse_header(bytes, MAGIC.len())?;
    let config = ModelConfig {
        input_size: header_parse(&pairs, "model.input_size")?,
        heatmap_size: header_parse(&pairs, "model.heatmap_size")?,
        n_aus: header_parse(&pairs, "model.n_aus")?,
        base_channels: header_parse(&pairs, "model.base_channels")?,
        mid_channels: header_parse(&pairs, "model.mid_channels")?,
        hourglass_depth: header_parse(&pairs, "model.hourglass_depth")?,
    };
    let mut spec_text = String::new();
    for id in header_value(&pairs, "au_ids")?.split(',') {
        writeln!(spec_text, "AU{id}: {}", header_value(&pairs, &format!("au.{id}"))?).unwrap();
    }
    let au_specs = parse_au_specs(&spec_text).map_err(|e| Error::Format(format!("AU map: {e}")))?;
    let codec = CodecConfig {
        sigma_rule: parse_sigma_rule(header_value(&pairs, "codec.sigma_rule")?)?,
        truncation_factor: header_parse(&pairs, "codec.truncation_factor")?,
        heatmap_size: header_parse(&pairs, "codec.heatmap_size")?,
        scale_divisor: header_parse(&pairs, "codec.scale_divisor")?,
    };
    let registration = RegistrationConfig {
        out_size: header_parse(&pairs, "registration.out_size")?,
        reference: parse_reference(header_value(&pairs, "registration.reference")?)?,
    };
    let seed = header_parse(&pairs, "seed")?;

    let mut r = Reader::new(bytes, start);
    let mut params = Vec::new();
    let mut means = Vec::new();
    let mut vars = std::collections::HashMap::new();
    while !r.at_end() {
        let at = r.pos;
        let len = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| Error::parse(at, "record name is not UTF-8"))?
            .to_string();
        let rank = r.u32("record rank")? as usize;
        if rank > 8 {
            return Err(Error::parse(at, format!("record `{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("record extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let values = r.f32s(shape.iter().product(), "record values")?;
        if let Some(base) = name.strip_suffix(MEAN_SUFFIX) {
            means.push((base.to_string(), values));
        } else if let Some(base) = name.strip_suffix(VAR_SUFFIX) {
            vars.insert(base.to_string(), values);
        } else {
            params.push((name, Tensor::new(&shape, values)?));
        }
    }
    let stats = means
        .into_iter()
        .map(|(name, mean)| {
            let var = vars
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("statistics `{name}` lack a variance record")))?;
            Ok(RunningStats { name, mean, var })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = Model::from_parts(&config, params, stats)?;
    Ok(Checkpoint {
        model,
        au_specs,
        codec,
        registration,
        seed,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ck))
}
