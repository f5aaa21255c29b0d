//! Heatmap encoding of AU intensities and max-based decoding.
//!
//! Each AU owns one channel. Its centres are means of small groups of
//! registered landmarks, divided down to heatmap resolution and rounded to
//! the nearest pixel. At every centre a Gaussian of amplitude `I` and width
//! `σ(I)` is drawn inside a `±truncation·I` box, and the channel keeps the
//! pointwise maximum over centres. Decoding takes each channel's maximum and
//! clamps it to `[0, 5]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{mean_point, LandmarkSet, N_LANDMARKS};
use crate::tensor::{Scalar, Tensor};

pub const MAX_INTENSITY: f64 = 5.0;

/// AUs annotated in the reference benchmark, in channel order.
pub const DEFAULT_AU_IDS: [u32; 5] = [6, 10, 12, 14, 17];

/// Default landmark groups per AU (66-point markup, 0-based).
pub const DEFAULT_AU_SPEC: &str = "\
# cheeks, below the lower eyelids
AU6: (1,41);(15,46)
# mouth corners and nose base
AU10: (48);(54);(33)
AU12: (48);(54)
AU14: (48);(54)
# chin, either side of the midline
AU17: (7,58);(9,56)
";

/// Where one AU's Gaussians go.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuSpec {
    pub au_id: u32,
    /// Each group's landmark mean is one centre.
    pub centers: Vec<Vec<usize>>,
}

impl std::fmt::Display for AuSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AU{}: ", self.au_id)?;
        for (k, group) in self.centers.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            let idx: Vec<String> = group.iter().map(usize::to_string).collect();
            write!(f, "({})", idx.join(","))?;
        }
        Ok(())
    }
}

pub fn default_au_specs() -> Vec<AuSpec> {
    parse_au_specs(DEFAULT_AU_SPEC).expect("built-in AU map parses")
}

/// Restricts specs to the given AU ids, in the order given.
pub fn select_aus(specs: &[AuSpec], ids: &[u32]) -> Result<Vec<AuSpec>> {
    ids.iter()
        .map(|id| {
            specs
                .iter()
                .find(|s| s.au_id == *id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("AU{id} is not in the AU map")))
        })
        .collect()
}

/// Parses `AU<id>: (i,j,...);(i,j,...)` lines. Blank lines and `#` comments
/// are ignored.
pub fn parse_au_specs(text: &str) -> Result<Vec<AuSpec>> {
    let mut specs: Vec<AuSpec> = Vec::new();
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        let line_start = offset;
        offset += raw.len();
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let lead = line.len() - line.trim_start().len();
        let at = |k: usize| line_start + lead + k;
        let line = line.trim();
        let (head, body) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(at(0), "expected `AU<id>: ...`"))?;
        let au_id: u32 = head
            .trim()
            .strip_prefix("AU")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::parse(at(0), format!("bad AU label `{}`", head.trim())))?;
        let mut centers = Vec::new();
        let mut pos = head.len() + 1;
        for group in body.split(';') {
            let g = group.trim();
            let inner = g
                .strip_prefix('(')
                .and_then(|g| g.strip_suffix(')'))
                .ok_or_else(|| Error::parse(at(pos), format!("expected `(i,j,...)`, got `{g}`")))?;
            let idx = inner
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&i| i < N_LANDMARKS)
                        .ok_or_else(|| Error::parse(at(pos), format!("bad landmark index `{}`", t.trim())))
                })
                .collect::<Result<Vec<_>>>()?;
            if idx.is_empty() || idx.len() > 3 {
                return Err(Error::parse(at(pos), "a centre groups 1 to 3 landmarks"));
            }
            centers.push(idx);
            pos += group.len() + 1;
        }
        if !(2..=3).contains(&centers.len()) {
            return Err(Error::parse(
                at(0),
                format!("AU{au_id} needs 2 or 3 centres, got {}", centers.len()),
            ));
        }
        if specs.iter().any(|s| s.au_id == au_id) {
            return Err(Error::parse(at(0), format!("AU{au_id} listed twice")));
        }
        specs.push(AuSpec { au_id, centers });
    }
    if specs.is_empty() {
        return Err(Error::parse(0, "no AU definitions"));
    }
    Ok(specs)
}

pub fn format_au_specs(specs: &[AuSpec]) -> String {
    specs.iter().map(|s| format!("{s}\n")).collect()
}

/// Gaussian width as a function of intensity, in heatmap pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaRule {
    /// `σ = factor · I`.
    Proportional { factor: f64 },
    /// `σ` independent of intensity.
    Fixed { sigma: f64 },
}

impl SigmaRule {
    pub fn sigma(&self, intensity: f64) -> f64 {
        match *self {
            SigmaRule::Proportional { factor } => factor * intensity,
            SigmaRule::Fixed { sigma } => sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub sigma_rule: SigmaRule,
    /// Box half-width is `truncation_factor · I` heatmap pixels.
    pub truncation_factor: f64,
    pub heatmap_size: usize,
    /// Registered-image pixels per heatmap pixel.
    pub scale_divisor: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            sigma_rule: SigmaRule::Proportional { factor: 1.0 },
            truncation_factor: 6.0,
            heatmap_size: 64,
            scale_divisor: 4.0,
        }
    }
}

impl CodecConfig {
    pub fn for_heatmap_size(heatmap_size: usize) -> Self {
        Self {
            heatmap_size,
            ..Self::default()
        }
    }
}

/// Per-AU intensities in `[0, 5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuLabels(Vec<f64>);

impl AuLabels {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=MAX_INTENSITY).contains(*v))
        {
            return Err(Error::Label(format!(
                "intensity {v} at position {i} is outside [0, {MAX_INTENSITY}]"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Picks positions out of a wider label vector.
    pub fn select(&self, positions: &[usize]) -> Self {
        Self(positions.iter().map(|&p| self.0[p]).collect())
    }
}

/// `channels × size × size` heatmaps, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    size: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    pub fn zeros(channels: usize, size: usize) -> Self {
        Self {
            channels,
            size,
            data: vec![0.0; channels * size * size],
        }
    }

    pub fn from_data(channels: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * size * size {
            return Err(Error::shape(
                "heatmap_stack",
                format!("{channels}×{size}×{size} needs {} values, got {}", channels * size * size, data.len()),
            ));
        }
        Ok(Self { channels, size, data })
    }

    /// One sample out of a `[B, N, H, W]` network output.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, sample: usize) -> Result<Self> {
        let [b, n, h, w] = t.dims4("heatmap_stack")?;
        if h != w {
            return Err(Error::shape("heatmap_stack", format!("heatmaps must be square, got {h}×{w}")));
        }
        if sample >= b {
            return Err(Error::shape("heatmap_stack", format!("sample {sample} out of batch {b}")));
        }
        let len = n * h * w;
        let data = t.data()[sample * len..(sample + 1) * len]
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect();
        Ok(Self {
            channels: n,
            size: h,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, a: usize) -> &[f64] {
        let plane = self.size * self.size;
        &self.data[a * plane..(a + 1) * plane]
    }

    fn channel_mut(&mut self, a: usize) -> &mut [f64] {
        let plane = self.size * self.size;
        &mut self.data[a * plane..(a + 1) * plane]
    }

    pub fn get(&self, a: usize, x: usize, y: usize) -> f64 {
        self.channel(a)[y * self.size + x]
    }

    /// Position of the channel maximum (first in row-major order on ties).
    pub fn argmax(&self, a: usize) -> (usize, usize) {
        let ch = self.channel(a);
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if v > ch[best] {
                best = i;
            }
        }
        (best % self.size, best / self.size)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Heatmap-pixel centres for one AU: `round(mean(group) / divisor)`.
/// Centres may fall outside the heatmap; drawing clips them.
pub fn centers_for_au(lms: &LandmarkSet, spec: &AuSpec, config: &CodecConfig) -> Vec<(i64, i64)> {
    spec.centers
        .iter()
        .map(|group| {
            let m = mean_point(group.iter().map(|&i| lms.get(i)));
            (
                (m.x / config.scale_divisor).round() as i64,
                (m.y / config.scale_divisor).round() as i64,
            )
        })
        .collect()
}

fn check_intensity(intensity: f64) -> Result<()> {
    if !(0.0..=MAX_INTENSITY).contains(&intensity) {
        return Err(Error::Label(format!(
            "intensity {intensity} is outside [0, {MAX_INTENSITY}]"
        )));
    }
    Ok(())
}

fn draw_max(map: &mut [f64], size: usize, intensity: f64, centers: &[(i64, i64)], config: &CodecConfig) {
    if intensity == 0.0 {
        return;
    }
    let sigma = config.sigma_rule.sigma(intensity);
    let half = (config.truncation_factor * intensity).floor() as i64;
    let denom = 2.0 * sigma * sigma;
    let n = size as i64;
    for &(cx, cy) in centers {
        for j in -half..=half {
            let y = cy + j;
            if y < 0 || y >= n {
                continue;
            }
            for i in -half..=half {
                let x = cx + i;
                if x < 0 || x >= n {
                    continue;
                }
                let r2 = (i * i + j * j) as f64;
                let v = if r2 == 0.0 {
                    intensity
                } else {
                    intensity * (-r2 / denom).exp()
                };
                let slot = &mut map[(y * n + x) as usize];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
}

/// One channel: pointwise max of truncated Gaussians at `centers`.
pub fn encode_au(intensity: f64, centers: &[(i64, i64)], config: &CodecConfig) -> Result<Vec<f64>> {
    check_intensity(intensity)?;
    let size = config.heatmap_size;
    let mut map = vec![0.0; size * size];
    draw_max(&mut map, size, intensity, centers, config);
    Ok(map)
}

/// All channels for a registered face, in spec order.
pub fn encode_all(
    labels: &AuLabels,
    lms: &LandmarkSet,
    specs: &[AuSpec],
    config: &CodecConfig,
) -> Result<HeatmapStack> {
    if labels.len() != specs.len() {
        return Err(Error::Label(format!(
            "{} labels for {} AU channels",
            labels.len(),
            specs.len()
        )));
    }
    let mut stack = HeatmapStack::zeros(specs.len(), config.heatmap_size);
    for (a, (spec, &intensity)) in specs.iter().zip(labels.values()).enumerate() {
        check_intensity(intensity)?;
        let centers = centers_for_au(lms, spec, config);
        let size = config.heatmap_size;
        draw_max(stack.channel_mut(a), size, intensity, &centers, config);
    }
    Ok(stack)
}

/// Channel maxima clamped to `[0, 5]`.
pub fn decode(stack: &HeatmapStack) -> AuLabels {
    AuLabels(
        (0..stack.channels)
            .map(|a| decode_channel(stack.channel(a)))
            .collect(),
    )
}

fn decode_channel(values: &[f64]) -> f64 {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak.is_nan() {
        0.0
    } else {
        peak.clamp(0.0, MAX_INTENSITY)
    }
}

/// Decodes every sample of a `[B, N, H, W]` network output.
pub fn decode_batch<T: Scalar>(output: &Tensor<T>) -> Result<Vec<AuLabels>> {
    let [b, n, h, w] = output.dims4("decode")?;
    let plane = h * w;
    Ok((0..b)
        .map(|s| {
            AuLabels(
                (0..n)
                    .map(|a| {
                        let off = (s * n + a) * plane;
                        let peak = output.data()[off..off + plane]
                            .iter()
                            .map(|v| v.to_f64().unwrap())
                            .fold(f64::NEG_INFINITY, f64::max);
                        if peak.is_nan() {
                            0.0
                        } else {
                            peak.clamp(0.0, MAX_INTENSITY)
                        }
                    })
                    .collect(),
            )
        })
        .collect())
}
