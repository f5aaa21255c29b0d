//! Procedural faces with exact landmarks and AU intensity labels.
//!
//! A cartoon face (head ellipse, brows, eyes, nose, lips) is drawn with
//! anti-aliased signed-distance primitives under a per-seed pose and palette.
//! Each AU then changes appearance only near its heatmap centres, with a
//! magnitude linear in intensity:
//!
//! | AU | geometry | colour |
//! |----|----------|--------|
//! | 6  | –        | cheeks brighten |
//! | 10 | upper-lip lift | red flush at mouth corners and nose base |
//! | 12 | mouth corners up to 8 px higher | green-shifted corners |
//! | 14 | –        | darker, tighter corner dimples |
//! | 17 | chin lift | chin shading |
//!
//! AUs that share centres (10, 12 and 14 at the mouth corners) use linearly
//! independent colour directions so each intensity stays recoverable.
//! Landmarks follow the geometric displacement exactly, and images are
//! quantised to 8 bits once, here.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{default_au_specs, AuLabels, AuSpec, DEFAULT_AU_IDS, MAX_INTENSITY};
use crate::error::Result;
use crate::image::{Rgb8Image, RgbImage};
use crate::io::{write_dataset, LabeledSample, Manifest};
use crate::registration::{markup, mean_point, LandmarkSet, Point, N_LANDMARKS};

pub const SOURCE_SIZE: usize = 256;
pub const GENERATOR: &str = "auhm-synth";
/// Probability that an AU is absent in a generated sample.
pub const ZERO_PROB: f64 = 0.55;
/// Interocular distance of the template at scale 1, in source pixels.
const EYE_SPAN: f64 = 64.0;
/// Nominal eye-midpoint position on the canvas.
const FACE_ORIGIN: Point = Point::new(128.0, 112.0);

/// Radius (source pixels) beyond which an AU leaves pixels untouched,
/// measured from its centres in either the neutral or the displaced face.
pub const EFFECT_REACH: f64 = 20.0;

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
    pub labels: AuLabels,
}

impl SynthSample {
    pub fn into_labeled(self, name: String) -> LabeledSample {
        LabeledSample {
            name,
            image: Rgb8Image::from_rgb(&self.image),
            landmarks: self.landmarks,
            labels: self.labels,
        }
    }
}

/// Draws independent labels: zero with probability [`ZERO_PROB`], otherwise
/// uniform on `{0.01, 0.02, …, 5.00}`.
pub fn sample_labels<R: Rng + ?Sized>(rng: &mut R, n: usize) -> AuLabels {
    let v = (0..n)
        .map(|_| {
            if rng.random_bool(ZERO_PROB) {
                0.0
            } else {
                rng.random_range(1..=500u32) as f64 / 100.0
            }
        })
        .collect();
    AuLabels::new(v).expect("labels drawn in range")
}

/// The template in face units: eye midpoint at the origin, eyes at x = ±0.5,
/// mouth centre at (0, 1), y pointing down. Index 0 is on the image left.
pub fn template() -> [Point; N_LANDMARKS] {
    let mut p = [Point::new(0.0, 0.0); N_LANDMARKS];
    for k in 0..17 {
        let t = std::f64::consts::PI * k as f64 / 16.0;
        p[k] = Point::new(-0.95 * t.cos(), -0.1 + 1.55 * t.sin());
    }
    let brow = [(-0.85, -0.30), (-0.70, -0.37), (-0.52, -0.40), (-0.34, -0.38), (-0.16, -0.32)];
    for (k, &(x, y)) in brow.iter().enumerate() {
        p[17 + k] = Point::new(x, y);
        p[26 - k] = Point::new(-x, y);
    }
    for k in 0..4 {
        p[27 + k] = Point::new(0.0, 0.12 + 0.15 * k as f64);
    }
    let base = [(-0.17, 0.63), (-0.09, 0.66), (0.0, 0.68), (0.09, 0.66), (0.17, 0.63)];
    for (k, &(x, y)) in base.iter().enumerate() {
        p[31 + k] = Point::new(x, y);
    }
    let eye = [(-0.72, 0.0), (-0.58, -0.08), (-0.42, -0.08), (-0.28, 0.0), (-0.42, 0.08), (-0.58, 0.08)];
    for (k, &(x, y)) in eye.iter().enumerate() {
        p[36 + k] = Point::new(x, y);
        p[markup::MIRROR[36 + k]] = Point::new(-x, y);
    }
    let outer = [
        (-0.40, 0.0),
        (-0.25, -0.08),
        (-0.10, -0.12),
        (0.0, -0.10),
        (0.10, -0.12),
        (0.25, -0.08),
        (0.40, 0.0),
        (0.25, 0.10),
        (0.10, 0.14),
        (0.0, 0.15),
        (-0.10, 0.14),
        (-0.25, 0.10),
    ];
    let inner = [(-0.12, -0.02), (0.0, -0.03), (0.12, -0.02), (0.12, 0.03), (0.0, 0.04), (-0.12, 0.03)];
    let mouth: Vec<(f64, f64)> = outer.iter().chain(inner.iter()).copied().collect();
    // Centre the mouth group so its mean sits exactly at (0, 1).
    let my = mouth.iter().map(|m| m.1).sum::<f64>() / mouth.len() as f64;
    for (k, &(x, y)) in mouth.iter().enumerate() {
        p[48 + k] = Point::new(x, 1.0 + y - my);
    }
    p
}

/// Per-seed appearance: pose and palette.
#[derive(Clone, Debug)]
struct Look {
    origin: Point,
    scale: f64,
    cos: f64,
    sin: f64,
    background: [f32; 3],
    skin: [f32; 3],
    brow: [f32; 3],
    iris: [f32; 3],
    lip: [f32; 3],
}

impl Look {
    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let dx = rng.random_range(-20.0..=20.0);
        let dy = rng.random_range(-20.0..=20.0);
        let angle = rng.random_range(-15.0f64..=15.0).to_radians();
        let scale = rng.random_range(0.85..=1.15);
        let r: f32 = rng.random_range(0.45..0.70);
        let skin = [r, r * rng.random_range(0.72..0.85), r * rng.random_range(0.55..0.70)];
        let background = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
        let dark: f32 = rng.random_range(0.15..0.35);
        let brow = [skin[0] * dark, skin[1] * dark, skin[2] * dark];
        let iris = [
            rng.random_range(0.05..0.3),
            rng.random_range(0.05..0.3),
            rng.random_range(0.05..0.3),
        ];
        let lip = [skin[0] * 0.95, skin[1] * 0.62, skin[2] * 0.68];
        Self {
            origin: Point::new(FACE_ORIGIN.x + dx, FACE_ORIGIN.y + dy),
            scale,
            cos: angle.cos(),
            sin: angle.sin(),
            background,
            skin,
            brow,
            iris,
            lip,
        }
    }

    fn unit(&self) -> f64 {
        self.scale * EYE_SPAN
    }

    fn to_source(&self, f: Point) -> Point {
        let u = self.unit();
        Point::new(
            self.origin.x + u * (self.cos * f.x - self.sin * f.y),
            self.origin.y + u * (self.sin * f.x + self.cos * f.y),
        )
    }

    fn to_face(&self, q: Point) -> Point {
        let u = self.unit();
        let (dx, dy) = (q.x - self.origin.x, q.y - self.origin.y);
        Point::new((self.cos * dx + self.sin * dy) / u, (-self.sin * dx + self.cos * dy) / u)
    }

    /// Face "up" in source coordinates.
    fn up(&self) -> Point {
        Point::new(self.sin, -self.cos)
    }
}

fn bump(r: f64, radius: f64) -> f64 {
    if r >= radius {
        0.0
    } else {
        let u = r / radius;
        (1.0 - u * u) * (1.0 - u * u)
    }
}

fn capsule(p: Point, a: Point, b: Point, radius: f64) -> f64 {
    let ab = b - a;
    let ap = p - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    let t = if len2 == 0.0 { 0.0 } else { ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0) };
    p.dist(a + ab * t) - radius
}

/// Approximate signed distance to an axis-aligned ellipse.
fn ellipse(p: Point, c: Point, rx: f64, ry: f64) -> f64 {
    let q = Point::new((p.x - c.x) / rx, (p.y - c.y) / ry);
    (q.x.hypot(q.y) - 1.0) * rx.min(ry)
}

/// Exact signed distance to a simple polygon (negative inside).
fn polygon(p: Point, verts: &[Point]) -> f64 {
    let mut d = f64::INFINITY;
    let mut inside = false;
    let n = verts.len();
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        d = d.min(capsule(p, a, b, 0.0));
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    if inside {
        -d
    } else {
        d
    }
}

fn blend(dst: &mut [f32; 3], src: [f32; 3], alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    let a = alpha.min(1.0) as f32;
    for c in 0..3 {
        dst[c] += (src[c] - dst[c]) * a;
    }
}

/// Neutral-face colour at face-unit position `f`; `px` is one pixel in face units.
fn shade_neutral(look: &Look, tpl: &[Point; N_LANDMARKS], f: Point, px: f64) -> [f32; 3] {
    let cover = |d: f64| (0.5 - d / px).clamp(0.0, 1.0);
    let mut c = look.background;
    blend(&mut c, look.skin, cover(ellipse(f, Point::new(0.0, -0.1), 0.95, 1.55)));
    if f.y > 0.9 || f.y < -0.6 || f.x.abs() > 0.95 {
        // Only lips and chin lie below the mouth line; nothing drawn above the brows.
        if f.y > 0.7 && f.y < 1.3 && f.x.abs() < 0.5 {
            let lips: Vec<Point> = tpl[48..60].to_vec();
            blend(&mut c, look.lip, cover(polygon(f, &lips)));
            mouth_line(&mut c, tpl, f, &cover);
        }
        return c;
    }
    for side in [17usize, 22] {
        for k in side..side + 4 {
            blend(&mut c, look.brow, cover(capsule(f, tpl[k], tpl[k + 1], 0.035)));
        }
    }
    for (centre, lo) in [(-0.5, 36usize), (0.5, 42)] {
        let eye = ellipse(f, Point::new(centre, 0.0), 0.22, 0.085);
        blend(&mut c, [0.93, 0.92, 0.90], cover(eye));
        let iris = ellipse(f, Point::new(centre, 0.0), 0.07, 0.07).max(eye);
        blend(&mut c, look.iris, cover(iris));
        for k in lo..lo + 3 {
            blend(&mut c, look.brow, cover(capsule(f, tpl[k], tpl[k + 1], 0.01)));
        }
    }
    let ridge = [look.skin[0] * 0.85, look.skin[1] * 0.85, look.skin[2] * 0.85];
    blend(&mut c, ridge, cover(capsule(f, tpl[27], tpl[30], 0.025)));
    let nostril = [look.skin[0] * 0.45, look.skin[1] * 0.45, look.skin[2] * 0.45];
    for k in [31usize, 35] {
        blend(&mut c, nostril, cover(ellipse(f, tpl[k] + Point::new(0.0, -0.01), 0.05, 0.03)));
    }
    if f.y > 0.7 {
        let lips: Vec<Point> = tpl[48..60].to_vec();
        blend(&mut c, look.lip, cover(polygon(f, &lips)));
        mouth_line(&mut c, tpl, f, &cover);
    }
    c
}

fn mouth_line(c: &mut [f32; 3], tpl: &[Point; N_LANDMARKS], f: Point, cover: &impl Fn(f64) -> f64) {
    let path = [tpl[48], tpl[60], tpl[61], tpl[62], tpl[54]];
    let d = path
        .windows(2)
        .map(|w| capsule(f, w[0], w[1], 0.012))
        .fold(f64::INFINITY, f64::min);
    blend(c, [0.12, 0.05, 0.05], cover(d));
}

/// A radial displacement or colour effect, in source pixels.
#[derive(Clone, Copy, Debug)]
struct Effect {
    centre: Point,
    radius: f64,
}

/// Geometric part: translations along face-up, `amount` pixels at the centre.
struct Lift {
    at: Effect,
    amount: f64,
}

/// Photometric part: additive colour, scaled by the bump profile.
struct Tint {
    at: Effect,
    colour: [f64; 3],
}

fn group_mean(lms: &[Point], group: &[usize]) -> Point {
    mean_point(group.iter().map(|&i| lms[i]))
}

fn au_index(id: u32) -> Option<usize> {
    DEFAULT_AU_IDS.iter().position(|&a| a == id)
}

fn lifts(look: &Look, neutral: &[Point], labels: &[f64]) -> Vec<(Point, Lift)> {
    let up = look.up();
    let mut out = Vec::new();
    let k = |id| au_index(id).map_or(0.0, |i| labels[i] / MAX_INTENSITY);
    let au12 = k(12);
    if au12 > 0.0 {
        for i in [48usize, 54] {
            out.push((up, Lift { at: Effect { centre: neutral[i], radius: 16.0 }, amount: 8.0 * au12 }));
        }
    }
    let au10 = k(10);
    if au10 > 0.0 {
        let mid = (neutral[33] + neutral[51]) * 0.5;
        out.push((up, Lift { at: Effect { centre: mid, radius: 10.0 }, amount: 3.0 * au10 }));
    }
    let au17 = k(17);
    if au17 > 0.0 {
        for group in [[7usize, 58], [9, 56]] {
            let c = group_mean(neutral, &group);
            out.push((up, Lift { at: Effect { centre: c, radius: 14.0 }, amount: 3.0 * au17 }));
        }
    }
    out
}

fn displacement(lifts: &[(Point, Lift)], p: Point) -> Point {
    let mut d = Point::new(0.0, 0.0);
    for (dir, l) in lifts {
        let w = bump(p.dist(l.at.centre), l.at.radius);
        if w > 0.0 {
            d = d + *dir * (l.amount * w);
        }
    }
    d
}

fn tints(specs: &[AuSpec], displaced: &[Point], labels: &[f64]) -> Vec<Tint> {
    let mut out = Vec::new();
    for spec in specs {
        let Some(i) = au_index(spec.au_id) else { continue };
        let k = labels[i] / MAX_INTENSITY;
        if k == 0.0 {
            continue;
        }
        let (radius, colour) = match spec.au_id {
            6 => (16.0, [0.22, 0.18, 0.15]),
            10 => (12.0, [0.24, -0.12, -0.10]),
            12 => (12.0, [-0.10, 0.22, -0.08]),
            14 => (10.0, [-0.22, -0.22, -0.20]),
            17 => (14.0, [-0.16, -0.16, -0.04]),
            _ => continue,
        };
        for group in &spec.centers {
            out.push(Tint {
                at: Effect { centre: group_mean(displaced, group), radius },
                colour: colour.map(|c| c * k),
            });
        }
    }
    out
}

/// Renders the sample for `seed`. Pose and palette depend only on the seed;
/// labels are drawn from it too unless given.
pub fn generate_sample(seed: u64, labels: Option<&AuLabels>) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let look = Look::draw(&mut rng);
    let drawn = sample_labels(&mut rng, DEFAULT_AU_IDS.len());
    let labels = labels.cloned().unwrap_or(drawn);
    assert_eq!(labels.len(), DEFAULT_AU_IDS.len(), "one label per generated AU");
    render(&look, &labels)
}

fn render(look: &Look, labels: &AuLabels) -> SynthSample {
    let tpl = template();
    let neutral: Vec<Point> = tpl.iter().map(|&f| look.to_source(f)).collect();
    let lifts = lifts(look, &neutral, labels.values());
    let displaced: Vec<Point> = neutral.iter().map(|&p| p + displacement(&lifts, p)).collect();
    let specs = default_au_specs();
    let tints = tints(&specs, &displaced, labels.values());
    let px = 1.0 / look.unit();

    let image = RgbImage::from_fn(SOURCE_SIZE, SOURCE_SIZE, |x, y| {
        let p = Point::new(x as f64, y as f64);
        // Invert p = q + D(q) by fixed-point iteration; D is a contraction.
        let mut q = p;
        if !lifts.is_empty() {
            for _ in 0..12 {
                q = p - displacement(&lifts, q);
            }
        }
        let mut c = shade_neutral(look, &tpl, look.to_face(q), px);
        for t in &tints {
            let w = bump(p.dist(t.at.centre), t.at.radius);
            if w > 0.0 {
                for ch in 0..3 {
                    c[ch] += (t.colour[ch] * w) as f32;
                }
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    })
    .quantized();

    SynthSample {
        image,
        landmarks: LandmarkSet::new(displaced).expect("finite template"),
        labels: labels.clone(),
    }
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `n` samples in parallel; order and content depend only on `seed`.
pub fn generate_samples(n: usize, seed: u64) -> Vec<LabeledSample> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_sample(sample_seed(seed, i), None).into_labeled(format!("s{i:05}")))
        .collect()
}

pub fn generate_dataset(n: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(crate::Error::Config("dataset size must be at least 1".into()));
    }
    let samples = generate_samples(n, seed);
    write_dataset(out_dir, GENERATOR, Some(seed), &DEFAULT_AU_IDS, &samples)
}
