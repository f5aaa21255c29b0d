//! Similarity registration of faces to a canonical frame.
//!
//! Three anchors are taken from the 66-point markup: the two eye centres and
//! the mouth centre. A least-squares similarity maps them onto fixed reference
//! positions, and the image is resampled into an `out_size × out_size` crop.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const N_LANDMARKS: usize = 66;

/// Index ranges (inclusive start, exclusive end) in the 66-point markup.
pub mod markup {
    use std::ops::Range;
    pub const JAW: Range<usize> = 0..17;
    pub const BROWS: Range<usize> = 17..27;
    pub const NOSE: Range<usize> = 27..36;
    pub const LEFT_EYE: Range<usize> = 36..42;
    pub const RIGHT_EYE: Range<usize> = 42..48;
    pub const OUTER_LIP: Range<usize> = 48..60;
    pub const INNER_LIP: Range<usize> = 60..66;
    pub const MOUTH: Range<usize> = 48..66;

    /// Index of each point's left-right counterpart.
    pub const MIRROR: [usize; super::N_LANDMARKS] = [
        16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, // jaw
        26, 25, 24, 23, 22, 21, 20, 19, 18, 17, // brows
        27, 28, 29, 30, 35, 34, 33, 32, 31, // nose
        45, 44, 43, 42, 47, 46, // left eye
        39, 38, 37, 36, 41, 40, // right eye
        54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55, // outer lip
        62, 61, 60, 65, 64, 63, // inner lip
    ];
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

pub fn mean_point(points: impl IntoIterator<Item = Point>) -> Point {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    Point::new(sx / n as f64, sy / n as f64)
}

/// 66 facial landmarks in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != N_LANDMARKS {
            return Err(Error::Geometry(format!(
                "expected {N_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Geometry(format!("landmark {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn get(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn map(&self, mut f: impl FnMut(Point) -> Point) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Mirror about the vertical axis of an image `width` pixels wide, with
    /// indices swapped so that each index keeps its anatomical side in the
    /// image.
    pub fn mirrored(&self, width: usize) -> Self {
        let w = (width - 1) as f64;
        Self {
            points: (0..N_LANDMARKS)
                .map(|i| {
                    let p = self.points[markup::MIRROR[i]];
                    Point::new(w - p.x, p.y)
                })
                .collect(),
        }
    }
}

/// Left-eye centre, right-eye centre and mouth centre.
pub fn anchors_from_landmarks(lms: &LandmarkSet) -> [Point; 3] {
    let pts = lms.points();
    [
        mean_point(pts[markup::LEFT_EYE].iter().copied()),
        mean_point(pts[markup::RIGHT_EYE].iter().copied()),
        mean_point(pts[markup::MOUTH].iter().copied()),
    ]
}

/// `p ↦ s·R(θ)·p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(scale: f64, rotation: f64, tx: f64, ty: f64) -> Self {
        Self {
            scale,
            rotation,
            tx,
            ty,
        }
    }

    fn linear(&self) -> (f64, f64) {
        (self.scale * self.rotation.cos(), self.scale * self.rotation.sin())
    }

    pub fn apply(&self, p: Point) -> Point {
        let (a, b) = self.linear();
        Point::new(a * p.x - b * p.y + self.tx, b * p.x + a * p.y + self.ty)
    }

    pub fn inverse(&self) -> Self {
        let s = 1.0 / self.scale;
        let r = -self.rotation;
        let (a, b) = (s * r.cos(), s * r.sin());
        Self {
            scale: s,
            rotation: r,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let t = self.apply(Point::new(other.tx, other.ty));
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            tx: t.x,
            ty: t.y,
        }
    }

    pub fn apply_landmarks(&self, lms: &LandmarkSet) -> LandmarkSet {
        lms.map(|p| self.apply(p))
    }
}

/// Least-squares similarity (no reflection) taking `src` onto `dst`.
///
/// With points as complex numbers the optimum is
/// `a = Σ conj(s̃ᵢ)·d̃ᵢ / Σ|s̃ᵢ|²` on centred coordinates, `t = d̄ − a·s̄`.
pub fn compute_similarity(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::Geometry(format!(
            "need matching point lists of length ≥ 2, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    for i in 0..src.len() {
        for j in i + 1..src.len() {
            if src[i].dist(src[j]) <= 1e-6 {
                return Err(Error::Geometry(format!(
                    "source points {i} and {j} coincide; similarity is undetermined"
                )));
            }
        }
    }
    let sc = mean_point(src.iter().copied());
    let dc = mean_point(dst.iter().copied());
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (s, d) = (*s - sc, *d - dc);
        re += s.x * d.x + s.y * d.y;
        im += s.x * d.y - s.y * d.x;
        norm += s.x * s.x + s.y * s.y;
    }
    let (a, b) = (re / norm, im / norm);
    let scale = a.hypot(b);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Geometry("degenerate similarity (zero scale)".into()));
    }
    Ok(SimilarityTransform {
        scale,
        rotation: b.atan2(a),
        tx: dc.x - (a * sc.x - b * sc.y),
        ty: dc.y - (b * sc.x + a * sc.y),
    })
}

/// Resamples `image` so that output pixel `(u, v)` takes the bilinear sample
/// at `T⁻¹(u, v)`. Samples outside the source are black.
pub fn warp_image(image: &RgbImage, transform: &SimilarityTransform, out_size: usize) -> RgbImage {
    let inv = transform.inverse();
    let mut out = RgbImage::new(out_size, out_size);
    for v in 0..out_size {
        for u in 0..out_size {
            let p = inv.apply(Point::new(u as f64, v as f64));
            out.put(u, v, image.sample_bilinear(p.x, p.y));
        }
    }
    out
}

/// Output frame and anchor targets of the registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub out_size: usize,
    /// Left eye, right eye, mouth in output pixels.
    pub reference: [Point; 3],
}

impl RegistrationConfig {
    /// Anchors at (0.3, 0.4), (0.7, 0.4) and (0.5, 0.8) of the crop.
    pub fn for_size(out_size: usize) -> Self {
        let s = out_size as f64;
        Self {
            out_size,
            reference: [
                Point::new(0.3 * s, 0.4 * s),
                Point::new(0.7 * s, 0.4 * s),
                Point::new(0.5 * s, 0.8 * s),
            ],
        }
    }
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self::for_size(256)
    }
}

#[derive(Clone, Debug)]
pub struct Registered {
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
    pub transform: SimilarityTransform,
}

pub fn register(image: &RgbImage, lms: &LandmarkSet, config: &RegistrationConfig) -> Result<Registered> {
    if config.out_size == 0 {
        return Err(Error::Config("registration out_size must be positive".into()));
    }
    let anchors = anchors_from_landmarks(lms);
    let transform = compute_similarity(&anchors, &config.reference)?;
    Ok(Registered {
        image: warp_image(image, &transform, config.out_size),
        landmarks: transform.apply_landmarks(lms),
        transform,
    })
}

/// Adds i.i.d. `N(0, σ²)` noise to every coordinate.
pub fn perturb_landmarks<R: Rng + ?Sized>(lms: &LandmarkSet, sigma: f64, rng: &mut R) -> Result<LandmarkSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("landmark noise sigma must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(lms.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Ok(lms.map(|p| Point::new(p.x + normal.sample(rng), p.y + normal.sample(rng))))
}
