//! Training-time perturbations and the sample preprocessing pipeline.
//!
//! Order: perturb landmarks → (optional flip) → register → colour jitter →
//! label noise → heatmap encoding. Label noise only changes the targets; the
//! labels used for evaluation are never touched.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_all, AuLabels, AuSpec, CodecConfig, HeatmapStack, MAX_INTENSITY};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::registration::{perturb_landmarks, register, LandmarkSet, RegistrationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Gaussian landmark noise before registration, in source pixels.
    pub landmark_sigma: f64,
    /// Colour jitter strength; 0 disables.
    pub colour_strength: f64,
    /// Relative label noise scale; 0 disables.
    pub label_noise: f64,
    /// Replace labels by `label_noise · I · |z|` instead of `I · (1 + label_noise · z)`.
    pub literal_label_rule: bool,
    /// Mirror half of the samples left-right.
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            landmark_sigma: 2.0,
            colour_strength: 0.2,
            label_noise: 0.2,
            literal_label_rule: false,
            flip: false,
        }
    }
}

impl AugmentConfig {
    /// Every perturbation switched off.
    pub fn none() -> Self {
        Self {
            landmark_sigma: 0.0,
            colour_strength: 0.0,
            label_noise: 0.0,
            literal_label_rule: false,
            flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.landmark_sigma) || !ok(self.colour_strength) || !ok(self.label_noise) {
            return Err(Error::Config(format!(
                "augmentation strengths must be finite and ≥ 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Multiplicative label noise, one standard normal draw per AU, clamped to
/// `[0, 5]`. Zero labels stay zero.
pub fn perturb_labels<R: Rng + ?Sized>(labels: &AuLabels, scale: f64, rng: &mut R) -> AuLabels {
    let values = labels
        .values()
        .iter()
        .map(|&i| {
            let z: f64 = rng.sample(StandardNormal);
            (i * (1.0 + scale * z)).clamp(0.0, MAX_INTENSITY)
        })
        .collect();
    AuLabels::new(values).expect("clamped into range")
}

/// The replacement rule `I ← scale · I · |z|`, kept for comparison.
pub fn perturb_labels_literal<R: Rng + ?Sized>(labels: &AuLabels, scale: f64, rng: &mut R) -> AuLabels {
    let values = labels
        .values()
        .iter()
        .map(|&i| {
            let z: f64 = rng.sample(StandardNormal);
            (scale * i * z.abs()).clamp(0.0, MAX_INTENSITY)
        })
        .collect();
    AuLabels::new(values).expect("clamped into range")
}

/// Per-channel gain in `[1 − s, 1 + s]` and offset in `[−s/2, s/2]`, then clamp.
pub fn perturb_colour<R: Rng + ?Sized>(image: &RgbImage, strength: f64, rng: &mut R) -> Result<RgbImage> {
    if !(strength.is_finite() && strength >= 0.0) {
        return Err(Error::Config(format!("colour strength must be ≥ 0, got {strength}")));
    }
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let mut out = image.clone();
    let plane = image.width() * image.height();
    for c in 0..3 {
        let gain = rng.random_range(1.0 - strength..=1.0 + strength) as f32;
        let offset = rng.random_range(-strength / 2.0..=strength / 2.0) as f32;
        for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
            *v = (*v * gain + offset).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// A registered sample ready for the network.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
    /// Labels the targets were drawn from (perturbed when label noise is on).
    pub target_labels: AuLabels,
    pub target: HeatmapStack,
}

/// Deterministic path: register and encode, no perturbation.
pub fn preprocess(
    image: &RgbImage,
    lms: &LandmarkSet,
    labels: &AuLabels,
    specs: &[AuSpec],
    codec: &CodecConfig,
    reg: &RegistrationConfig,
) -> Result<Prepared> {
    let registered = register(image, lms, reg)?;
    let target = encode_all(labels, &registered.landmarks, specs, codec)?;
    Ok(Prepared {
        image: registered.image,
        landmarks: registered.landmarks,
        target_labels: labels.clone(),
        target,
    })
}

/// Randomised path. With every strength zero and flip off the result equals
/// [`preprocess`] bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn augment_sample<R: Rng + ?Sized>(
    image: &RgbImage,
    lms: &LandmarkSet,
    labels: &AuLabels,
    specs: &[AuSpec],
    codec: &CodecConfig,
    reg: &RegistrationConfig,
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<Prepared> {
    aug.validate()?;
    let noisy = perturb_landmarks(lms, aug.landmark_sigma, rng)?;
    let flipped;
    let (src, src_lms) = if aug.flip && rng.random_bool(0.5) {
        flipped = (image.mirrored(), noisy.mirrored(image.width()));
        (&flipped.0, flipped.1.clone())
    } else {
        (image, noisy)
    };
    let registered = register(src, &src_lms, reg)?;
    let image = perturb_colour(&registered.image, aug.colour_strength, rng)?;
    let target_labels = if aug.label_noise == 0.0 {
        labels.clone()
    } else if aug.literal_label_rule {
        perturb_labels_literal(labels, aug.label_noise, rng)
    } else {
        perturb_labels(labels, aug.label_noise, rng)
    };
    let target = encode_all(&target_labels, &registered.landmarks, specs, codec)?;
    Ok(Prepared {
        image,
        landmarks: registered.landmarks,
        target_labels,
        target,
    })
}
