//! Dataset directories: `manifest.json`, `labels.csv`, `images/*.ppm` and
//! `landmarks/*.pts`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{read_labels_csv, write_labels_csv, LabelTable};
use super::landmarks::{read_landmarks, write_landmarks};
use super::pnm::{read_ppm, write_ppm};
use super::{read_text, write_bytes};
use crate::codec::AuLabels;
use crate::error::{Error, Result};
use crate::image::Rgb8Image;
use crate::registration::LandmarkSet;

pub const MANIFEST: &str = "manifest.json";
pub const LABELS: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub image: String,
    pub landmarks: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub version: String,
    pub seed: Option<u64>,
    pub au_ids: Vec<u32>,
    pub labels: String,
    pub samples: Vec<ManifestEntry>,
}

/// One face with its tracked landmarks and ground-truth intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub name: String,
    pub image: Rgb8Image,
    pub landmarks: LandmarkSet,
    pub labels: AuLabels,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    /// An in-memory dataset whose manifest points at the conventional paths.
    pub fn from_samples(generator: &str, seed: Option<u64>, au_ids: &[u32], samples: Vec<LabeledSample>) -> Self {
        let manifest = Manifest {
            generator: generator.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            au_ids: au_ids.to_vec(),
            labels: LABELS.to_string(),
            samples: samples
                .iter()
                .map(|s| ManifestEntry {
                    name: s.name.clone(),
                    image: format!("images/{}.ppm", s.name),
                    landmarks: format!("landmarks/{}.pts", s.name),
                })
                .collect(),
        };
        Self { manifest, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn au_ids(&self) -> &[u32] {
        &self.manifest.au_ids
    }
}

/// Writes samples and a manifest; files are named after each sample.
pub fn write_dataset(
    dir: &Path,
    generator: &str,
    seed: Option<u64>,
    au_ids: &[u32],
    samples: &[LabeledSample],
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let entry = ManifestEntry {
            name: s.name.clone(),
            image: format!("images/{}.ppm", s.name),
            landmarks: format!("landmarks/{}.pts", s.name),
        };
        write_ppm(&dir.join(&entry.image), &s.image)?;
        write_landmarks(&dir.join(&entry.landmarks), &s.landmarks)?;
        rows.push((entry.image.clone(), s.labels.clone()));
        entries.push(entry);
    }
    write_labels_csv(
        &dir.join(LABELS),
        &LabelTable {
            au_ids: au_ids.to_vec(),
            rows,
        },
    )?;
    let manifest = Manifest {
        generator: generator.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        au_ids: au_ids.to_vec(),
        labels: LABELS.to_string(),
        samples: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_bytes(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&read_text(&dir.join(MANIFEST))?)?;
    let table = read_labels_csv(&dir.join(&manifest.labels))?;
    if table.au_ids != manifest.au_ids {
        return Err(Error::Format(format!(
            "label columns {:?} disagree with manifest AUs {:?}",
            table.au_ids, manifest.au_ids
        )));
    }
    let by_file: std::collections::HashMap<&str, &AuLabels> =
        table.rows.iter().map(|(f, l)| (f.as_str(), l)).collect();
    let samples = manifest
        .samples
        .iter()
        .map(|e| {
            let labels = by_file
                .get(e.image.as_str())
                .ok_or_else(|| Error::Format(format!("no labels for `{}`", e.image)))?;
            Ok(LabeledSample {
                name: e.name.clone(),
                image: read_ppm(&dir.join(&e.image))?,
                landmarks: read_landmarks(&dir.join(&e.landmarks))?,
                labels: (*labels).clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, samples })
}
