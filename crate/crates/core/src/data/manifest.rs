//! Dataset directories: `manifest.json` plus a raw pixel file.
//!
//! The pixel file holds every patch back to back as little-endian `f64`,
//! each `3 x patch x patch` channel-major. Labels are rebuilt from the egg
//! codes stored in the manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSplit, PatchSample, CHANNELS};
use crate::error::{Error, Result};
use crate::label_codec::EggCode;
use crate::net::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PIXELS_FILE: &str = "pixels.f64";
const FORMAT: &str = "pll-dataset";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub polygon_id: i64,
    pub egg: EggCode,
    pub ca_fraction: f64,
    pub border_distance_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub patch_size: usize,
    pub channels: usize,
    pub pixels_file: String,
    pub samples: Vec<SampleEntry>,
    pub split: DatasetSplit,
    /// Free-form provenance, e.g. the generator spec and seed.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub source: serde_json::Value,
}

pub fn save_dataset(dataset: &Dataset, dir: &Path, source: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(dataset.samples.len() * CHANNELS * dataset.patch_size().pow(2) * 8);
    for s in &dataset.samples {
        bytes.extend(s.pixels.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    std::fs::write(dir.join(PIXELS_FILE), bytes)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        patch_size: dataset.patch_size(),
        channels: CHANNELS,
        pixels_file: PIXELS_FILE.into(),
        samples: dataset
            .samples
            .iter()
            .map(|s| SampleEntry {
                polygon_id: s.polygon_id,
                egg: s.egg.clone(),
                ca_fraction: s.ca_fraction,
                border_distance_m: s.border_distance,
            })
            .collect(),
        split: dataset.split.clone(),
        source,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a dataset directory, or a manifest path directly.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.channels != CHANNELS {
        return Err(Error::ChannelCount(manifest.channels));
    }
    let per = CHANNELS * manifest.patch_size * manifest.patch_size;
    let bytes = std::fs::read(dir.join(&manifest.pixels_file))?;
    if bytes.len() != manifest.samples.len() * per * 8 {
        return Err(Error::Format(format!(
            "pixel file holds {} bytes for {} samples",
            bytes.len(),
            manifest.samples.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let p = manifest.patch_size;
    let samples = manifest
        .samples
        .into_iter()
        .zip(values.chunks(per.max(1)))
        .map(|(e, px)| {
            let pixels = Tensor::new(vec![CHANNELS, p, p], px.to_vec())?;
            PatchSample::new(pixels, e.egg, e.polygon_id, e.border_distance_m)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, manifest.split)
}
