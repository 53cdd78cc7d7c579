//! Labeled patch datasets: synthetic generation, scene ingestion, filtering
//! and train/validation/test splitting.

pub mod manifest;
pub mod scene;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_codec::{EggCode, EncodedLabels, LabelKind, NUM_CLASSES};
use crate::net::{Tensor, TrainingSet};

pub use manifest::{load_dataset, save_dataset};
pub use scene::{ingest_scene, SceneAnnotations, SceneRaster};
pub use split::{split, DatasetSplit, PAPER_RATIOS};
pub use synth::{generate_synthetic, SyntheticSpec};

/// Default minimum concentration of the oldest stage (exclusive).
pub const MIN_CA_FRACTION: f64 = 0.5;
/// Default minimum distance from the patch center to a polygon border.
pub const MIN_BORDER_DISTANCE_M: f64 = 2000.0;

pub const CHANNELS: usize = 3;

/// One 3-channel patch and the labels of the polygon under its center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub pixels: Tensor,
    pub egg: EggCode,
    pub labels: EncodedLabels,
    pub polygon_id: i64,
    pub ca_fraction: f64,
    pub border_distance: f64,
}

impl PatchSample {
    /// Derives all three encodings and the oldest-stage fraction from `egg`.
    pub fn new(pixels: Tensor, egg: EggCode, polygon_id: i64, border_distance: f64) -> Result<Self> {
        if pixels.shape().len() != 3 || pixels.shape()[0] != CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "patch pixels {:?}, expected [3, h, w]",
                pixels.shape()
            )));
        }
        Ok(Self {
            labels: EncodedLabels::from_egg(&egg)?,
            ca_fraction: egg.oldest_fraction()?,
            pixels,
            egg,
            polygon_id,
            border_distance,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Keeps samples whose oldest stage covers more than `min_ca` of the polygon
/// and whose center lies at least `min_border` meters from a border.
pub fn filter_samples(samples: Vec<PatchSample>, min_ca: f64, min_border: f64) -> Vec<PatchSample> {
    samples
        .into_iter()
        .filter(|s| s.ca_fraction > min_ca && s.border_distance >= min_border)
        .collect()
}

/// Number of samples whose chosen encoding peaks at each class.
pub fn class_counts(samples: &[PatchSample], kind: LabelKind) -> Result<[u64; NUM_CLASSES]> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = [0; NUM_CLASSES];
    for s in samples {
        counts[s.labels.get(kind).argmax()] += 1;
    }
    Ok(counts)
}

/// Samples plus their split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PatchSample>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn new(samples: Vec<PatchSample>, split: DatasetSplit) -> Result<Self> {
        let n = samples.len();
        if split.len() != n {
            return Err(Error::LengthMismatch { left: n, right: split.len() });
        }
        if let Some(first) = samples.first() {
            let shape = first.pixels.shape().to_vec();
            if samples.iter().any(|s| s.pixels.shape() != shape.as_slice()) {
                return Err(Error::ShapeMismatch("patches differ in size".into()));
            }
        }
        Ok(Self { samples, split })
    }

    /// Synthetic samples split with `ratios`.
    pub fn synthetic(spec: &SyntheticSpec, seed: u64, ratios: [f64; 3]) -> Result<Self> {
        let samples = generate_synthetic(spec, seed)?;
        let split = split(samples.len(), ratios, seed)?;
        Self::new(samples, split)
    }

    pub fn patch_size(&self) -> usize {
        self.samples.first().map_or(0, PatchSample::patch_size)
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&PatchSample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }

    /// `[n, 3, h, w]` stack of the selected patches.
    pub fn inputs(&self, indices: &[usize]) -> Result<Tensor> {
        let p = self.patch_size();
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.samples[i].pixels.data()).collect();
        Tensor::stack(&rows, &[CHANNELS, p, p])
    }

    /// One-hot classes of the selected samples.
    pub fn truths(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].labels.true_class()).collect()
    }

    pub fn training_set(&self, indices: &[usize], kind: LabelKind) -> Result<TrainingSet> {
        let targets = indices
            .iter()
            .map(|&i| self.samples[i].labels.get(kind).values)
            .collect();
        TrainingSet::new(self.inputs(indices)?, targets, self.truths(indices))
    }

    pub fn class_counts(&self, indices: &[usize], kind: LabelKind) -> Result<[u64; NUM_CLASSES]> {
        let owned: Vec<PatchSample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        class_counts(&owned, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ca: Option<i64>, border: f64) -> PatchSample {
        let egg = match ca {
            Some(ca) => EggCode::single(86, Some(ca)),
            None => EggCode::ice_free(),
        };
        PatchSample::new(Tensor::zeros(vec![3, 2, 2]), egg, 1, border).unwrap()
    }

    #[test]
    fn filter_rules() {
        let kept = filter_samples(vec![sample(Some(79), 2500.0)], MIN_CA_FRACTION, MIN_BORDER_DISTANCE_M);
        assert_eq!(kept.len(), 1);
        // 46 -> 40-60%, midpoint exactly 0.5: not above 50%.
        let s = sample(Some(46), 5000.0);
        assert_eq!(s.ca_fraction, 0.5);
        assert!(filter_samples(vec![s], MIN_CA_FRACTION, MIN_BORDER_DISTANCE_M).is_empty());
        assert!(filter_samples(vec![sample(Some(79), 1999.0)], 0.5, 2000.0).is_empty());
        assert_eq!(filter_samples(vec![sample(Some(79), 2000.0)], 0.5, 2000.0).len(), 1);
        assert_eq!(filter_samples(vec![sample(None, 3000.0)], 0.5, 2000.0).len(), 1);
    }

    #[test]
    fn filter_is_idempotent() {
        let all: Vec<PatchSample> = [(Some(79), 2500.0), (Some(24), 9000.0), (None, 100.0), (Some(99), 2000.0)]
            .into_iter()
            .map(|(c, b)| sample(c, b))
            .collect();
        let once = filter_samples(all, 0.5, 2000.0);
        let twice = filter_samples(once.clone(), 0.5, 2000.0);
        assert_eq!(once, twice);
        assert_eq!(once.len(), 2);
    }

    #[test]
    fn counts() {
        let water: Vec<PatchSample> = (0..4).map(|_| sample(None, 3000.0)).collect();
        assert_eq!(class_counts(&water, LabelKind::OneHot).unwrap(), [0, 0, 0, 0, 0, 4]);
        assert!(matches!(class_counts(&[], LabelKind::OneHot), Err(Error::EmptyDataset)));
    }

    #[test]
    fn patch_shape_checked() {
        assert!(PatchSample::new(Tensor::zeros(vec![2, 4, 4]), EggCode::ice_free(), 0, 0.0).is_err());
    }
}
