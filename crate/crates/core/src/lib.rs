//! Confidence-aware partial label learning with focal loss.
//!
//! The crate turns ice-chart polygon attributes into one-hot, binary partial
//! and confidence-weighted partial label vectors, trains a small CNN on image
//! patches with cross-entropy or focal loss, and evaluates and sweeps the
//! resulting models.

pub mod data;
pub mod error;
pub mod harness;
pub mod label_codec;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod util;

pub use error::{Error, Result};
pub use label_codec::{EggCode, EncodedLabels, IceClass, LabelKind, LabelVector, NUM_CLASSES};
pub use loss::{LossConfig, LossKind};
pub use metrics::{compute_metrics, confusion, ConfusionMatrix, MetricsReport};
pub use data::{Dataset, DatasetSplit, PatchSample, SyntheticSpec};
