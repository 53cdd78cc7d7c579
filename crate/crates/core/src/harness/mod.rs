//! Experiment configurations, repeated runs, sweeps and the alpha/gamma
//! sensitivity tables.

pub mod run;
pub mod sensitivity;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::label_codec::LabelKind;
use crate::loss::LossKind;
use crate::net::adam::DEFAULT_LR;
use crate::net::{default_spec, LayerSpec};
use crate::util::fnv1a;

pub use run::{run_experiment, train_repetition, RepetitionReport, RunReport, RunSettings};
pub use sensitivity::{sensitivity_report, write_sensitivity, Curve, SensitivityReport, SensitivityTable};
pub use sweep::{best_config, run_sweep, write_summary_csv, SummaryRow, SweepResult, SUMMARY_COLUMNS};

/// Optimization schedule shared by every repetition of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_lr() -> f64 {
    DEFAULT_LR
}

/// Named scale presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 6,000 patches of 16x16, 50 epochs, batch 128.
    Desk,
    /// 127,000 patches of 50x50, 200 epochs, batch 512.
    Paper,
}

impl Profile {
    pub fn train_settings(self) -> TrainSettings {
        match self {
            Profile::Desk => TrainSettings {
                epochs: 50,
                batch_size: 128,
                lr: DEFAULT_LR,
            },
            Profile::Paper => TrainSettings {
                epochs: 200,
                batch_size: 512,
                lr: DEFAULT_LR,
            },
        }
    }

    pub fn synthetic_spec(self) -> SyntheticSpec {
        match self {
            Profile::Desk => SyntheticSpec::desk(),
            Profile::Paper => SyntheticSpec::paper(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub encoding: LabelKind,
    pub loss: LossKind,
    pub class_weights_enabled: bool,
    pub train: TrainSettings,
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Dataset directory or manifest the experiment was configured for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default = "default_spec")]
    pub network: Vec<LayerSpec>,
}

impl ExperimentConfig {
    pub fn new(encoding: LabelKind, loss: LossKind, class_weights_enabled: bool, train: TrainSettings) -> Self {
        Self {
            name: config_name(encoding, loss, class_weights_enabled),
            encoding,
            loss,
            class_weights_enabled,
            train,
            repetitions: 1,
            base_seed: 0,
            dataset: None,
            network: default_spec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidTrainConfig("repetitions must be >= 1".into()));
        }
        if self.encoding == LabelKind::BinaryPartial {
            return Err(Error::InvalidTrainConfig(
                "binary partial labels are not a training target".into(),
            ));
        }
        crate::loss::LossConfig {
            kind: self.loss,
            class_weights: None,
        }
        .validate()
    }

    /// Hash of everything that affects a single repetition: encoding, loss,
    /// weighting, schedule and network. Name, repetition count, base seed and
    /// dataset reference are excluded.
    pub fn fingerprint(&self) -> u64 {
        let key = serde_json::json!({
            "encoding": self.encoding,
            "loss": self.loss,
            "class_weights_enabled": self.class_weights_enabled,
            "train": self.train,
            "network": self.network,
        });
        fnv1a(key.to_string().as_bytes())
    }
}

fn fmt_param(v: f64) -> String {
    format!("{v}")
}

pub fn config_name(encoding: LabelKind, loss: LossKind, weighted: bool) -> String {
    let loss = match loss {
        LossKind::Cce => "cce".to_string(),
        LossKind::Focal { alpha, gamma } => format!("focal-a{}-g{}", fmt_param(alpha), fmt_param(gamma)),
    };
    let weights = if weighted { "-weighted" } else { "" };
    format!("{loss}-{}{weights}", encoding.as_str())
}

/// One block of the experiment matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum GroupSpec {
    Cce {
        encodings: Vec<LabelKind>,
        class_weights: Vec<bool>,
    },
    Focal {
        encodings: Vec<LabelKind>,
        alphas: Vec<f64>,
        gammas: Vec<f64>,
        #[serde(default = "no_weights")]
        class_weights: Vec<bool>,
    },
}

fn no_weights() -> Vec<bool> {
    vec![false]
}

pub const TABLE_ALPHAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
pub const TABLE_GAMMAS: [f64; 3] = [1.0, 2.0, 5.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub groups: Vec<GroupSpec>,
    pub train: TrainSettings,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default = "default_spec")]
    pub network: Vec<LayerSpec>,
}

fn one() -> usize {
    1
}

impl GridSpec {
    /// Cross-entropy with and without class weights, plus the focal loss over
    /// five alphas and three gammas, each for one-hot and confidence-partial
    /// labels: 4 + 15 + 15 configurations.
    pub fn standard(train: TrainSettings) -> Self {
        let encodings = vec![LabelKind::OneHot, LabelKind::ConfidencePartial];
        Self {
            groups: vec![
                GroupSpec::Cce {
                    encodings: encodings.clone(),
                    class_weights: vec![false, true],
                },
                GroupSpec::Focal {
                    encodings,
                    alphas: TABLE_ALPHAS.to_vec(),
                    gammas: TABLE_GAMMAS.to_vec(),
                    class_weights: no_weights(),
                },
            ],
            train,
            repetitions: 2,
            base_seed: 0,
            dataset: None,
            network: default_spec(),
        }
    }
}

/// Expands groups in order; within a group encodings vary slowest, then
/// alpha, gamma and the weighting flag.
pub fn build_grid(spec: &GridSpec) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    let mut push = |encoding, loss, weighted| {
        let mut c = ExperimentConfig::new(encoding, loss, weighted, spec.train);
        c.repetitions = spec.repetitions;
        c.base_seed = spec.base_seed;
        c.dataset.clone_from(&spec.dataset);
        c.network.clone_from(&spec.network);
        out.push(c);
    };
    for group in &spec.groups {
        match group {
            GroupSpec::Cce {
                encodings,
                class_weights,
            } => {
                for &e in encodings {
                    for &w in class_weights {
                        push(e, LossKind::Cce, w);
                    }
                }
            }
            GroupSpec::Focal {
                encodings,
                alphas,
                gammas,
                class_weights,
            } => {
                for &e in encodings {
                    for &alpha in alphas {
                        for &gamma in gammas {
                            for &w in class_weights {
                                push(e, LossKind::Focal { alpha, gamma }, w);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
