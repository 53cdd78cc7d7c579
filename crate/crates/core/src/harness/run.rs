use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::label_codec::{LabelKind, NUM_CLASSES};
use crate::loss::{class_weights, LossConfig};
use crate::metrics::{compute_metrics, confusion, ConfusionMatrix, MetricsReport};
use crate::net::adam::{DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
use crate::net::{predict_all, train, EpochStats, Network, Shape, TrainConfig};
use crate::util::derive_seed;

/// Choices the trainer makes on its own, echoed so reports are
/// self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub optimizer: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_loss_reduction: String,
    pub weight_init: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            adam_beta1: DEFAULT_BETA1,
            adam_beta2: DEFAULT_BETA2,
            adam_eps: DEFAULT_EPS,
            batch_loss_reduction: "mean".into(),
            weight_init: "he_uniform".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub seed: u64,
    pub history: Vec<EpochStats>,
    pub train_accuracy: f64,
    pub test: MetricsReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub settings: RunSettings,
    pub training_class_counts: [u64; NUM_CLASSES],
    pub class_weights: Option<Vec<f64>>,
    pub repetitions: Vec<RepetitionReport>,
    /// Field-wise mean of the repetitions' test metrics.
    pub averaged: MetricsReport,
    pub averaged_train_accuracy: f64,
    pub accuracy_spread: MetricSpread,
    pub weighted_f1_spread: MetricSpread,
    /// Not part of [`RunReport::canonical_json`].
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// Pretty JSON with the wall-clock time zeroed: identical for identical
    /// configurations, seeds and data.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_clock_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&copy)?)
    }
}

/// Seed of repetition `r`.
pub fn repetition_seed(config: &ExperimentConfig, r: usize) -> u64 {
    derive_seed(&[config.base_seed, config.fingerprint(), r as u64])
}

fn loss_config(config: &ExperimentConfig, dataset: &Dataset) -> Result<(LossConfig, [u64; NUM_CLASSES])> {
    let counts = dataset.class_counts(&dataset.split.train, LabelKind::OneHot)?;
    let weights = if config.class_weights_enabled {
        Some(class_weights(&counts)?)
    } else {
        None
    };
    Ok((
        LossConfig {
            kind: config.loss,
            class_weights: weights,
        },
        counts,
    ))
}

/// Trains repetition `r` on the training split and scores it on the test
/// split against the one-hot ground truth.
pub fn train_repetition(config: &ExperimentConfig, dataset: &Dataset, r: usize) -> Result<(Network, RepetitionReport)> {
    config.validate()?;
    let (loss, _) = loss_config(config, dataset)?;
    train_with_loss(config, dataset, r, loss)
}

fn train_with_loss(
    config: &ExperimentConfig,
    dataset: &Dataset,
    r: usize,
    loss: LossConfig,
) -> Result<(Network, RepetitionReport)> {
    if dataset.split.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seed = repetition_seed(config, r);
    let p = dataset.patch_size();
    let mut net = Network::build(Shape::new(3, p, p), &config.network, derive_seed(&[seed, 1]))?;
    let train_set = dataset.training_set(&dataset.split.train, config.encoding)?;
    let train_config = TrainConfig {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        seed: derive_seed(&[seed, 2]),
        loss,
        lr: config.train.lr,
    };
    let history = train(&mut net, &train_set, &train_config)?;
    let test = &dataset.split.test;
    let preds = predict_all(&net, &dataset.inputs(test)?)?;
    let cm = confusion(&preds, &dataset.truths(test))?;
    let report = RepetitionReport {
        repetition: r,
        seed,
        train_accuracy: history.last().map_or(0.0, |h| h.train_accuracy),
        history,
        test: compute_metrics(&cm)?,
        confusion: cm,
    };
    Ok((net, report))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_vec(rows: &[&Vec<f64>]) -> Vec<f64> {
    (0..rows[0].len()).map(|i| mean(rows.iter().map(|r| r[i]))).collect()
}

pub fn average_metrics(reports: &[&MetricsReport]) -> MetricsReport {
    let field = |f: fn(&MetricsReport) -> f64| mean(reports.iter().map(|r| f(r)));
    let per_class = |f: fn(&MetricsReport) -> &Vec<f64>| mean_vec(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    MetricsReport {
        accuracy: field(|r| r.accuracy),
        weighted_precision: field(|r| r.weighted_precision),
        weighted_recall: field(|r| r.weighted_recall),
        weighted_f1: field(|r| r.weighted_f1),
        per_class_precision: per_class(|r| &r.per_class_precision),
        per_class_recall: per_class(|r| &r.per_class_recall),
        per_class_f1: per_class(|r| &r.per_class_f1),
        support: reports[0].support.clone(),
    }
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> MetricSpread {
    MetricSpread {
        min: values.clone().fold(f64::INFINITY, f64::min),
        max: values.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// All repetitions of one configuration, run one after another.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let (loss, counts) = loss_config(config, dataset)?;
    let reps = (0..config.repetitions)
        .map(|r| train_with_loss(config, dataset, r, loss.clone()).map(|(_, rep)| rep))
        .collect::<Result<Vec<_>>>()?;
    let tests: Vec<&MetricsReport> = reps.iter().map(|r| &r.test).collect();
    Ok(RunReport {
        config: config.clone(),
        fingerprint: format!("{:016x}", config.fingerprint()),
        seeds: reps.iter().map(|r| r.seed).collect(),
        settings: RunSettings::default(),
        training_class_counts: counts,
        class_weights: loss.class_weights,
        averaged: average_metrics(&tests),
        averaged_train_accuracy: mean(reps.iter().map(|r| r.train_accuracy)),
        accuracy_spread: spread(reps.iter().map(|r| r.test.accuracy)),
        weighted_f1_spread: spread(reps.iter().map(|r| r.test.weighted_f1)),
        repetitions: reps,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}
