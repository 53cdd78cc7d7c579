use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{run_experiment, RunReport};
use super::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::label_codec::NUM_CLASSES;
use crate::util::fmt_sig;

/// Column order of the summary CSV.
pub const SUMMARY_COLUMNS: [&str; 18] = [
    "name",
    "encoding",
    "loss",
    "alpha",
    "gamma",
    "class_weights",
    "repetitions",
    "train_accuracy",
    "test_accuracy",
    "weighted_f1",
    "weighted_precision",
    "weighted_recall",
    "f1_NI",
    "f1_N",
    "f1_YI",
    "f1_FYI",
    "f1_OI",
    "f1_W",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub encoding: String,
    pub loss: String,
    pub alpha: f64,
    pub gamma: f64,
    pub class_weights: bool,
    pub repetitions: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
}

impl SummaryRow {
    pub fn from_report(r: &RunReport) -> Self {
        let c = &r.config;
        let (alpha, gamma) = c.loss.focal_params();
        let mut per_class_f1 = [0.0; NUM_CLASSES];
        for (dst, src) in per_class_f1.iter_mut().zip(&r.averaged.per_class_f1) {
            *dst = *src;
        }
        Self {
            name: c.name.clone(),
            encoding: c.encoding.as_str().into(),
            loss: match c.loss {
                crate::loss::LossKind::Cce => "cce".into(),
                crate::loss::LossKind::Focal { .. } => "focal".into(),
            },
            alpha,
            gamma,
            class_weights: c.class_weights_enabled,
            repetitions: c.repetitions,
            train_accuracy: r.averaged_train_accuracy,
            test_accuracy: r.averaged.accuracy,
            weighted_f1: r.averaged.weighted_f1,
            weighted_precision: r.averaged.weighted_precision,
            weighted_recall: r.averaged.weighted_recall,
            per_class_f1,
        }
    }

    fn cells(&self) -> Vec<String> {
        let num = |v: f64| fmt_sig(v, 12);
        let mut cells = vec![
            self.name.clone(),
            self.encoding.clone(),
            self.loss.clone(),
            num(self.alpha),
            num(self.gamma),
            self.class_weights.to_string(),
            self.repetitions.to_string(),
            num(self.train_accuracy),
            num(self.test_accuracy),
            num(self.weighted_f1),
            num(self.weighted_precision),
            num(self.weighted_recall),
        ];
        cells.extend(self.per_class_f1.iter().map(|v| num(*v)));
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
    /// Index of the best row, if any.
    pub best: Option<usize>,
}

/// Highest weighted F1, then highest test accuracy, then lowest
/// `(alpha, gamma)`; cross-entropy counts as `(1, 0)`.
pub fn best_config(rows: &[SummaryRow]) -> Option<usize> {
    (0..rows.len()).min_by(|&a, &b| {
        let (x, y) = (&rows[a], &rows[b]);
        y.weighted_f1
            .total_cmp(&x.weighted_f1)
            .then(y.test_accuracy.total_cmp(&x.test_accuracy))
            .then(x.alpha.total_cmp(&y.alpha))
            .then(x.gamma.total_cmp(&y.gamma))
    })
}

/// Runs every configuration on a pool of `parallelism` threads. Reports
/// come back in grid order and do not depend on the thread count.
pub fn run_sweep(grid: &[ExperimentConfig], dataset: &Dataset, parallelism: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidTrainConfig(format!("thread pool: {e}")))?;
    let reports = pool.install(|| {
        grid.par_iter()
            .map(|c| run_experiment(c, dataset))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    Ok(SweepResult {
        best: best_config(&summary),
        reports,
        summary,
    })
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.cells()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
