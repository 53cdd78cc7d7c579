//! Alpha x gamma tables and per-configuration training curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::RunReport;
use crate::error::Result;
use crate::label_codec::LabelKind;
use crate::loss::LossKind;
use crate::util::fmt_sig;

/// Metric grids for one encoding and weighting. Rows follow `alphas`,
/// columns `gammas`, both ascending; missing combinations are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub encoding: LabelKind,
    pub class_weights: bool,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub weighted_f1: Vec<Vec<Option<f64>>>,
    pub test_accuracy: Vec<Vec<Option<f64>>>,
    pub train_accuracy: Vec<Vec<Option<f64>>>,
}

/// Per-epoch training loss and accuracy averaged over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub encoding: LabelKind,
    pub alpha: f64,
    pub gamma: f64,
    pub mean_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub tables: Vec<SensitivityTable>,
    pub curves: Vec<Curve>,
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn curve(r: &RunReport, alpha: f64, gamma: f64) -> Curve {
    let epochs = r.repetitions.iter().map(|x| x.history.len()).min().unwrap_or(0);
    let n = r.repetitions.len() as f64;
    let avg = |f: fn(&crate::net::EpochStats) -> f64| -> Vec<f64> {
        (0..epochs)
            .map(|e| r.repetitions.iter().map(|x| f(&x.history[e])).sum::<f64>() / n)
            .collect()
    };
    Curve {
        name: r.config.name.clone(),
        encoding: r.config.encoding,
        alpha,
        gamma,
        mean_loss: avg(|s| s.mean_loss),
        train_accuracy: avg(|s| s.train_accuracy),
    }
}

/// Groups focal-loss reports by encoding and weighting. Other reports are
/// ignored.
pub fn sensitivity_report(reports: &[RunReport]) -> SensitivityReport {
    let focal: Vec<(&RunReport, f64, f64)> = reports
        .iter()
        .filter_map(|r| match r.config.loss {
            LossKind::Focal { alpha, gamma } => Some((r, alpha, gamma)),
            LossKind::Cce => None,
        })
        .collect();
    let mut keys: Vec<(LabelKind, bool)> = Vec::new();
    for (r, _, _) in &focal {
        let key = (r.config.encoding, r.config.class_weights_enabled);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let tables = keys
        .into_iter()
        .map(|(encoding, class_weights)| {
            let members: Vec<_> = focal
                .iter()
                .filter(|(r, _, _)| r.config.encoding == encoding && r.config.class_weights_enabled == class_weights)
                .collect();
            let alphas = sorted_unique(members.iter().map(|m| m.1));
            let gammas = sorted_unique(members.iter().map(|m| m.2));
            let grid = |f: fn(&RunReport) -> f64| -> Vec<Vec<Option<f64>>> {
                alphas
                    .iter()
                    .map(|&a| {
                        gammas
                            .iter()
                            .map(|&g| members.iter().find(|m| m.1 == a && m.2 == g).map(|m| f(m.0)))
                            .collect()
                    })
                    .collect()
            };
            SensitivityTable {
                encoding,
                class_weights,
                weighted_f1: grid(|r| r.averaged.weighted_f1),
                test_accuracy: grid(|r| r.averaged.accuracy),
                train_accuracy: grid(|r| r.averaged_train_accuracy),
                alphas,
                gammas,
            }
        })
        .collect();
    SensitivityReport {
        tables,
        curves: focal.iter().map(|(r, a, g)| curve(r, *a, *g)).collect(),
    }
}

fn matrix_csv(table: &SensitivityTable, values: &[Vec<Option<f64>>]) -> String {
    let mut s = String::from("alpha\\gamma");
    for g in &table.gammas {
        s.push(',');
        s.push_str(&fmt_sig(*g, 12));
    }
    s.push('\n');
    for (a, row) in table.alphas.iter().zip(values) {
        s.push_str(&fmt_sig(*a, 12));
        for v in row {
            s.push(',');
            if let Some(v) = v {
                s.push_str(&fmt_sig(*v, 12));
            }
        }
        s.push('\n');
    }
    s
}

/// Writes `sensitivity.json`, one matrix CSV per table and metric, and
/// `curves/<name>.csv` with columns `epoch,mean_loss,train_accuracy`.
pub fn write_sensitivity(report: &SensitivityReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("curves"))?;
    std::fs::write(dir.join("sensitivity.json"), serde_json::to_string_pretty(report)?)?;
    for t in &report.tables {
        let weights = if t.class_weights { "-weighted" } else { "" };
        let stem = format!("{}{weights}", t.encoding.as_str());
        for (metric, values) in [
            ("weighted_f1", &t.weighted_f1),
            ("test_accuracy", &t.test_accuracy),
            ("train_accuracy", &t.train_accuracy),
        ] {
            std::fs::write(dir.join(format!("{stem}-{metric}.csv")), matrix_csv(t, values))?;
        }
    }
    for c in &report.curves {
        let mut s = String::from("epoch,mean_loss,train_accuracy\n");
        for (e, (l, a)) in c.mean_loss.iter().zip(&c.train_accuracy).enumerate() {
            s.push_str(&format!("{},{},{}\n", e + 1, fmt_sig(*l, 12), fmt_sig(*a, 12)));
        }
        std::fs::write(dir.join("curves").join(format!("{}.csv", c.name)), s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::{average_metrics, MetricSpread, RepetitionReport, RunSettings};
    use crate::harness::{build_grid, GridSpec, GroupSpec, TrainSettings, TABLE_ALPHAS, TABLE_GAMMAS};
    use crate::metrics::{compute_metrics, confusion};
    use crate::net::EpochStats;

    /// Reports with fabricated metrics: weighted F1 = alpha + gamma / 10.
    fn fake_reports(groups: Vec<GroupSpec>, epochs: usize) -> Vec<RunReport> {
        let spec = GridSpec {
            groups,
            ..GridSpec::standard(TrainSettings {
                epochs,
                batch_size: 1,
                lr: 1e-3,
            })
        };
        build_grid(&spec)
            .into_iter()
            .map(|config| {
                let (a, g) = config.loss.focal_params();
                let cm = confusion(&[0, 1], &[0, 1]).unwrap();
                let mut test = compute_metrics(&cm).unwrap();
                test.weighted_f1 = a + g / 10.0;
                let history = (0..epochs)
                    .map(|e| EpochStats {
                        epoch: e + 1,
                        mean_loss: 1.0 / (e + 1) as f64,
                        train_accuracy: 0.5,
                    })
                    .collect();
                let rep = RepetitionReport {
                    repetition: 0,
                    seed: 0,
                    history,
                    train_accuracy: 0.5,
                    test: test.clone(),
                    confusion: cm,
                };
                RunReport {
                    fingerprint: String::new(),
                    seeds: vec![0],
                    settings: RunSettings::default(),
                    training_class_counts: [1; 6],
                    class_weights: None,
                    averaged: average_metrics(&[&test]),
                    averaged_train_accuracy: 0.5,
                    accuracy_spread: MetricSpread { min: 1.0, max: 1.0 },
                    weighted_f1_spread: MetricSpread { min: 0.0, max: 0.0 },
                    repetitions: vec![rep],
                    wall_clock_seconds: 0.0,
                    config,
                }
            })
            .collect()
    }

    fn focal_group(encodings: Vec<LabelKind>, alphas: Vec<f64>, gammas: Vec<f64>) -> GroupSpec {
        GroupSpec::Focal {
            encodings,
            alphas,
            gammas,
            class_weights: vec![false],
        }
    }

    #[test]
    fn fifteen_reports_make_a_5x3_matrix() {
        let reports = fake_reports(
            vec![focal_group(vec![LabelKind::OneHot], TABLE_ALPHAS.to_vec(), TABLE_GAMMAS.to_vec())],
            4,
        );
        assert_eq!(reports.len(), 15);
        let s = sensitivity_report(&reports);
        assert_eq!(s.tables.len(), 1);
        let t = &s.tables[0];
        assert_eq!(t.weighted_f1.len(), 5);
        assert!(t.weighted_f1.iter().all(|r| r.len() == 3 && r.iter().all(Option::is_some)));
        assert_eq!(t.weighted_f1[1][2], Some(0.25 + 0.5));
        assert_eq!(s.curves.len(), 15);
        assert!(s.curves.iter().all(|c| c.mean_loss.len() == 4 && c.train_accuracy.len() == 4));
    }

    #[test]
    fn single_report_and_cce_filtering() {
        let mut reports = fake_reports(vec![focal_group(vec![LabelKind::ConfidencePartial], vec![0.25], vec![1.0])], 3);
        reports.extend(fake_reports(
            vec![GroupSpec::Cce {
                encodings: vec![LabelKind::OneHot],
                class_weights: vec![true],
            }],
            3,
        ));
        let s = sensitivity_report(&reports);
        assert_eq!(s.tables.len(), 1);
        assert_eq!(s.tables[0].weighted_f1, vec![vec![Some(0.25 + 1.0 / 10.0)]]);
        assert_eq!(s.curves.len(), 1);

        let dir = tempfile::tempdir().unwrap();
        write_sensitivity(&s, dir.path()).unwrap();
        let m = std::fs::read_to_string(dir.path().join("confidence_partial-weighted_f1.csv")).unwrap();
        assert_eq!(m, "alpha\\gamma,1\n0.25,0.35\n");
        let c = std::fs::read_to_string(dir.path().join("curves/focal-a0.25-g1-confidence_partial.csv")).unwrap();
        assert_eq!(c.lines().count(), 4);
    }
}
