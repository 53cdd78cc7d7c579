use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use pll_core::data::{
    filter_samples, ingest_scene, load_dataset, save_dataset, split, Dataset, MIN_BORDER_DISTANCE_M, MIN_CA_FRACTION,
    PAPER_RATIOS,
};
use pll_core::harness::{
    build_grid, run_sweep, sensitivity_report, train_repetition, write_sensitivity, write_summary_csv,
    ExperimentConfig, GridSpec, Profile,
};
use pll_core::label_codec::{read_polygon_table, write_label_csv, EggCode, EncodedLabels};
use pll_core::loss::{loss_gradient, sample_loss, softmax, LossConfig};
use pll_core::metrics::{compute_metrics, confusion};
use pll_core::net::{load_checkpoint, predict_all, save_checkpoint};
use pll_core::{LabelKind, LossKind, SyntheticSpec};

#[derive(Parser)]
#[command(name = "pll", version, about = "Partial label learning with focal loss on polygon-labeled patches")]
struct Cli {
    /// Base seed for data generation, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Scale preset used when no explicit spec or schedule is given.
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    OneHot,
    BinaryPartial,
    ConfidencePartial,
}

impl From<EncodingArg> for LabelKind {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::OneHot => LabelKind::OneHot,
            EncodingArg::BinaryPartial => LabelKind::BinaryPartial,
            EncodingArg::ConfidencePartial => LabelKind::ConfidencePartial,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest + pixels) into --out.
    GenData {
        /// SyntheticSpec JSON; defaults to the profile's spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Override the sample count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Cut a raster scene into labeled patches and save them as a dataset.
    Ingest {
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 50)]
        patch: usize,
        #[arg(long, default_value_t = 40.0)]
        pixel_spacing: f64,
        #[arg(long, default_value_t = MIN_CA_FRACTION)]
        min_ca: f64,
        #[arg(long, default_value_t = MIN_BORDER_DISTANCE_M)]
        min_border: f64,
    },
    /// Encode a polygon table (JSON) as a label CSV.
    Encode {
        polygons: PathBuf,
        /// Output file; defaults to <out>/labels.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one repetition of an experiment; writes model.tnet and history.json.
    Train {
        /// ExperimentConfig JSON; defaults to confidence partial + focal(0.25, 1).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory or manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
    },
    /// Score a checkpoint on one split; writes metrics.json and confusion.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Run an experiment grid; writes reports/, summary.csv, best.json and sensitivity/.
    Sweep {
        /// GridSpec JSON; defaults to the 34-configuration standard grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print probabilities, loss and logit gradient for one sample.
    LossEval {
        /// Comma-separated logits.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        logits: Vec<f64>,
        /// Comma-separated label vector.
        #[arg(long, value_delimiter = ',', conflicts_with = "egg")]
        labels: Option<Vec<f64>>,
        /// Egg code JSON, encoded with --encoding.
        #[arg(long)]
        egg: Option<String>,
        #[arg(long, value_enum, default_value_t = EncodingArg::ConfidencePartial)]
        encoding: EncodingArg,
        /// Focal alpha; cross-entropy when neither alpha nor gamma is given.
        #[arg(long)]
        alpha: Option<f64>,
        /// Focal gamma.
        #[arg(long)]
        gamma: Option<f64>,
        /// Comma-separated class weights, one per class.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn default_config(profile: Profile) -> ExperimentConfig {
    ExperimentConfig::new(
        LabelKind::ConfidencePartial,
        LossKind::Focal { alpha: 0.25, gamma: 1.0 },
        false,
        profile.train_settings(),
    )
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.parallelism {
        if threads == 0 {
            bail!("--parallelism must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let parallelism = cli.parallelism.unwrap_or_else(rayon::current_num_threads);
    let profile = Profile::from(cli.profile);
    let seed = cli.seed.unwrap_or(0);
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::GenData { spec, samples } => {
            let mut spec = match spec {
                Some(path) => read_json::<SyntheticSpec>(&path)?,
                None => profile.synthetic_spec(),
            };
            if let Some(n) = samples {
                spec.samples = n;
            }
            let dataset = Dataset::synthetic(&spec, seed, PAPER_RATIOS)?;
            save_dataset(&dataset, out, json!({ "generator": spec, "seed": seed }))?;
            println!(
                "{} samples (train {}, val {}, test {}) -> {}",
                dataset.samples.len(),
                dataset.split.train.len(),
                dataset.split.val.len(),
                dataset.split.test.len(),
                out.display()
            );
        }
        Command::Ingest {
            raster,
            annotations,
            patch,
            pixel_spacing,
            min_ca,
            min_border,
        } => {
            let all = ingest_scene(&raster, &annotations, patch, pixel_spacing)?;
            let tiles = all.len();
            let kept = filter_samples(all, min_ca, min_border);
            let split = split(kept.len(), PAPER_RATIOS, seed)?;
            let dataset = Dataset::new(kept, split)?;
            let source = json!({
                "raster": raster, "annotations": annotations, "patch": patch,
                "pixel_spacing_m": pixel_spacing, "min_ca": min_ca, "min_border_m": min_border, "seed": seed,
            });
            save_dataset(&dataset, out, source)?;
            println!("{tiles} tiles, {} kept -> {}", dataset.samples.len(), out.display());
        }
        Command::Encode { polygons, output } => {
            let records = read_polygon_table(&polygons)?;
            let path = output.unwrap_or_else(|| out.join("labels.csv"));
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_label_csv(&records, std::io::BufWriter::new(file))?;
            println!("{} polygons -> {}", records.len(), path.display());
        }
        Command::Train {
            config,
            data,
            repetition,
        } => {
            let mut config = match config {
                Some(path) => read_json::<ExperimentConfig>(&path)?,
                None => default_config(profile),
            };
            if let Some(s) = cli.seed {
                config.base_seed = s;
            }
            let dataset = load_dataset(&data)?;
            let (net, report) = train_repetition(&config, &dataset, repetition)?;
            save_checkpoint(&net, &out.join("model.tnet"))?;
            write_json(&out.join("history.json"), &report.history)?;
            write_json(&out.join("train_report.json"), &json!({ "config": config, "repetition": report }))?;
            let last = report.history.last().expect("at least one epoch");
            println!(
                "{} epochs, final loss {:.6}, train accuracy {:.4}, test accuracy {:.4} -> {}",
                report.history.len(),
                last.mean_loss,
                last.train_accuracy,
                report.test.accuracy,
                out.display()
            );
        }
        Command::Evaluate { checkpoint, data, split } => {
            let net = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let indices = match split {
                SplitArg::Train => &dataset.split.train,
                SplitArg::Val => &dataset.split.val,
                SplitArg::Test => &dataset.split.test,
            };
            let preds = predict_all(&net, &dataset.inputs(indices)?)?;
            let cm = confusion(&preds, &dataset.truths(indices))?;
            let report = compute_metrics(&cm)?;
            write_json(&out.join("metrics.json"), &report)?;
            cm.write_csv(fs::File::create(out.join("confusion.csv"))?)?;
            print!("{}", report.to_table());
        }
        Command::Sweep { grid, data } => {
            let mut spec = match grid {
                Some(path) => read_json::<GridSpec>(&path)?,
                None => GridSpec::standard(profile.train_settings()),
            };
            if let Some(s) = cli.seed {
                spec.base_seed = s;
            }
            spec.dataset.get_or_insert_with(|| data.display().to_string());
            let configs = build_grid(&spec);
            if configs.is_empty() {
                bail!("the grid is empty");
            }
            let dataset = load_dataset(&data)?;
            let result = run_sweep(&configs, &dataset, parallelism)?;
            let reports_dir = out.join("reports");
            fs::create_dir_all(&reports_dir)?;
            for (i, r) in result.reports.iter().enumerate() {
                write_json(&reports_dir.join(format!("{i:02}-{}.json", r.config.name)), r)?;
            }
            write_summary_csv(&result.summary, fs::File::create(out.join("summary.csv"))?)?;
            if let Some(best) = result.best {
                write_json(&out.join("best.json"), &result.summary[best])?;
                let b = &result.summary[best];
                println!("best: {} (weighted F1 {:.4}, test accuracy {:.4})", b.name, b.weighted_f1, b.test_accuracy);
            }
            write_sensitivity(&sensitivity_report(&result.reports), &out.join("sensitivity"))?;
            println!("{} configurations -> {}", result.reports.len(), out.display());
        }
        Command::LossEval {
            logits,
            labels,
            egg,
            encoding,
            alpha,
            gamma,
            weights,
        } => {
            let y: Vec<f64> = match (labels, egg) {
                (Some(y), None) => y,
                (None, Some(text)) => {
                    let egg: EggCode = serde_json::from_str(&text).context("parsing --egg")?;
                    EncodedLabels::from_egg(&egg)?.get(encoding.into()).values.to_vec()
                }
                _ => bail!("give exactly one of --labels or --egg"),
            };
            if y.len() != logits.len() {
                bail!("{} logits but {} labels", logits.len(), y.len());
            }
            let mut cfg = match (alpha, gamma) {
                (None, None) => LossConfig::cce(),
                (a, g) => LossConfig::focal(a.unwrap_or(1.0), g.unwrap_or(0.0)),
            };
            if let Some(w) = weights {
                if w.len() != y.len() {
                    bail!("{} weights for {} classes", w.len(), y.len());
                }
                cfg.class_weights = Some(w);
            }
            cfg.validate()?;
            let report = json!({
                "loss_config": cfg,
                "labels": y,
                "probabilities": softmax(&logits).as_slice(),
                "loss": sample_loss(&logits, &y, &cfg),
                "gradient": loss_gradient(&logits, &y, &cfg),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
