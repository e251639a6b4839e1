use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use urbanseg::augment::{augment_all, recenter_normalize, AugmentationConfig};
use urbanseg::csf::{run_csf, suggest_ground_type, ClothParams, GroundTypeRule};
use urbanseg::features::{extract_features, FeatureSet, FeatureSpec};
use urbanseg::las::{read_las_with, write_las_with, LasClassMap, LasHeaderInfo};
use urbanseg::metrics::{render_csv, render_json, render_text, MetricsReport};
use urbanseg::model::{BaselineClassifier, BaselineModel, Classifier, TrainConfig, TrainingData};
use urbanseg::pipeline::{evaluate_files, run_selftrain, run_transfer_eval, PipelineConfig, RunManifest, RUN_ROOT_ENV};
use urbanseg::prediction::{read_predictions_for, write_predictions};
use urbanseg::pseudolabel::{adjust_thresholds, compute_thresholds, filter_pseudolabels, parse_overrides, ThresholdTable};
use urbanseg::taxonomy::{assigned_indices, remap_labels, validate_mapping, LabelMapping};
use urbanseg::tiling::{assign_splits, assign_splits_balanced, build_blocks, SplitTargets};
use urbanseg::{ClassId, Error, ErrorFamily, PointCloud, Result};

const EXIT_IO: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_USAGE: u8 = 64;

/// Aerial LiDAR segmentation toolkit.
#[derive(Debug, Parser)]
#[command(name = "urbanseg", version, about, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalOptions,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOptions {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Seed for every random draw; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root directory for self-training runs.
    #[arg(long, global = true, env = RUN_ROOT_ENV, default_value = "run")]
    run_root: PathBuf,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

impl GlobalOptions {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Args)]
struct ClassMapArg {
    /// `byte = Class` lines mapping LAS classification codes; defaults to codes 0-6.
    #[arg(long)]
    class_map: Option<PathBuf>,
}

impl ClassMapArg {
    fn load(&self) -> Result<LasClassMap> {
        match &self.class_map {
            Some(p) => LasClassMap::load(p),
            None => Ok(LasClassMap::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeatureArg {
    Basic,
    Extended,
}

#[derive(Debug, Args)]
struct FeatureArgs {
    /// Per-point feature set.
    #[arg(long, value_enum, default_value = "extended")]
    features: FeatureArg,
    /// Add height-above-local-minimum, linearity and planarity columns.
    #[arg(long)]
    engineered: bool,
}

impl FeatureArgs {
    fn spec(&self) -> FeatureSpec {
        let set = match self.features {
            FeatureArg::Basic => FeatureSet::Basic,
            FeatureArg::Extended => FeatureSet::Extended,
        };
        FeatureSpec::new(set, self.engineered)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read and validate a LAS 1.4 file, print a summary and optionally rewrite it.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Write a LAS file, optionally labeled with the argmax of a prediction file.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Translate source-dataset classification codes into the six-class taxonomy.
    Remap {
        #[arg(long)]
        input: PathBuf,
        /// Mapping file (`source = …`, `universe = …`, `id = Class` lines).
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Partition a cloud into square blocks.
    Tile {
        #[arg(long)]
        input: PathBuf,
        /// Target block area in square meters.
        #[arg(long, default_value_t = 25_000.0)]
        area: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Assign blocks to train/val/test.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 25_000.0)]
        area: f64,
        /// Train, val and test point fractions.
        #[arg(long, default_value = "0.7,0.1,0.2")]
        targets: SplitTargets,
        /// Weight of the class-mix term; needs labels in the input.
        #[arg(long)]
        balance_weight: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Apply one seeded augmentation pass.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML file with augmentation parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Ground extraction with a cloth simulation filter.
    Csf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML file with cloth parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Label ground points Soil or Terrain from color and intensity.
        #[arg(long)]
        suggest_ground_type: bool,
        /// Write the suggested ground types into the output labels.
        #[arg(long, requires = "suggest_ground_type")]
        confirm: bool,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Train the baseline classifier.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_points: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Disable inverse-frequency class weights.
        #[arg(long)]
        no_class_weights: bool,
        #[arg(long, default_value_t = 25_000.0)]
        area: f64,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Predict class probabilities with a trained checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Compute class thresholds and keep high-confidence predictions.
    Pseudolabel {
        #[arg(long)]
        predictions: PathBuf,
        /// Cloud the predictions belong to; used for alignment and the labeled LAS output.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Threshold overrides, e.g. `Soil=0.1,Water=0.9`.
        #[arg(long)]
        overrides: Option<String>,
        /// Reuse an existing threshold table instead of computing one.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        iteration: u32,
        #[command(flatten)]
        class_map: ClassMapArg,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Source-taxonomy mapping for ground-truth codes.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Report file; `.csv` and `.json` select the format, anything else is text.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the iterative self-training loop.
    Selftrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render the per-iteration table of a run.
    Report {
        /// Run id under the run root, or a path to a run directory.
        #[arg(long)]
        run: String,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args_os()))
}

fn dispatch(argv: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            warn!("could not set thread count: {e}");
        }
    }
    match execute(&cli.global, &cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e.family() {
                ErrorFamily::Io => EXIT_IO,
                ErrorFamily::Validation => EXIT_VALIDATION,
                ErrorFamily::Numeric => EXIT_NUMERIC,
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn emit(global: &GlobalOptions, value: serde_json::Value, text: String) {
    if global.json {
        print!("{}", to_json(&value));
    } else {
        print!("{text}");
    }
}

fn label_histogram(labels: &[ClassId]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for c in labels {
        *h.entry(c.name().to_string()).or_insert(0) += 1;
    }
    h
}

fn write_cloud(cloud: &PointCloud, path: &Path, map: &LasClassMap) -> Result<()> {
    write_las_with(cloud, &LasHeaderInfo::for_cloud(cloud, 0.001), map, path)
}

fn execute(global: &GlobalOptions, command: &Command) -> Result<()> {
    match command {
        Command::Ingest { input, output, class_map } => {
            let map = class_map.load()?;
            let file = read_las_with(input, &map)?;
            let c = &file.cloud;
            c.validate()?;
            let h = &file.header;
            let hist = c.labels.as_deref().map(label_histogram);
            let mut text = format!(
                "{}: LAS {}.{} format {}, {} points\nbounds {:?} .. {:?}\n",
                input.display(),
                h.version.0,
                h.version.1,
                h.point_format,
                h.point_count,
                h.min,
                h.max
            );
            if let Some(hist) = &hist {
                for (k, v) in hist {
                    text.push_str(&format!("  {k}: {v}\n"));
                }
            }
            if let Some(out) = output {
                write_cloud(c, out, &map)?;
            }
            emit(
                global,
                json!({"points": h.point_count, "format": h.point_format, "min": h.min, "max": h.max, "labels": hist}),
                text,
            );
        }
        Command::Export { input, output, predictions, class_map } => {
            let map = class_map.load()?;
            let mut cloud = read_las_with(input, &map)?.cloud;
            if let Some(p) = predictions {
                let preds = read_predictions_for(p, &cloud)?;
                cloud.labels = Some(preds.argmax_classes());
                cloud.confidence = Some(preds.confidences());
            }
            write_cloud(&cloud, output, &map)?;
            emit(global, json!({"points": cloud.len(), "output": output}), format!("wrote {} points to {}\n", cloud.len(), output.display()));
        }
        Command::Remap { input, mapping, output } => {
            let mapping = LabelMapping::load(mapping)?;
            validate_mapping(&mapping)?;
            let file = read_las_with(input, &LasClassMap::raw())?;
            let raw: Vec<u32> = file.classification.iter().map(|&b| b as u32).collect();
            let labels = remap_labels(&raw, &mapping)?;
            let hist = label_histogram(&labels);
            let mut cloud = file.cloud;
            cloud.labels = Some(labels);
            write_cloud(&cloud, output, &LasClassMap::default())?;
            let text = hist.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
            emit(global, json!({"source": mapping.source_name, "labels": hist}), text);
        }
        Command::Tile { input, area, output } => {
            let cloud = read_las_with(input, &LasClassMap::raw())?.cloud;
            let grid = build_blocks(&cloud, *area)?;
            let text = format!("{} blocks of {:.1} m side\n", grid.blocks.len(), grid.cell_side);
            if let Some(out) = output {
                write_text(out, &to_json(&grid))?;
            }
            emit(global, serde_json::to_value(&grid).expect("serializable grid"), text);
        }
        Command::Split { input, area, targets, balance_weight, output, class_map } => {
            let map = class_map.load()?;
            let cloud = read_las_with(input, &map)?.cloud;
            let grid = build_blocks(&cloud, *area)?;
            let assignment = match balance_weight {
                Some(w) => {
                    let labels = cloud
                        .labels
                        .as_deref()
                        .ok_or_else(|| Error::Validation("--balance-weight needs a labeled cloud".into()))?;
                    assign_splits_balanced(&grid, labels, *targets, *w, global.seed())?
                }
                None => assign_splits(&grid, *targets, global.seed())?,
            };
            let f = assignment.fractions;
            let text = format!(
                "train {:.2}%  val {:.2}%  test {:.2}%  (max deviation {:.2} pp)\n",
                100.0 * f[0],
                100.0 * f[1],
                100.0 * f[2],
                100.0 * assignment.max_deviation()
            );
            if let Some(out) = output {
                write_text(out, &to_json(&assignment))?;
            }
            emit(global, serde_json::to_value(&assignment).expect("serializable split"), text);
        }
        Command::Augment { input, output, config, class_map } => {
            let map = class_map.load()?;
            let mut cfg = match config {
                Some(p) => AugmentationConfig::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
                None => AugmentationConfig::default(),
            };
            if let Some(seed) = global.seed {
                cfg.seed = seed;
            }
            let mut cloud = read_las_with(input, &map)?.cloud;
            let coords = cloud.coords();
            let (_, norm) = recenter_normalize(&coords);
            let (moved, colors, record) = augment_all(&coords, &cloud.colors_unit(), &cfg)?;
            cloud.set_coords(&norm.invert(&moved));
            cloud.set_colors_unit(&colors);
            write_cloud(&cloud, output, &map)?;
            emit(global, serde_json::to_value(&record).expect("serializable record"), format!("{record:?}\n"));
        }
        Command::Csf { input, output, params, suggest_ground_type: suggest, confirm, class_map } => {
            let map = class_map.load()?;
            let params: ClothParams = match params {
                Some(p) => urbanseg_toml(p)?,
                None => ClothParams::default(),
            };
            let mut cloud = read_las_with(input, &map)?.cloud;
            let out = run_csf(&cloud, &params)?;
            let mut summary = json!({
                "points": cloud.len(),
                "ground": out.ground_count(),
                "converged": out.converged,
                "iterations": out.iterations,
            });
            let mut text = format!(
                "{} of {} points ground ({} cloth iterations{})\n",
                out.ground_count(),
                cloud.len(),
                out.iterations,
                if out.converged { "" } else { ", not converged" }
            );
            if *suggest {
                let s = suggest_ground_type(&cloud, &out.ground, &GroundTypeRule::default())?;
                let (soil, terrain) = (s.count(ClassId::Soil), s.count(ClassId::Terrain));
                text.push_str(&format!("suggested Soil {soil}, Terrain {terrain}\n"));
                summary["soil"] = json!(soil);
                summary["terrain"] = json!(terrain);
                if *confirm {
                    s.confirm(&mut cloud)?;
                }
            }
            if !*confirm {
                cloud.labels = Some(
                    out.ground
                        .iter()
                        .map(|&g| if g { ClassId::Terrain } else { ClassId::Unassigned })
                        .collect(),
                );
            }
            write_cloud(&cloud, output, &map)?;
            emit(global, summary, text);
        }
        Command::Train {
            train,
            val,
            output,
            features,
            learning_rate,
            epochs,
            max_points,
            batch_size,
            no_class_weights,
            area,
            class_map,
        } => {
            let map = class_map.load()?;
            let spec = features.spec();
            let defaults = TrainConfig::default();
            let config = TrainConfig {
                learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
                epochs: epochs.unwrap_or(defaults.epochs),
                max_points: max_points.unwrap_or(defaults.max_points),
                batch_size: batch_size.unwrap_or(defaults.batch_size),
                class_weights: !no_class_weights,
            };
            let load_labeled = |p: &Path| -> Result<(urbanseg::features::FeatureMatrix, Vec<ClassId>, PointCloud)> {
                let cloud = read_las_with(p, &map)?.cloud;
                let labels = cloud
                    .labels
                    .clone()
                    .ok_or_else(|| Error::Validation(format!("{} has no labels", p.display())))?;
                let idx = assigned_indices(&labels);
                let x = extract_features(&cloud, spec)?.select(&idx);
                let y = idx.iter().map(|&i| labels[i]).collect();
                Ok((x, y, cloud.select(&idx)))
            };
            let (tx, ty, tcloud) = load_labeled(train)?;
            let grid = build_blocks(&tcloud, *area)?;
            let val_data = val.as_deref().map(load_labeled).transpose()?;
            let classifier = BaselineClassifier { config, spec: Some(spec) };
            let data = TrainingData { features: &tx, labels: &ty, blocks: Some(&grid) };
            let model = classifier.train(
                &data,
                val_data.as_ref().map(|(x, y, _)| TrainingData::new(x, y)).as_ref(),
                global.seed(),
            )?;
            let bytes = model.checkpoint();
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(output, &bytes).map_err(|e| Error::io(output, e))?;
            info!("checkpoint written to {}", output.display());
            emit(
                global,
                json!({"epoch": model.selected_epoch(), "val_miou": model.validation_miou(), "output": output}),
                format!(
                    "selected epoch {:?}, validation mIoU {}\n",
                    model.selected_epoch(),
                    model.validation_miou().map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "-".into())
                ),
            );
        }
        Command::Predict { model, input, output, class_map } => {
            let model = BaselineModel::load(model)?;
            let spec = model
                .spec
                .ok_or_else(|| Error::Validation("checkpoint does not record its feature set".into()))?;
            let cloud = read_las_with(input, &class_map.load()?)?.cloud;
            let preds = model.predict(&extract_features(&cloud, spec)?)?;
            write_predictions(&preds, output)?;
            emit(global, json!({"points": preds.len(), "output": output}), format!("wrote {} predictions\n", preds.len()));
        }
        Command::Pseudolabel { predictions, input, output_dir, overrides, thresholds, iteration, class_map } => {
            let map = class_map.load()?;
            let cloud = read_las_with(input, &map)?.cloud;
            let preds = read_predictions_for(predictions, &cloud)?;
            let mut table = match thresholds {
                Some(p) => ThresholdTable::load(p)?,
                None => {
                    let mut t = compute_thresholds(&preds)?;
                    t.iteration = *iteration;
                    t
                }
            };
            if let Some(text) = overrides {
                table = adjust_thresholds(&table, &parse_overrides(text)?)?;
            }
            let mut set = filter_pseudolabels(&preds, &table);
            set.iteration = *iteration;
            let id = table.id();
            fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
            table.save(&output_dir.join(format!("thresholds-{id}.json")))?;
            set.write_sidecar(&output_dir.join(format!("pseudolabels-{iteration}-{id}.csv")))?;
            let mut subset = cloud.select(&set.indices);
            subset.labels = Some(set.labels.clone());
            write_cloud(&subset, &output_dir.join(format!("pseudolabels-{iteration}-{id}.las")), &map)?;
            let counts: BTreeMap<String, u64> =
                ClassId::SEMANTIC.iter().zip(set.counts()).map(|(c, n)| (c.name().to_string(), n)).collect();
            let mut text = format!("threshold table {id}\n");
            for e in &table.entries {
                text.push_str(&format!(
                    "  {:<16} tau {:>8}  kept {}\n",
                    e.class.name(),
                    e.threshold.map(|t| format!("{t:.4}")).unwrap_or_else(|| "absent".into()),
                    counts[e.class.name()]
                ));
            }
            emit(global, json!({"table": id, "thresholds": table, "counts": counts, "emptied": set.emptied}), text);
        }
        Command::Evaluate { gt, pred, mapping, report } => {
            let result = match mapping {
                Some(m) => run_transfer_eval(pred, gt, &LabelMapping::load(m)?, None)?,
                None => evaluate_files(gt, pred)?,
            };
            let rows = vec![("eval".to_string(), result.clone())];
            if let Some(path) = report {
                write_text(path, &render_by_extension(path, &rows))?;
            }
            emit(global, serde_json::to_value(&result).expect("serializable report"), summary_text(&result, &rows));
        }
        Command::Selftrain { config } => {
            let mut cfg = PipelineConfig::load(config)?;
            if let Some(seed) = global.seed {
                cfg.seed = seed;
            }
            let manifest = match run_selftrain(&cfg, &global.run_root) {
                Ok(m) => m,
                Err(e @ Error::EmptyPseudoLabels { .. }) => {
                    eprintln!("run halted; partial progress is recorded in the run manifest under {}", global.run_root.display());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let rows = manifest.report_rows();
            emit(
                global,
                serde_json::to_value(&manifest).expect("serializable manifest"),
                format!("run {}\n{}", manifest.run_id, render_text(&rows)),
            );
        }
        Command::Report { run, format } => {
            let dir = {
                let direct = PathBuf::from(run);
                if direct.join("manifest.json").exists() {
                    direct
                } else {
                    global.run_root.join(run)
                }
            };
            let manifest = RunManifest::load(&dir.join("manifest.json"))?;
            let rows = manifest.report_rows();
            let format = if global.json { ReportFormat::Json } else { *format };
            print!(
                "{}",
                match format {
                    ReportFormat::Text => render_text(&rows),
                    ReportFormat::Csv => render_csv(&rows),
                    ReportFormat::Json => render_json(&rows),
                }
            );
        }
    }
    Ok(())
}

fn summary_text(report: &MetricsReport, rows: &[(String, MetricsReport)]) -> String {
    format!(
        "{}evaluated {} points, excluded {} unassigned\nmIoU {:.4}  macro-F1 {:.4}\n",
        render_text(rows),
        report.evaluated,
        report.excluded,
        report.miou,
        report.macro_f1
    )
}

fn render_by_extension(path: &Path, rows: &[(String, MetricsReport)]) -> String {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => render_csv(rows),
        Some("json") => render_json(rows),
        _ => render_text(rows),
    }
}

fn urbanseg_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}
