//! Transfer evaluation and the iterative self-training loop.
//!
//! A run directory holds:
//!
//! ```text
//! <run-root>/<run-id>/
//!   config.toml
//!   thresholds/<table-id>.json
//!   pseudolabels/<iteration>-<table-id>.las
//!   pseudolabels/<iteration>-<table-id>.csv   index,label,confidence
//!   checkpoints/<checkpoint-id>.bin
//!   reports/<iteration>-{val,test}.json
//!   manifest.json
//! ```
//!
//! Identifiers are the first 16 hex digits of a SHA-256 digest. Iteration
//! records carry no strategy-specific fields, so two runs that differ only
//! in strategy produce identical first records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureSet, FeatureSpec};
use crate::las::{read_las, read_las_with, write_las, LasClassMap, LasHeaderInfo};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{BaselineClassifier, Classifier, TrainConfig, TrainingData};
use crate::prediction::{read_predictions_for, PredictionSet};
use crate::pseudolabel::{adjust_thresholds, compute_thresholds, filter_pseudolabels, ThresholdTable};
use crate::taxonomy::{assigned_indices, remap_labels, validate_mapping, ClassId, LabelMapping, NUM_CLASSES};
use crate::tiling::build_blocks;

pub const RUN_ROOT_ENV: &str = "URBANSEG_RUN_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fixed,
    Adaptive,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Strategy::Fixed),
            "adaptive" => Ok(Strategy::Adaptive),
            _ => Err(Error::Argument(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Where the initial train-cloud predictions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Bootstrap {
    /// Train the baseline on a labeled source cloud and predict with it.
    Baseline {
        source: PathBuf,
        #[serde(default)]
        model: Option<TrainConfig>,
    },
    /// Predictions produced elsewhere, aligned to the train (and optionally test) cloud.
    Import {
        train_predictions: PathBuf,
        #[serde(default)]
        test_predictions: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    /// LAS classification byte map shared by all clouds; defaults to codes 0 to 6.
    #[serde(default)]
    pub class_map: Option<PathBuf>,
}

fn default_iterations() -> u32 {
    3
}

fn default_overrides() -> BTreeMap<String, f64> {
    BTreeMap::from([("Soil".to_string(), 0.1), ("Water".to_string(), 0.9)])
}

fn default_features() -> FeatureSpec {
    FeatureSpec::new(FeatureSet::Extended, true)
}

fn default_block_area() -> f64 {
    25_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    /// Applied to the iteration-1 table.
    #[serde(default = "default_overrides")]
    pub overrides: BTreeMap<String, f64>,
    /// Extra overrides keyed by iteration number, applied after that
    /// iteration's table is formed.
    #[serde(default)]
    pub iteration_overrides: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default = "default_features")]
    pub features: FeatureSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_block_area")]
    pub block_area: f64,
    #[serde(default)]
    pub model: TrainConfig,
    pub paths: Option<DataPaths>,
    pub bootstrap: Option<Bootstrap>,
}

impl PipelineConfig {
    pub fn new(strategy: Strategy) -> Self {
        PipelineConfig {
            strategy,
            iterations: default_iterations(),
            overrides: default_overrides(),
            iteration_overrides: BTreeMap::new(),
            features: default_features(),
            seed: 0,
            block_area: default_block_area(),
            model: TrainConfig::default(),
            paths: None,
            bootstrap: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.block_area.is_finite() && self.block_area > 0.0) {
            return Err(Error::Config("block_area must be positive".into()));
        }
        self.model.validate()?;
        self.initial_overrides()?;
        for k in self.iteration_overrides.keys() {
            self.overrides_for(k.parse().map_err(|_| Error::Config(format!("iteration key `{k}` is not a number")))?)?;
        }
        Ok(())
    }

    pub fn initial_overrides(&self) -> Result<BTreeMap<ClassId, f64>> {
        class_overrides(&self.overrides)
    }

    pub fn overrides_for(&self, iteration: u32) -> Result<BTreeMap<ClassId, f64>> {
        match self.iteration_overrides.get(&iteration.to_string()) {
            Some(map) => class_overrides(map),
            None => Ok(BTreeMap::new()),
        }
    }

    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("serializable config"))
    }
}

fn class_overrides(map: &BTreeMap<String, f64>) -> Result<BTreeMap<ClassId, f64>> {
    let mut out = BTreeMap::new();
    for (k, &v) in map {
        let class: ClassId = k.parse()?;
        if !class.is_semantic() {
            return Err(Error::ClassDomain(class));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("override {v} for {class} outside [0, 1]")));
        }
        out.insert(class, v);
    }
    Ok(out)
}

pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Scores an exported prediction file against a ground-truth cloud whose
/// classification bytes are in a source taxonomy. The report is written
/// only once scoring succeeds.
pub fn run_transfer_eval(
    pred_path: &Path,
    gt_path: &Path,
    mapping: &LabelMapping,
    report_path: Option<&Path>,
) -> Result<MetricsReport> {
    validate_mapping(mapping)?;
    let gt = read_las_with(gt_path, &LasClassMap::raw())?;
    let preds = read_predictions_for(pred_path, &gt.cloud)?;
    let raw: Vec<u32> = gt.classification.iter().map(|&b| b as u32).collect();
    let labels = remap_labels(&raw, mapping)?;
    let report = evaluate(&labels, &preds.argmax_classes())?;
    if let Some(path) = report_path {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub global: u64,
    /// Training seed used at each iteration, starting with iteration 1.
    pub training: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub source: String,
    pub test: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub las: String,
    pub sidecar: String,
    pub counts: BTreeMap<ClassId, u64>,
    pub total: u64,
    pub emptied: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub id: String,
    pub file: String,
    pub initialization: String,
    pub parent: Option<String>,
    pub selected_epoch: Option<usize>,
    pub val_miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub threshold_table: String,
    pub thresholds: BTreeMap<ClassId, Option<f64>>,
    pub pseudo_labels: PseudoLabelRecord,
    pub training_seed: u64,
    pub checkpoint: CheckpointRecord,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Halted { iteration: u32, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub strategy: Strategy,
    pub config_hash: String,
    pub seeds: SeedLog,
    pub bootstrap: BootstrapRecord,
    pub iterations: Vec<IterationRecord>,
    pub status: RunStatus,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), reason: e.to_string() })
    }

    /// Rows keyed `bootstrap`, `1`, `2`, … for report rendering.
    pub fn report_rows(&self) -> Vec<(String, MetricsReport)> {
        let mut rows = Vec::new();
        if let Some(r) = &self.bootstrap.test {
            rows.push(("bootstrap".to_string(), r.clone()));
        }
        rows.extend(self.iterations.iter().map(|it| (it.iteration.to_string(), it.test.clone())));
        rows
    }
}

/// Clouds and bootstrap predictions for one run.
#[derive(Debug, Clone)]
pub struct SelfTrainData {
    /// Labels, if any, are ignored.
    pub train: PointCloud,
    pub val: PointCloud,
    pub test: PointCloud,
    pub bootstrap: PredictionSet,
    pub bootstrap_test: Option<PredictionSet>,
    pub bootstrap_source: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn iteration_seed(global: u64, iteration: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(iteration as u64);
    rng.next_u64()
}

fn labeled(cloud: &PointCloud, role: &str) -> Result<(Vec<usize>, Vec<ClassId>)> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("{role} cloud has no labels")))?;
    let idx = assigned_indices(labels);
    let kept = idx.iter().map(|&i| labels[i]).collect();
    Ok((idx, kept))
}

fn thresholds_map(table: &ThresholdTable) -> BTreeMap<ClassId, Option<f64>> {
    table.entries.iter().map(|e| (e.class, e.threshold)).collect()
}

/// Runs the loop into `run_dir`, which must not already hold a manifest.
pub fn run_selftrain_with(
    config: &PipelineConfig,
    data: &SelfTrainData,
    classifier: &dyn Classifier,
    run_dir: &Path,
) -> Result<RunManifest> {
    config.validate()?;
    if run_dir.join("manifest.json").exists() {
        return Err(Error::Validation(format!("run directory {} already holds a run", run_dir.display())));
    }
    data.bootstrap.check_aligned(&data.train)?;
    for sub in ["thresholds", "pseudolabels", "checkpoints", "reports"] {
        create_dir(&run_dir.join(sub))?;
    }
    let config_path = run_dir.join("config.toml");
    fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let (test_idx, test_gt) = labeled(&data.test, "test")?;
    let bootstrap_test = match &data.bootstrap_test {
        Some(p) => {
            p.check_aligned(&data.test)?;
            Some(evaluate(&test_gt, &p.select(&test_idx).argmax_classes())?)
        }
        None => None,
    };
    let mut manifest = RunManifest {
        run_id: run_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        strategy: config.strategy,
        config_hash: config.hash(),
        seeds: SeedLog { global: config.seed, training: Vec::new() },
        bootstrap: BootstrapRecord { source: data.bootstrap_source.clone(), test: bootstrap_test },
        iterations: Vec::new(),
        status: RunStatus::Running,
    };
    let manifest_path = run_dir.join("manifest.json");
    let mut current = 0;
    let outcome = iterate(config, data, classifier, run_dir, &mut manifest, &mut current);
    manifest.status = match &outcome {
        Ok(()) => RunStatus::Complete,
        Err(e) => RunStatus::Halted { iteration: current, reason: e.to_string() },
    };
    write_json(&manifest_path, &manifest)?;
    outcome.map(|()| manifest)
}

fn iterate(
    config: &PipelineConfig,
    data: &SelfTrainData,
    classifier: &dyn Classifier,
    run_dir: &Path,
    manifest: &mut RunManifest,
    current: &mut u32,
) -> Result<()> {
    let spec = config.features;
    let train_x = extract_features(&data.train, spec)?;
    let val_x = extract_features(&data.val, spec)?;
    let test_x = extract_features(&data.test, spec)?;
    let (val_idx, val_y) = labeled(&data.val, "val")?;
    let (test_idx, test_y) = labeled(&data.test, "test")?;
    let val_sel = val_x.select(&val_idx);

    let mut preds = data.bootstrap.clone();
    let mut frozen: Option<ThresholdTable> = None;
    for k in 1..=config.iterations {
        *current = k;
        let mut table = match (&frozen, config.strategy) {
            (Some(t), Strategy::Fixed) => t.clone(),
            _ => {
                let mut t = compute_thresholds(&preds)?;
                t.iteration = k;
                if k == 1 {
                    t = adjust_thresholds(&t, &config.initial_overrides()?)?;
                }
                t
            }
        };
        if k == 1 {
            frozen = Some(table.clone());
        }
        let hooks = config.overrides_for(k)?;
        if !hooks.is_empty() {
            table = adjust_thresholds(&table, &hooks)?;
        }
        let table_id = table.id();
        table.save(&run_dir.join("thresholds").join(format!("{table_id}.json")))?;

        let mut set = filter_pseudolabels(&preds, &table);
        set.iteration = k;
        if set.is_empty() {
            let mut vanished = set.emptied.clone();
            if vanished.is_empty() {
                vanished = ClassId::SEMANTIC.to_vec();
            }
            return Err(Error::EmptyPseudoLabels { iteration: k, vanished });
        }
        let stem = format!("{k}-{table_id}");
        let las_name = format!("pseudolabels/{stem}.las");
        let csv_name = format!("pseudolabels/{stem}.csv");
        let mut subset = data.train.select(&set.indices);
        subset.labels = Some(set.labels.clone());
        subset.confidence = Some(set.confidences.clone());
        write_las(&subset, &LasHeaderInfo::for_cloud(&subset, 0.001), run_dir.join(&las_name))?;
        set.write_sidecar(&run_dir.join(&csv_name))?;
        let counts = set.counts();
        info!("iteration {k}: {} pseudo-labels {:?}", set.len(), counts);

        let seed = iteration_seed(config.seed, k);
        manifest.seeds.training.push(seed);
        let train_sel = train_x.select(&set.indices);
        let grid = build_blocks(&subset, config.block_area)?;
        let train_data = TrainingData { features: &train_sel, labels: &set.labels, blocks: Some(&grid) };
        let val_data = TrainingData::new(&val_sel, &val_y);
        let model = classifier.train(&train_data, Some(&val_data), seed)?;
        let checkpoint = model.checkpoint();
        let checkpoint_id = short_hash(&checkpoint);
        let checkpoint_file = format!("checkpoints/{checkpoint_id}.bin");
        let path = run_dir.join(&checkpoint_file);
        fs::write(&path, &checkpoint).map_err(|e| Error::io(&path, e))?;

        let val_report = evaluate(&val_y, &model.predict(&val_sel)?.argmax_classes())?;
        let test_pred = model.predict(&test_x)?.select(&test_idx);
        let test_report = evaluate(&test_y, &test_pred.argmax_classes())?;
        write_json(&run_dir.join(format!("reports/{k}-val.json")), &val_report)?;
        write_json(&run_dir.join(format!("reports/{k}-test.json")), &test_report)?;
        preds = model.predict(&train_x)?;

        manifest.iterations.push(IterationRecord {
            iteration: k,
            threshold_table: table_id,
            thresholds: thresholds_map(&table),
            pseudo_labels: PseudoLabelRecord {
                las: las_name,
                sidecar: csv_name,
                counts: ClassId::SEMANTIC.iter().zip(counts).map(|(c, n)| (*c, n)).collect(),
                total: set.len() as u64,
                emptied: set.emptied.clone(),
            },
            training_seed: seed,
            checkpoint: CheckpointRecord {
                id: checkpoint_id,
                file: checkpoint_file,
                initialization: "fresh".into(),
                parent: None,
                selected_epoch: model.selected_epoch(),
                val_miou: model.validation_miou(),
            },
            val: val_report,
            test: test_report,
        });
        write_json(&run_dir.join("manifest.json"), &*manifest)?;
    }
    Ok(())
}

fn run_dir_for(config: &PipelineConfig, run_root: &Path) -> PathBuf {
    let strategy = match config.strategy {
        Strategy::Fixed => "fixed",
        Strategy::Adaptive => "adaptive",
    };
    run_root.join(format!("{strategy}-{}", config.hash()))
}

/// Loads the clouds named in the config, prepares bootstrap predictions and
/// runs the loop under `<run_root>/<strategy>-<config-hash>`.
pub fn run_selftrain(config: &PipelineConfig, run_root: &Path) -> Result<RunManifest> {
    config.validate()?;
    let paths = config
        .paths
        .as_ref()
        .ok_or_else(|| Error::Config("`paths` section is required".into()))?;
    let bootstrap = config
        .bootstrap
        .as_ref()
        .ok_or_else(|| Error::Config("`bootstrap` section is required".into()))?;
    let class_map = match &paths.class_map {
        Some(p) => LasClassMap::load(p)?,
        None => LasClassMap::default(),
    };
    let load = |p: &Path| read_las_with(p, &class_map).map(|f| f.cloud);
    let train = load(&paths.train)?;
    let val = load(&paths.val)?;
    let test = load(&paths.test)?;
    let (predictions, test_predictions, source) = match bootstrap {
        Bootstrap::Import { train_predictions, test_predictions } => {
            let p = read_predictions_for(train_predictions, &train)?;
            let t = test_predictions.as_ref().map(|tp| read_predictions_for(tp, &test)).transpose()?;
            (p, t, format!("import:{}", train_predictions.display()))
        }
        Bootstrap::Baseline { source, model } => {
            let src = load(source)?;
            let (idx, labels) = labeled(&src, "source")?;
            let x = extract_features(&src, config.features)?.select(&idx);
            let grid = build_blocks(&src.select(&idx), config.block_area)?;
            let classifier = BaselineClassifier {
                config: model.clone().unwrap_or_else(|| config.model.clone()),
                spec: Some(config.features),
            };
            let data = TrainingData { features: &x, labels: &labels, blocks: Some(&grid) };
            let trained = classifier.train(&data, None, iteration_seed(config.seed, 0))?;
            let p = trained.predict(&extract_features(&train, config.features)?)?;
            let t = trained.predict(&extract_features(&test, config.features)?)?;
            (p, Some(t), format!("baseline:{}", source.display()))
        }
    };
    let data = SelfTrainData {
        train,
        val,
        test,
        bootstrap: predictions,
        bootstrap_test: test_predictions,
        bootstrap_source: source,
    };
    let classifier = BaselineClassifier { config: config.model.clone(), spec: Some(config.features) };
    let dir = run_dir_for(config, run_root);
    info!("run directory {}", dir.display());
    run_selftrain_with(config, &data, &classifier, &dir)
}

/// Labeled LAS plus test predictions, loaded for a quick score.
pub fn evaluate_files(gt_path: &Path, pred_path: &Path) -> Result<MetricsReport> {
    let (cloud, _) = read_las(gt_path)?;
    let preds = read_predictions_for(pred_path, &cloud)?;
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("{} has no labels", gt_path.display())))?;
    evaluate(labels, &preds.argmax_classes())
}

/// Per-class pseudo-label counts as stored in a manifest, in class order.
pub fn counts_in_order(record: &PseudoLabelRecord) -> [u64; NUM_CLASSES] {
    let mut out = [0; NUM_CLASSES];
    for (c, n) in &record.counts {
        if let Some(i) = c.semantic_index() {
            out[i] = *n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::las::write_las;
    use crate::prediction::write_predictions;
    use rand::Rng;
    use ClassId::*;

    #[test]
    fn config_defaults_and_toml() {
        let cfg = PipelineConfig::from_toml("strategy = \"adaptive\"\n").unwrap();
        assert_eq!(cfg.iterations, 3);
        assert_eq!(cfg.initial_overrides().unwrap(), BTreeMap::from([(Soil, 0.1), (Water, 0.9)]));
        assert_eq!(cfg.features, FeatureSpec::new(FeatureSet::Extended, true));
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig::from_toml("strategy = \"fixed\"\niterations = 0\n").is_err());
        assert!(PipelineConfig::from_toml("strategy = \"fixed\"\n[overrides]\nUnassigned = 0.5\n").is_err());
        assert!(PipelineConfig::from_toml("strategy = \"fixed\"\nbogus = 1\n").is_err());
        let hooked = PipelineConfig::from_toml(
            "strategy = \"fixed\"\n[iteration_overrides.2]\nWater = 0.5\n[bootstrap]\nkind = \"import\"\ntrain_predictions = \"a.pred\"\n",
        )
        .unwrap();
        assert_eq!(hooked.overrides_for(2).unwrap(), BTreeMap::from([(Water, 0.5)]));
        assert!(hooked.overrides_for(1).unwrap().is_empty());
    }

    fn labeled_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = PointCloud::from_xyz(
            (0..n).map(|_| rng.random_range(0.0..50.0)).collect(),
            (0..n).map(|_| rng.random_range(0.0..50.0)).collect(),
            (0..n).map(|_| rng.random_range(0.0..5.0)).collect(),
        );
        c.labels = Some((0..n).map(|i| [Terrain, Building, Vegetation, Unassigned][i % 4]).collect());
        c
    }

    #[test]
    fn transfer_eval_perfect_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = labeled_cloud(40, 1);
        let gt = dir.path().join("gt.las");
        write_las(&cloud, &LasHeaderInfo::for_cloud(&cloud, 0.01), &gt).unwrap();
        let truth: Vec<ClassId> = cloud.labels.clone().unwrap().iter().map(|c| if *c == Unassigned { Soil } else { *c }).collect();
        let pred = dir.path().join("p.pred");
        write_predictions(&PredictionSet::one_hot(&truth).unwrap(), &pred).unwrap();
        let report_path = dir.path().join("r.json");
        let r = run_transfer_eval(&pred, &gt, &LabelMapping::identity(), Some(&report_path)).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.excluded, 10);
        assert!(report_path.exists());

        let missing_report = dir.path().join("m.json");
        let err = run_transfer_eval(&dir.path().join("nope.pred"), &gt, &LabelMapping::identity(), Some(&missing_report));
        assert!(matches!(err, Err(Error::Io { .. })));
        assert!(!missing_report.exists());
    }

    #[test]
    fn iteration_seeds_differ() {
        assert_ne!(iteration_seed(0, 1), iteration_seed(0, 2));
        assert_eq!(iteration_seed(7, 3), iteration_seed(7, 3));
    }
}
