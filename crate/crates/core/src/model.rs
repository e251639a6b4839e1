//! Classifier contract and the built-in multinomial logistic regression.
//!
//! Checkpoint layout (little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `USEGMODL` |
//! | 8 | 4 | version (1) |
//! | 12 | 4 | classes `K` |
//! | 16 | 4 | feature dimension `D` |
//! | 20 | 1 | feature set (0 unknown, 1 basic, 2 extended) |
//! | 21 | 1 | engineered block flag |
//! | 22 | 2 | reserved |
//! | 24 | 4 | selected epoch |
//! | 28 | 4 | reserved |
//! | 32 | `8·D` | feature means |
//! | … | `8·D` | feature scales |
//! | … | `8·K` | class weights |
//! | … | `8·K·(D+1)` | weights, row-major by class, bias last |

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sample_batches, FeatureMatrix, FeatureSet, FeatureSpec};
use crate::metrics::{confusion_indices, iou_miou};
use crate::prediction::PredictionSet;
use crate::taxonomy::{ClassId, NUM_CLASSES};
use crate::tiling::{Block, BlockGrid};

const MAGIC: &[u8; 8] = b"USEGMODL";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub max_points: usize,
    pub batch_size: usize,
    pub class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 200,
            max_points: 65_536,
            batch_size: 4,
            class_weights: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_points == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_points and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Labeled rows for training or validation. `blocks` indexes rows of
/// `features`; without it every row belongs to one block.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a [ClassId],
    pub blocks: Option<&'a BlockGrid>,
}

impl<'a> TrainingData<'a> {
    pub fn new(features: &'a FeatureMatrix, labels: &'a [ClassId]) -> Self {
        TrainingData { features, labels, blocks: None }
    }

    fn targets(&self) -> Result<Vec<usize>> {
        if self.labels.len() != self.features.rows {
            return Err(Error::Alignment { expected: self.features.rows, found: self.labels.len() });
        }
        self.labels
            .iter()
            .enumerate()
            .map(|(i, c)| c.semantic_index().ok_or(Error::LabelDomain { id: c.as_u8() as u32, index: i }))
            .collect()
    }
}

/// Anything that can be trained into a [`TrainedModel`].
pub trait Classifier: Send + Sync {
    fn train(&self, data: &TrainingData<'_>, val: Option<&TrainingData<'_>>, seed: u64) -> Result<Box<dyn TrainedModel>>;
}

pub trait TrainedModel: Send + Sync {
    fn predict(&self, features: &FeatureMatrix) -> Result<PredictionSet>;
    /// Serialized checkpoint; its hash identifies the model.
    fn checkpoint(&self) -> Vec<u8>;
    fn selected_epoch(&self) -> Option<usize>;
    fn validation_miou(&self) -> Option<f64>;
}

#[derive(Debug, Clone, Default)]
pub struct BaselineClassifier {
    pub config: TrainConfig,
    pub spec: Option<FeatureSpec>,
}

impl Classifier for BaselineClassifier {
    fn train(&self, data: &TrainingData<'_>, val: Option<&TrainingData<'_>>, seed: u64) -> Result<Box<dyn TrainedModel>> {
        let mut model = train_baseline(data, &self.config, val, seed)?;
        model.spec = self.spec;
        Ok(Box::new(model))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub spec: Option<FeatureSpec>,
    dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    class_weights: [f64; NUM_CLASSES],
    weights: Vec<f64>,
    selected_epoch: usize,
    /// Validation mIoU after each epoch, starting with the untrained model.
    pub val_history: Vec<f64>,
    /// Mean batch loss of each epoch, measured before its updates.
    pub loss_history: Vec<f64>,
}

impl BaselineModel {
    /// Untrained model: zero weights, identity standardization.
    pub fn zeros(dim: usize) -> Self {
        BaselineModel {
            spec: None,
            dim,
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            class_weights: [1.0; NUM_CLASSES],
            weights: vec![0.0; NUM_CLASSES * (dim + 1)],
            selected_epoch: 0,
            val_history: Vec::new(),
            loss_history: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn class_weights(&self) -> &[f64; NUM_CLASSES] {
        &self.class_weights
    }

    pub fn selected(&self) -> usize {
        self.selected_epoch
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<PredictionSet> {
        if features.dim != self.dim {
            return Err(Error::Shape { expected: self.dim, found: features.dim });
        }
        let probs: Vec<f64> = (0..features.rows)
            .into_par_iter()
            .flat_map_iter(|i| {
                let x = standardize(features.row(i), &self.mean, &self.scale);
                softmax(&logits(&self.weights, &x))
            })
            .collect();
        PredictionSet::new(NUM_CLASSES, probs)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * (2 * self.dim + NUM_CLASSES + self.weights.len()));
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).unwrap();
        out.write_u32::<LittleEndian>(NUM_CLASSES as u32).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        let (set, eng) = match self.spec {
            None => (0u8, 0u8),
            Some(s) => (
                match s.set {
                    FeatureSet::Basic => 1,
                    FeatureSet::Extended => 2,
                },
                s.engineered as u8,
            ),
        };
        out.extend_from_slice(&[set, eng, 0, 0]);
        out.write_u32::<LittleEndian>(self.selected_epoch as u32).unwrap();
        out.write_u32::<LittleEndian>(0).unwrap();
        for v in self.mean.iter().chain(&self.scale).chain(&self.class_weights).chain(&self.weights) {
            out.write_f64::<LittleEndian>(*v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = LittleEndian::read_u32(&bytes[8..]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let k = LittleEndian::read_u32(&bytes[12..]) as usize;
        if k != NUM_CLASSES {
            return Err(Error::Shape { expected: NUM_CLASSES, found: k });
        }
        let dim = LittleEndian::read_u32(&bytes[16..]) as usize;
        let spec = match bytes[20] {
            0 => None,
            1 => Some(FeatureSpec::new(FeatureSet::Basic, bytes[21] != 0)),
            2 => Some(FeatureSpec::new(FeatureSet::Extended, bytes[21] != 0)),
            b => return Err(Error::Format(format!("unknown feature set code {b}"))),
        };
        let selected_epoch = LittleEndian::read_u32(&bytes[24..]) as usize;
        let n = 2 * dim + NUM_CLASSES + NUM_CLASSES * (dim + 1);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * n {
            return Err(Error::Corruption {
                offset: (HEADER_LEN + body.len().min(8 * n)) as u64,
                reason: format!("expected {} body bytes, found {}", 8 * n, body.len()),
            });
        }
        let mut vals = vec![0.0; n];
        LittleEndian::read_f64_into(body, &mut vals);
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("checkpoint contains non-finite values".into()));
        }
        let mut it = vals.into_iter();
        let mean: Vec<f64> = it.by_ref().take(dim).collect();
        let scale: Vec<f64> = it.by_ref().take(dim).collect();
        let mut class_weights = [0.0; NUM_CLASSES];
        for w in class_weights.iter_mut() {
            *w = it.next().unwrap();
        }
        Ok(BaselineModel {
            spec,
            dim,
            mean,
            scale,
            class_weights,
            weights: it.collect(),
            selected_epoch,
            val_history: Vec::new(),
            loss_history: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl TrainedModel for BaselineModel {
    fn predict(&self, features: &FeatureMatrix) -> Result<PredictionSet> {
        BaselineModel::predict(self, features)
    }

    fn checkpoint(&self) -> Vec<u8> {
        self.to_bytes()
    }

    fn selected_epoch(&self) -> Option<usize> {
        Some(self.selected_epoch)
    }

    fn validation_miou(&self) -> Option<f64> {
        self.val_history.get(self.selected_epoch).copied()
    }
}

fn standardize(row: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    row.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn logits(weights: &[f64], x: &[f64]) -> [f64; NUM_CLASSES] {
    let stride = x.len() + 1;
    let mut z = [0.0; NUM_CLASSES];
    for (c, zc) in z.iter_mut().enumerate() {
        let w = &weights[c * stride..(c + 1) * stride];
        *zc = w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()];
    }
    z
}

/// Numerically stable softmax; shifting every logit by a constant leaves it unchanged.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Inverse-frequency weights `N / (present · n_c)`; absent classes get 0.
pub fn inverse_frequency_weights(targets: &[usize]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for &t in targets {
        counts[t] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    let mut w = [0.0; NUM_CLASSES];
    for (wc, &n) in w.iter_mut().zip(&counts) {
        if n > 0 {
            *wc = targets.len() as f64 / (present * n) as f64;
        }
    }
    w
}

/// Class-weighted mean cross-entropy over `rows` and its gradient with
/// respect to `weights` (`K × (D+1)`, bias last). `x` is already standardized.
pub fn loss_and_gradient(
    weights: &[f64],
    x: &FeatureMatrix,
    targets: &[usize],
    rows: &[usize],
    class_weights: &[f64; NUM_CLASSES],
) -> (f64, Vec<f64>) {
    let d = x.dim;
    let stride = d + 1;
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let mut norm = 0.0;
    for &i in rows {
        let xi = x.row(i);
        let y = targets[i];
        let w = class_weights[y];
        if w == 0.0 {
            continue;
        }
        let z = logits(weights, xi);
        let p = softmax(&z);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += w * (lse - z[y]);
        norm += w;
        for c in 0..NUM_CLASSES {
            let g = w * (p[c] - if c == y { 1.0 } else { 0.0 });
            let gc = &mut grad[c * stride..(c + 1) * stride];
            for (gj, xj) in gc[..d].iter_mut().zip(xi) {
                *gj += g * xj;
            }
            gc[d] += g;
        }
    }
    if norm > 0.0 {
        loss /= norm;
        grad.iter_mut().for_each(|g| *g /= norm);
    }
    (loss, grad)
}

fn standardization(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows.max(1) as f64;
    let mut mean = vec![0.0; x.dim];
    for i in 0..x.rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.dim];
    for i in 0..x.rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardized(x: &FeatureMatrix, mean: &[f64], scale: &[f64]) -> FeatureMatrix {
    let data = (0..x.rows).flat_map(|i| standardize(x.row(i), mean, scale)).collect();
    FeatureMatrix::new(x.rows, x.dim, data)
}

fn val_miou(weights: &[f64], x: &FeatureMatrix, targets: &[usize]) -> f64 {
    let pred: Vec<usize> = (0..x.rows)
        .into_par_iter()
        .map(|i| crate::prediction::argmax(&logits(weights, x.row(i))))
        .collect();
    confusion_indices(targets, &pred, NUM_CLASSES)
        .and_then(|m| iou_miou(&m))
        .map(|(_, miou)| miou)
        .unwrap_or(0.0)
}

/// Mini-batch gradient descent from zero weights. Every epoch, including
/// the untrained state, is a checkpoint candidate; the one with the highest
/// validation mIoU is returned (earliest on ties, last epoch without validation).
pub fn train_baseline(
    data: &TrainingData<'_>,
    config: &TrainConfig,
    val: Option<&TrainingData<'_>>,
    seed: u64,
) -> Result<BaselineModel> {
    config.validate()?;
    let targets = data.targets()?;
    let mut present = [false; NUM_CLASSES];
    for &t in &targets {
        present[t] = true;
    }
    let n_present = present.iter().filter(|&&p| p).count();
    if n_present < 2 {
        return Err(Error::Degenerate(format!(
            "training needs at least two classes, found {n_present}"
        )));
    }
    let dim = data.features.dim;
    let val = match val {
        Some(v) => {
            if v.features.dim != dim {
                return Err(Error::Shape { expected: dim, found: v.features.dim });
            }
            Some((v.features, v.targets()?))
        }
        None => None,
    };

    let (mean, scale) = standardization(data.features);
    let x = standardized(data.features, &mean, &scale);
    let val_x = val.as_ref().map(|(f, t)| (standardized(f, &mean, &scale), t));
    let class_weights = if config.class_weights {
        inverse_frequency_weights(&targets)
    } else {
        [1.0; NUM_CLASSES]
    };

    let whole;
    let grid = match data.blocks {
        Some(g) => g,
        None => {
            whole = BlockGrid {
                cell_side: f64::INFINITY,
                origin: [0.0, 0.0],
                blocks: vec![Block {
                    id: 0,
                    row: 0,
                    col: 0,
                    min: [0.0, 0.0],
                    max: [0.0, 0.0],
                    indices: (0..x.rows).collect(),
                    point_count: x.rows,
                }],
            };
            &whole
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; NUM_CLASSES * (dim + 1)];
    let mut best = (f64::NEG_INFINITY, 0usize, weights.clone());
    let mut val_history = Vec::with_capacity(config.epochs + 1);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut consider = |epoch: usize, w: &[f64], hist: &mut Vec<f64>| {
        if let Some((vx, vt)) = &val_x {
            let score = val_miou(w, vx, vt);
            hist.push(score);
            if score > best.0 {
                best = (score, epoch, w.to_vec());
            }
        } else {
            best = (f64::NAN, epoch, w.to_vec());
        }
    };
    consider(0, &weights, &mut val_history);
    for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for batch in sample_batches(grid, config.max_points, config.batch_size, &mut rng) {
            let rows: Vec<usize> = batch.concat();
            if rows.is_empty() {
                continue;
            }
            let (loss, grad) = loss_and_gradient(&weights, &x, &targets, &rows, &class_weights);
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
            epoch_loss += loss;
            steps += 1;
        }
        loss_history.push(epoch_loss / steps.max(1) as f64);
        consider(epoch, &weights, &mut val_history);
    }
    let (_, selected_epoch, weights) = best;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Degenerate("training diverged to non-finite weights".into()));
    }
    Ok(BaselineModel {
        spec: None,
        dim,
        mean,
        scale,
        class_weights,
        weights,
        selected_epoch,
        val_history,
        loss_history,
    })
}
