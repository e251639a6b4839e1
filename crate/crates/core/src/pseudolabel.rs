//! Per-class confidence thresholds, manual overrides and pseudo-label filtering.
//!
//! The threshold of class `c` is the mean confidence of the points whose
//! argmax is `c`. It is evaluated twice, once grouped by distinct
//! confidence values and once as a plain mean, and the two must agree to
//! within `1e-12`. A point is kept only when its confidence is strictly
//! greater than the threshold of its class.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prediction::PredictionSet;
use crate::taxonomy::{ClassId, NUM_CLASSES};

pub const ROUTE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Computed,
    Manual,
    Override,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub class: ClassId,
    pub threshold: Option<f64>,
    pub predicted_points: u64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub class: ClassId,
    pub previous: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub iteration: u32,
    /// One entry per semantic class, in class order.
    pub entries: Vec<ThresholdEntry>,
    pub overrides: Vec<OverrideRecord>,
}

impl ThresholdTable {
    /// Hand-specified thresholds; unlisted classes are Absent.
    pub fn from_values(values: &BTreeMap<ClassId, f64>) -> Result<Self> {
        let mut entries = Vec::with_capacity(NUM_CLASSES);
        for class in ClassId::SEMANTIC {
            let threshold = values.get(&class).copied();
            if let Some(t) = threshold {
                check_unit(class, t)?;
            }
            entries.push(ThresholdEntry {
                class,
                threshold,
                predicted_points: 0,
                provenance: if threshold.is_some() { Provenance::Manual } else { Provenance::Absent },
            });
        }
        if let Some(c) = values.keys().find(|c| !c.is_semantic()) {
            return Err(Error::ClassDomain(*c));
        }
        Ok(ThresholdTable { iteration: 0, entries, overrides: Vec::new() })
    }

    pub fn threshold(&self, class: ClassId) -> Option<f64> {
        class.semantic_index().and_then(|i| self.entries[i].threshold)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("serializable table"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable table")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ThresholdTable =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), reason: e.to_string() })?;
        let classes: Vec<ClassId> = table.entries.iter().map(|e| e.class).collect();
        if classes != ClassId::SEMANTIC {
            return Err(Error::Validation("threshold table must list the six classes in order".into()));
        }
        for e in &table.entries {
            if let Some(t) = e.threshold {
                check_unit(e.class, t)?;
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_unit(class: ClassId, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Validation(format!("threshold {t} for {class} outside [0, 1]")))
    }
}

/// Pairwise (cascade) summation with a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `Σ u·n_u / Σ n_u` over the distinct values `u` of `confidences`.
pub fn weighted_unique_mean(confidences: &[f64]) -> Option<f64> {
    if confidences.is_empty() {
        return None;
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for run in sorted.chunk_by(|a, b| a.to_bits() == b.to_bits()) {
        terms.push(run[0] * run.len() as f64);
        weights.push(run.len() as f64);
    }
    Some(pairwise_sum(&terms) / pairwise_sum(&weights))
}

pub fn plain_mean(confidences: &[f64]) -> Option<f64> {
    (!confidences.is_empty()).then(|| pairwise_sum(confidences) / confidences.len() as f64)
}

fn per_class_confidences(preds: &PredictionSet) -> Vec<Vec<f64>> {
    let mut groups = vec![Vec::new(); NUM_CLASSES];
    for row in preds.rows() {
        let c = crate::prediction::argmax(row);
        groups[c].push(row[c]);
    }
    groups
}

pub fn compute_thresholds(preds: &PredictionSet) -> Result<ThresholdTable> {
    if preds.is_empty() {
        return Err(Error::Argument("cannot compute thresholds from an empty prediction set".into()));
    }
    if preds.num_classes() != NUM_CLASSES {
        return Err(Error::Shape { expected: NUM_CLASSES, found: preds.num_classes() });
    }
    let groups = per_class_confidences(preds);
    let entries = groups
        .par_iter()
        .enumerate()
        .map(|(i, confs)| {
            let class = ClassId::from_semantic_index(i).expect("semantic index");
            let threshold = match (weighted_unique_mean(confs), plain_mean(confs)) {
                (Some(a), Some(b)) => {
                    if (a - b).abs() > ROUTE_TOLERANCE {
                        return Err(Error::Degenerate(format!(
                            "threshold routes disagree for {class}: {a} vs {b}"
                        )));
                    }
                    Some(a)
                }
                _ => None,
            };
            Ok(ThresholdEntry {
                class,
                threshold,
                predicted_points: confs.len() as u64,
                provenance: if threshold.is_some() { Provenance::Computed } else { Provenance::Absent },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdTable { iteration: 1, entries, overrides: Vec::new() })
}

/// Replaces the listed entries outright and records each change.
pub fn adjust_thresholds(table: &ThresholdTable, overrides: &BTreeMap<ClassId, f64>) -> Result<ThresholdTable> {
    let mut out = table.clone();
    for (&class, &value) in overrides {
        let i = class.semantic_index().ok_or(Error::ClassDomain(class))?;
        check_unit(class, value)?;
        let entry = &mut out.entries[i];
        out.overrides.push(OverrideRecord { class, previous: entry.threshold, value });
        entry.threshold = Some(value);
        entry.provenance = Provenance::Override;
    }
    Ok(out)
}

/// Parses `Soil=0.1,Water=0.9`.
pub fn parse_overrides(text: &str) -> Result<BTreeMap<ClassId, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("override `{part}` is not CLASS=VALUE")))?;
        let class: ClassId = k.trim().parse()?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("override value `{v}` is not a number")))?;
        if out.insert(class, value).is_some() {
            return Err(Error::Argument(format!("duplicate override for {class}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub iteration: u32,
    pub table_id: String,
    pub indices: Vec<usize>,
    pub labels: Vec<ClassId>,
    pub confidences: Vec<f64>,
    /// Classes predicted somewhere but with no point above their threshold.
    pub emptied: Vec<ClassId>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for c in &self.labels {
            counts[c.semantic_index().expect("semantic label")] += 1;
        }
        counts
    }

    /// CSV with columns `index,label,confidence`; `label` is the class code.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["index", "label", "confidence"]).map_err(|e| csv_io(path, e))?;
        for ((i, c), u) in self.indices.iter().zip(&self.labels).zip(&self.confidences) {
            w.write_record([i.to_string(), c.as_u8().to_string(), u.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_sidecar(path: &Path, iteration: u32, table_id: &str) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut set = PseudoLabelSet {
            iteration,
            table_id: table_id.to_string(),
            indices: Vec::new(),
            labels: Vec::new(),
            confidences: Vec::new(),
            emptied: Vec::new(),
        };
        for (n, rec) in r.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(|e| Error::Parse { line, reason: e.to_string() })?;
            let field = |k: usize| rec.get(k).ok_or(Error::Parse { line, reason: "missing field".into() });
            let bad = |reason: String| Error::Parse { line, reason };
            set.indices.push(field(0)?.parse().map_err(|e| bad(format!("{e}")))?);
            let code: u8 = field(1)?.parse().map_err(|e| bad(format!("{e}")))?;
            let class = ClassId::from_u8(code)
                .filter(|c| c.is_semantic())
                .ok_or_else(|| bad(format!("label {code} is not a semantic class")))?;
            set.labels.push(class);
            set.confidences.push(field(2)?.parse().map_err(|e| bad(format!("{e}")))?);
        }
        Ok(set)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { line: 0, reason: format!("{other:?}") },
    }
}

pub fn filter_pseudolabels(preds: &PredictionSet, table: &ThresholdTable) -> PseudoLabelSet {
    let mut set = PseudoLabelSet {
        iteration: table.iteration,
        table_id: table.id(),
        indices: Vec::new(),
        labels: Vec::new(),
        confidences: Vec::new(),
        emptied: Vec::new(),
    };
    let mut seen: HashMap<usize, (u64, u64)> = HashMap::new();
    for (j, row) in preds.rows().enumerate() {
        let c = crate::prediction::argmax(row);
        let u = row[c];
        let class = ClassId::from_semantic_index(c).expect("semantic index");
        let e = seen.entry(c).or_default();
        e.0 += 1;
        if let Some(t) = table.threshold(class) {
            if u > t {
                e.1 += 1;
                set.indices.push(j);
                set.labels.push(class);
                set.confidences.push(u);
            }
        }
    }
    let mut emptied: Vec<ClassId> = seen
        .into_iter()
        .filter(|(_, (predicted, kept))| *predicted > 0 && *kept == 0)
        .map(|(c, _)| ClassId::from_semantic_index(c).expect("semantic index"))
        .collect();
    emptied.sort();
    for c in &emptied {
        warn!("no {c} points exceed the class threshold; {c} contributes no pseudo-labels");
    }
    set.emptied = emptied;
    set
}
