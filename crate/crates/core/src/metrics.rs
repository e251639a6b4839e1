//! Confusion matrices, IoU/mIoU, macro F1 and report rendering.
//!
//! A class whose row and column are both empty (no ground truth, never
//! predicted) is excluded from the means. A class present in the ground
//! truth but never predicted scores 0. F1 is macro-averaged under the same
//! inclusion rule.
//!
//! CSV schema: `key,Soil,Terrain,Vegetation,Building,Street Elements,Water,mIoU,F1`
//! with fractions in `[0, 1]` at full precision and an empty field for an
//! excluded class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, NUM_CLASSES};

const PAR_CHUNK: usize = 1 << 16;

/// `k × k` counts, rows are ground truth and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Validation("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { k, counts: rows.concat() })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.k + pred] += 1;
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k).filter(|&g| g != c).map(|g| self.get(g, c)).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }

    fn merge(mut self, other: ConfusionMatrix) -> ConfusionMatrix {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }
}

/// Confusion over class indices `0..k`.
pub fn confusion_indices(gt: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if gt.len() != pred.len() {
        return Err(Error::Alignment { expected: gt.len(), found: pred.len() });
    }
    if let Some(&bad) = gt.iter().chain(pred).find(|&&c| c >= k) {
        return Err(Error::Validation(format!("class index {bad} outside 0..{k}")));
    }
    Ok(gt
        .par_chunks(PAR_CHUNK)
        .zip(pred.par_chunks(PAR_CHUNK))
        .map(|(g, p)| {
            let mut m = ConfusionMatrix::new(k);
            for (&a, &b) in g.iter().zip(p) {
                m.add(a, b);
            }
            m
        })
        .reduce(|| ConfusionMatrix::new(k), ConfusionMatrix::merge))
}

/// 6 × 6 confusion over the semantic classes. Unassigned must already be masked.
pub fn confusion(gt: &[ClassId], pred: &[ClassId]) -> Result<ConfusionMatrix> {
    if gt.len() != pred.len() {
        return Err(Error::Alignment { expected: gt.len(), found: pred.len() });
    }
    let to_idx = |labels: &[ClassId]| -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|c| c.semantic_index().ok_or(Error::ClassDomain(*c)))
            .collect()
    };
    confusion_indices(&to_idx(gt)?, &to_idx(pred)?, NUM_CLASSES)
}

/// Per-class scores (None for excluded classes) and their mean.
pub fn iou_miou(m: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    per_class(m, |tp, fp, fn_| tp / (tp + fp + fn_))
}

pub fn f1(m: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    per_class(m, |tp, fp, fn_| 2.0 * tp / (2.0 * tp + fp + fn_))
}

fn per_class(m: &ConfusionMatrix, score: impl Fn(f64, f64, f64) -> f64) -> Result<(Vec<Option<f64>>, f64)> {
    let scores: Vec<Option<f64>> = (0..m.size())
        .map(|c| {
            let (tp, fp, fn_) = (m.tp(c), m.fp(c), m.fn_(c));
            (tp + fp + fn_ > 0).then(|| score(tp as f64, fp as f64, fn_ as f64))
        })
        .collect();
    let included: Vec<f64> = scores.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::UndefinedMetric("no class present in ground truth or predictions".into()));
    }
    Ok((scores, included.iter().sum::<f64>() / included.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub per_class_f1: Vec<Option<f64>>,
    pub macro_f1: f64,
    pub evaluated: u64,
    pub excluded: u64,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix, excluded: u64) -> Result<Self> {
        let (per_class_iou, miou) = iou_miou(m)?;
        let (per_class_f1, macro_f1) = f1(m)?;
        Ok(MetricsReport {
            confusion: m.rows(),
            per_class_iou,
            miou,
            per_class_f1,
            macro_f1,
            evaluated: m.total(),
            excluded,
        })
    }

    pub fn iou(&self, class: ClassId) -> Option<f64> {
        class.semantic_index().and_then(|i| self.per_class_iou[i])
    }
}

/// Drops points whose ground truth is Unassigned, then scores the rest.
pub fn evaluate(gt: &[ClassId], pred: &[ClassId]) -> Result<MetricsReport> {
    if gt.len() != pred.len() {
        return Err(Error::Alignment { expected: gt.len(), found: pred.len() });
    }
    let (g, p): (Vec<ClassId>, Vec<ClassId>) = gt
        .iter()
        .zip(pred)
        .filter(|(g, _)| **g != ClassId::Unassigned)
        .map(|(g, p)| (*g, *p))
        .unzip();
    let m = confusion(&g, &p)?;
    MetricsReport::from_confusion(&m, (gt.len() - g.len()) as u64)
}

pub fn report_columns() -> Vec<&'static str> {
    let mut cols: Vec<&str> = ClassId::SEMANTIC.iter().map(|c| c.name()).collect();
    cols.extend(["mIoU", "F1"]);
    cols
}

fn row_values(r: &MetricsReport) -> Vec<Option<f64>> {
    let mut v = r.per_class_iou.clone();
    v.push(Some(r.miou));
    v.push(Some(r.macro_f1));
    v
}

/// Fixed-width table in percent with two decimals.
pub fn render_text(rows: &[(String, MetricsReport)]) -> String {
    let cols = report_columns();
    let key_w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(3);
    let mut out = format!("{:<key_w$}", "run");
    for c in &cols {
        out.push_str(&format!(" {:>15}", c));
    }
    out.push('\n');
    for (key, report) in rows {
        out.push_str(&format!("{key:<key_w$}"));
        for v in row_values(report) {
            match v {
                Some(x) => out.push_str(&format!(" {:>15.2}", 100.0 * x)),
                None => out.push_str(&format!(" {:>15}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["key"];
    header.extend(report_columns());
    w.write_record(&header).expect("in-memory write");
    for (key, report) in rows {
        let mut rec = vec![key.clone()];
        rec.extend(row_values(report).into_iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn render_json(rows: &[(String, MetricsReport)]) -> String {
    let map: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(k, r)| (k.clone(), serde_json::to_value(r).expect("serializable report")))
        .collect();
    serde_json::to_string_pretty(&map).expect("serializable report")
}

/// One parsed CSV row: key and the eight score columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub key: String,
    pub values: Vec<Option<f64>>,
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let expected = report_columns().len() + 1;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: line + 2, reason: e.to_string() })?;
        if rec.len() != expected {
            return Err(Error::Parse { line: line + 2, reason: format!("expected {expected} fields") });
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|e| Error::Parse { line: line + 2, reason: e.to_string() })
                }
            })
            .collect::<Result<_>>()?;
        rows.push(ReportRow { key: rec[0].to_string(), values });
    }
    Ok(rows)
}
