//! Per-point class probabilities and the `.pred` exchange file.
//!
//! File layout, all little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 8    | magic `USEGPRED`                       |
//! | 8      | 4    | format version (`1`)                   |
//! | 12     | 4    | class count `K`                        |
//! | 16     | 8    | point count `N`                        |
//! | 24     | 8    | reserved, zero                         |
//! | 32     | 8·N·K| `f64` probabilities, one column per class |
//!
//! Columns are stored one after another (class 0 for all points, then class
//! 1, ...). For six-class sets the column order is Soil, Terrain, Vegetation,
//! Building, Street Elements, Water.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE, WriteBytesExt};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, NUM_CLASSES};

pub const PRED_MAGIC: &[u8; 8] = b"USEGPRED";
pub const PRED_VERSION: u32 = 1;
pub const PRED_HEADER_LEN: usize = 32;
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// An `N × K` row-stochastic matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    num_classes: usize,
    probs: Vec<f64>,
}

impl PredictionSet {
    /// Validates every row: entries in [0, 1] and sum within 1e-6 of one.
    pub fn new(num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Argument("a prediction set needs at least one class".into()));
        }
        if probs.len() % num_classes != 0 {
            return Err(Error::Validation(format!(
                "{} values do not form rows of {num_classes}",
                probs.len()
            )));
        }
        let set = PredictionSet { num_classes, probs };
        set.validate()?;
        Ok(set)
    }

    pub fn from_rows(rows: &[[f64; NUM_CLASSES]]) -> Result<Self> {
        PredictionSet::new(NUM_CLASSES, rows.iter().flatten().copied().collect())
    }

    /// One-hot rows for semantic labels.
    pub fn one_hot(labels: &[ClassId]) -> Result<Self> {
        let mut probs = vec![0.0; labels.len() * NUM_CLASSES];
        for (i, label) in labels.iter().enumerate() {
            let col = label.semantic_index().ok_or(Error::ClassDomain(*label))?;
            probs[i * NUM_CLASSES + col] = 1.0;
        }
        PredictionSet::new(NUM_CLASSES, probs)
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.probs.chunks_exact(self.num_classes).enumerate() {
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Validation(format!("row {i}: probability {p} is outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Validation(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Column of the most probable class for row `i`; ties go to the lowest column.
    pub fn argmax_index(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    /// Most probable class per point. Only meaningful for six-class sets.
    pub fn argmax_classes(&self) -> Vec<ClassId> {
        debug_assert_eq!(self.num_classes, NUM_CLASSES);
        self.rows()
            .map(|r| ClassId::from_semantic_index(argmax(r)).expect("six-class row"))
            .collect()
    }

    /// Maximum probability per point.
    pub fn confidences(&self) -> Vec<f64> {
        self.rows().map(|r| r[argmax(r)]).collect()
    }

    pub fn select(&self, indices: &[usize]) -> PredictionSet {
        let mut probs = Vec::with_capacity(indices.len() * self.num_classes);
        for &i in indices {
            probs.extend_from_slice(self.row(i));
        }
        PredictionSet {
            num_classes: self.num_classes,
            probs,
        }
    }

    /// Fails unless this set has exactly one row per point of `cloud`.
    pub fn check_aligned(&self, cloud: &PointCloud) -> Result<()> {
        if self.len() != cloud.len() {
            return Err(Error::Alignment {
                expected: cloud.len(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

pub fn write_predictions(set: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_predictions(set, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn encode_predictions(set: &PredictionSet, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(PRED_MAGIC)?;
    w.write_u32::<LE>(PRED_VERSION)?;
    w.write_u32::<LE>(set.num_classes as u32)?;
    w.write_u64::<LE>(set.len() as u64)?;
    w.write_u64::<LE>(0)?;
    let mut buf = [0u8; 8];
    for c in 0..set.num_classes {
        for row in set.rows() {
            LE::write_f64(&mut buf, row[c]);
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    decode_predictions(BufReader::new(file), Some(file_len)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Reads a prediction set, checking it against the cloud it belongs to.
pub fn read_predictions_for(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<PredictionSet> {
    let set = read_predictions(path)?;
    set.check_aligned(cloud)?;
    Ok(set)
}

pub fn decode_predictions(mut r: impl Read, total_len: Option<u64>) -> Result<PredictionSet> {
    let io = |e: std::io::Error| Error::io("<prediction stream>", e);
    let mut header = [0u8; PRED_HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| Error::Corruption {
        offset: 0,
        reason: "prediction file is shorter than its 32-byte header".into(),
    })?;
    if &header[0..8] != PRED_MAGIC {
        return Err(Error::Format("not a prediction file (bad magic)".into()));
    }
    let version = LE::read_u32(&header[8..12]);
    if version != PRED_VERSION {
        return Err(Error::Format(format!("prediction format version {version} is not supported")));
    }
    let k = LE::read_u32(&header[12..16]) as usize;
    let n = LE::read_u64(&header[16..24]) as usize;
    if k == 0 {
        return Err(Error::Format("prediction file declares zero classes".into()));
    }
    if let Some(total) = total_len {
        let body = total.saturating_sub(PRED_HEADER_LEN as u64);
        let expected = (n as u64) * (k as u64) * 8;
        if body != expected {
            return Err(Error::Alignment {
                expected: n,
                found: (body / (8 * k as u64)) as usize,
            });
        }
    }
    let mut probs = vec![0.0; n * k];
    let mut column = vec![0u8; n * 8];
    for c in 0..k {
        if let Err(e) = r.read_exact(&mut column) {
            return if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Err(Error::Alignment { expected: n, found: 0 })
            } else {
                Err(io(e))
            };
        }
        for i in 0..n {
            probs[i * k + c] = LE::read_f64(&column[i * 8..]);
        }
    }
    let mut extra = [0u8; 1];
    if total_len.is_none() && r.read(&mut extra).map_err(io)? != 0 {
        return Err(Error::Alignment { expected: n, found: n + 1 });
    }
    PredictionSet::new(k, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(set: &PredictionSet) -> PredictionSet {
        let mut buf = Vec::new();
        encode_predictions(set, &mut buf).unwrap();
        decode_predictions(&buf[..], Some(buf.len() as u64)).unwrap()
    }

    #[test]
    fn two_point_set_round_trips_exactly() {
        let set = PredictionSet::from_rows(&[
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(round_trip(&set), set);
        assert_eq!(set.argmax_classes(), vec![ClassId::Soil, ClassId::Vegetation]);
    }

    #[test]
    fn short_row_sum_is_rejected() {
        let err = PredictionSet::from_rows(&[[0.8, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = PredictionSet::from_rows(&[[1.5, -0.5, 0.0, 0.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn header_is_32_bytes_with_declared_sizes() {
        let set = PredictionSet::one_hot(&[ClassId::Water; 3]).unwrap();
        let mut buf = Vec::new();
        encode_predictions(&set, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 3 * 6 * 8);
        assert_eq!(&buf[0..8], b"USEGPRED");
        assert_eq!(LE::read_u32(&buf[12..16]), 6);
        assert_eq!(LE::read_u64(&buf[16..24]), 3);
        // Water column is last: three ones
        let water = &buf[32 + 5 * 24..];
        assert!(water.chunks(8).all(|c| LE::read_f64(c) == 1.0));
    }

    #[test]
    fn declared_count_must_match_body() {
        let set = PredictionSet::one_hot(&[ClassId::Soil, ClassId::Terrain]).unwrap();
        let mut buf = Vec::new();
        encode_predictions(&set, &mut buf).unwrap();
        LE::write_u64(&mut buf[16..24], 3);
        assert!(matches!(
            decode_predictions(&buf[..], Some(buf.len() as u64)),
            Err(Error::Alignment { expected: 3, found: 2 })
        ));
        assert!(matches!(
            decode_predictions(&buf[..], None),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn alignment_against_cloud() {
        let set = PredictionSet::one_hot(&[ClassId::Soil; 4]).unwrap();
        let cloud = PointCloud::from_xyz(vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]);
        assert!(matches!(
            set.check_aligned(&cloud),
            Err(Error::Alignment { expected: 5, found: 4 })
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_class() {
        let set = PredictionSet::from_rows(&[[0.0, 0.5, 0.0, 0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(set.argmax_classes(), vec![ClassId::Terrain]);
        assert_eq!(set.confidences(), vec![0.5]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn random_softmax_rows_round_trip(raw in proptest::collection::vec(0.001f64..10.0, 6..600)) {
                let rows = raw.len() / 6;
                let mut probs = Vec::with_capacity(rows * 6);
                for chunk in raw.chunks_exact(6) {
                    let s: f64 = chunk.iter().sum();
                    probs.extend(chunk.iter().map(|v| v / s));
                }
                let set = PredictionSet::new(6, probs).unwrap();
                let back = round_trip(&set);
                let err = set.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(err < 1e-9);
            }
        }
    }
}
