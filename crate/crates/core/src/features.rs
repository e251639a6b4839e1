//! Per-point feature matrices and block batch sampling.
//!
//! Column order is fixed: `x, y, z, R, G, B`, then `intensity` for the
//! extended set, then the engineered block `height, linearity, planarity`
//! when enabled. Coordinates are recentered and scaled into the unit ball,
//! colors and intensity divided by 65535. The engineered columns are extra
//! signal for the linear baseline and stay in meters / unitless ratios.

use std::collections::HashMap;
use std::fmt;
use std::num::NonZero;
use std::str::FromStr;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::recenter_normalize;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::tiling::BlockGrid;

pub const HEIGHT_CELL: f64 = 2.0;
/// Half-width, in cells, of the window searched for the local minimum.
pub const HEIGHT_WINDOW: i64 = 5;
pub const NEIGHBOURS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// x, y, z, R, G, B
    Basic,
    /// x, y, z, R, G, B, intensity
    Extended,
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(FeatureSet::Basic),
            "extended" => Ok(FeatureSet::Extended),
            _ => Err(Error::Argument(format!("unknown feature set `{s}`"))),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Basic => "basic",
            FeatureSet::Extended => "extended",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub set: FeatureSet,
    #[serde(default)]
    pub engineered: bool,
}

impl FeatureSpec {
    pub fn new(set: FeatureSet, engineered: bool) -> Self {
        FeatureSpec { set, engineered }
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut names = vec!["x", "y", "z", "red", "green", "blue"];
        if self.set == FeatureSet::Extended {
            names.push("intensity");
        }
        if self.engineered {
            names.extend(["height_above_min", "linearity", "planarity"]);
        }
        names
    }

    pub fn dim(&self) -> usize {
        self.names().len()
    }
}

/// Row-major `rows × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "feature data does not match its shape");
        FeatureMatrix { rows, dim, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(indices.len(), self.dim, data)
    }
}

pub fn extract_features(cloud: &PointCloud, spec: FeatureSpec) -> Result<FeatureMatrix> {
    let intensity = match spec.set {
        FeatureSet::Extended => Some(
            cloud
                .intensity
                .as_ref()
                .ok_or(Error::MissingColumn("intensity"))?,
        ),
        FeatureSet::Basic => None,
    };
    let n = cloud.len();
    let (coords, _) = recenter_normalize(&cloud.coords());
    let engineered = spec.engineered.then(|| {
        let heights = height_above_local_min(cloud, HEIGHT_CELL, HEIGHT_WINDOW);
        let shape = eigen_features(cloud, NEIGHBOURS);
        (heights, shape)
    });

    let dim = spec.dim();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        data.extend_from_slice(coords[i].as_slice());
        data.push(cloud.red[i] as f64 / 65535.0);
        data.push(cloud.green[i] as f64 / 65535.0);
        data.push(cloud.blue[i] as f64 / 65535.0);
        if let Some(col) = intensity {
            data.push(col[i] as f64 / 65535.0);
        }
        if let Some((heights, shape)) = &engineered {
            data.push(heights[i]);
            data.extend_from_slice(&shape[i]);
        }
    }
    Ok(FeatureMatrix::new(n, dim, data))
}

/// Height of each point above the lowest point in the surrounding square
/// window of `2 * window + 1` cells of side `cell`.
pub fn height_above_local_min(cloud: &PointCloud, cell: f64, window: i64) -> Vec<f64> {
    let Some((lo, _)) = cloud.bounds() else {
        return Vec::new();
    };
    let key = |i: usize| {
        (
            ((cloud.x[i] - lo.x) / cell).floor() as i64,
            ((cloud.y[i] - lo.y) / cell).floor() as i64,
        )
    };
    let mut cell_min: HashMap<(i64, i64), f64> = HashMap::new();
    for i in 0..cloud.len() {
        let e = cell_min.entry(key(i)).or_insert(f64::INFINITY);
        *e = e.min(cloud.z[i]);
    }
    let mut window_min: HashMap<(i64, i64), f64> = HashMap::with_capacity(cell_min.len());
    for &(cx, cy) in cell_min.keys() {
        let mut m = f64::INFINITY;
        for dx in -window..=window {
            for dy in -window..=window {
                if let Some(v) = cell_min.get(&(cx + dx, cy + dy)) {
                    m = m.min(*v);
                }
            }
        }
        window_min.insert((cx, cy), m);
    }
    (0..cloud.len())
        .map(|i| cloud.z[i] - window_min[&key(i)])
        .collect()
}

/// Linearity and planarity from the covariance of each point's `k` nearest
/// neighbours (itself included). Both are zero when fewer than three points
/// exist or the neighbourhood is degenerate.
pub fn eigen_features(cloud: &PointCloud, k: usize) -> Vec<[f64; 2]> {
    let n = cloud.len();
    if n < 3 || k < 3 {
        return vec![[0.0; 2]; n];
    }
    let points: Vec<[f64; 3]> = (0..n).map(|i| [cloud.x[i], cloud.y[i], cloud.z[i]]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&points).expect("non-empty");
    let k = NonZero::new(k.min(n)).expect("k >= 3");
    (0..n)
        .into_par_iter()
        .map(|i| {
            let found = tree.query(&points[i]).nearest_n::<SquaredEuclidean<f64>>(k).execute();
            let nbrs: Vec<Vector3<f64>> = found
                .iter()
                .map(|r| Vector3::from(points[r.item as usize]))
                .collect();
            shape_ratios(&nbrs)
        })
        .collect()
}

fn shape_ratios(nbrs: &[Vector3<f64>]) -> [f64; 2] {
    let mean = nbrs.iter().sum::<Vector3<f64>>() / nbrs.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in nbrs {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= nbrs.len() as f64;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let l1 = ev[0];
    if l1 <= 1e-12 {
        return [0.0, 0.0];
    }
    [(l1 - ev[1]) / l1, (ev[1] - ev[2].max(0.0)) / l1]
}

/// One training step's worth of index sets; each element comes from a single block.
pub type Batch = Vec<Vec<usize>>;

/// Draws one element per block (a uniform subset of at most `max_points`
/// indices, or the whole block), shuffles the elements and groups them into
/// batches of `batch_size`.
pub fn sample_batches(
    grid: &BlockGrid,
    max_points: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Vec<Batch> {
    let max_points = max_points.max(1);
    let batch_size = batch_size.max(1);
    let mut elements: Vec<Vec<usize>> = grid
        .blocks
        .iter()
        .map(|b| {
            if b.indices.len() <= max_points {
                b.indices.clone()
            } else {
                index::sample(rng, b.indices.len(), max_points)
                    .into_iter()
                    .map(|k| b.indices[k])
                    .collect()
            }
        })
        .collect();
    elements.shuffle(rng);
    elements.chunks(batch_size).map(<[_]>::to_vec).collect()
}
