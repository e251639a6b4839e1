//! Square block partitioning and train/val/test assignment of blocks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: usize,
    pub row: i64,
    pub col: i64,
    pub min: [f64; 2],
    pub max: [f64; 2],
    #[serde(skip)]
    pub indices: Vec<usize>,
    pub point_count: usize,
}

/// Non-empty square cells anchored at the cloud's minimum x, y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub cell_side: f64,
    pub origin: [f64; 2],
    pub blocks: Vec<Block>,
}

impl BlockGrid {
    pub fn point_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.indices.len().max(b.point_count)).collect()
    }

    pub fn total_points(&self) -> usize {
        self.point_counts().iter().sum()
    }
}

pub fn build_blocks(cloud: &PointCloud, target_area: f64) -> Result<BlockGrid> {
    if !(target_area.is_finite() && target_area > 0.0) {
        return Err(Error::Argument(format!("block area must be positive, got {target_area}")));
    }
    if cloud.is_empty() {
        return Err(Error::Argument("cannot tile an empty cloud".into()));
    }
    let side = target_area.sqrt();
    let (lo, _) = cloud.bounds().expect("non-empty");
    let origin = [lo.x, lo.y];

    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for i in 0..cloud.len() {
        let col = ((cloud.x[i] - origin[0]) / side).floor() as i64;
        let row = ((cloud.y[i] - origin[1]) / side).floor() as i64;
        cells.entry((row, col)).or_default().push(i);
    }

    let blocks = cells
        .into_iter()
        .enumerate()
        .map(|(id, ((row, col), indices))| Block {
            id,
            row,
            col,
            min: [origin[0] + col as f64 * side, origin[1] + row as f64 * side],
            max: [origin[0] + (col + 1) as f64 * side, origin[1] + (row + 1) as f64 * side],
            point_count: indices.len(),
            indices,
        })
        .collect();
    Ok(BlockGrid {
        cell_side: side,
        origin,
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Target point fractions for train, val and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTargets(pub [f64; 3]);

impl Default for SplitTargets {
    fn default() -> Self {
        SplitTargets([0.7, 0.1, 0.2])
    }
}

impl SplitTargets {
    pub fn new(fractions: [f64; 3]) -> Result<Self> {
        if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Argument(format!("split targets must be positive: {fractions:?}")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("split targets sum to {sum}, not 1")));
        }
        Ok(SplitTargets(fractions))
    }
}

impl FromStr for SplitTargets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Argument(format!("bad split targets `{s}`")))?;
        let arr: [f64; 3] = parts
            .try_into()
            .map_err(|_| Error::Argument(format!("expected three split targets, got `{s}`")))?;
        SplitTargets::new(arr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub targets: SplitTargets,
    pub seed: u64,
    /// block id → split
    pub blocks: BTreeMap<usize, Split>,
    pub point_counts: [usize; 3],
    pub fractions: [f64; 3],
}

impl SplitAssignment {
    pub fn blocks_in(&self, split: Split) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn max_deviation(&self) -> f64 {
        max_deviation(&self.fractions, &self.targets.0)
    }

    /// Point indices of every block assigned to `split`, ascending.
    pub fn indices(&self, grid: &BlockGrid, split: Split) -> Vec<usize> {
        let mut out: Vec<usize> = grid
            .blocks
            .iter()
            .filter(|b| self.blocks.get(&b.id) == Some(&split))
            .flat_map(|b| b.indices.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn max_deviation(fractions: &[f64; 3], targets: &[f64; 3]) -> f64 {
    fractions
        .iter()
        .zip(targets)
        .map(|(f, t)| (f - t).abs())
        .fold(0.0, f64::max)
}

pub fn fractions_of(counts: &[usize], assignment: &[Split]) -> ([usize; 3], [f64; 3]) {
    let mut per = [0usize; 3];
    for (c, s) in counts.iter().zip(assignment) {
        per[s.index()] += c;
    }
    let total: usize = per.iter().sum();
    let frac = per.map(|p| if total == 0 { 0.0 } else { p as f64 / total as f64 });
    (per, frac)
}

/// Optional class-balance term for [`assign_splits_balanced`].
#[derive(Debug, Clone)]
pub struct ClassBalance<'a> {
    /// Per block, points per semantic class.
    pub histograms: &'a [[usize; NUM_CLASSES]],
    pub weight: f64,
}

pub fn assign_splits(grid: &BlockGrid, targets: SplitTargets, seed: u64) -> Result<SplitAssignment> {
    let counts = grid.point_counts();
    let ids: Vec<usize> = grid.blocks.iter().map(|b| b.id).collect();
    assign_counts(&ids, &counts, targets, seed, None)
}

/// Like [`assign_splits`], also pulling each split's class mix towards the
/// global one. Only usable when the blocks are labeled.
pub fn assign_splits_balanced(
    grid: &BlockGrid,
    labels: &[ClassId],
    targets: SplitTargets,
    weight: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    let histograms: Vec<[usize; NUM_CLASSES]> = grid
        .blocks
        .iter()
        .map(|b| {
            let mut h = [0; NUM_CLASSES];
            for &i in &b.indices {
                if let Some(c) = labels[i].semantic_index() {
                    h[c] += 1;
                }
            }
            h
        })
        .collect();
    let counts = grid.point_counts();
    let ids: Vec<usize> = grid.blocks.iter().map(|b| b.id).collect();
    assign_counts(
        &ids,
        &counts,
        targets,
        seed,
        Some(ClassBalance {
            histograms: &histograms,
            weight,
        }),
    )
}

/// Largest number of blocks reassigned together in one local-search step.
pub const MAX_JOINT_MOVE: usize = 3;

/// Tries every reassignment of `k` blocks to other splits, in `order`, and
/// keeps the first one that beats `current`.
fn improve_by_moves(
    assigned: &mut [Split],
    order: &[usize],
    k: usize,
    current: f64,
    objective: &impl Fn(&[Split]) -> f64,
) -> Option<f64> {
    fn rec(
        assigned: &mut [Split],
        order: &[usize],
        start: usize,
        left: usize,
        current: f64,
        objective: &impl Fn(&[Split]) -> f64,
    ) -> Option<f64> {
        if left == 0 {
            let candidate = objective(assigned);
            return (candidate < current).then_some(candidate);
        }
        for pos in start..=order.len() - left {
            let b = order[pos];
            let original = assigned[b];
            for s in Split::ALL {
                if s == original {
                    continue;
                }
                assigned[b] = s;
                if let Some(v) = rec(assigned, order, pos + 1, left - 1, current, objective) {
                    return Some(v);
                }
            }
            assigned[b] = original;
        }
        None
    }
    rec(assigned, order, 0, k, current, objective)
}

/// Greedy largest-deficit assignment, then local search over joint moves of
/// up to [`MAX_JOINT_MOVE`] blocks until none lowers the objective.
pub fn assign_counts(
    ids: &[usize],
    counts: &[usize],
    targets: SplitTargets,
    seed: u64,
    balance: Option<ClassBalance<'_>>,
) -> Result<SplitAssignment> {
    assert_eq!(ids.len(), counts.len());
    if counts.len() < Split::ALL.len() {
        return Err(Error::Infeasible(format!(
            "{} blocks cannot fill {} splits",
            counts.len(),
            Split::ALL.len()
        )));
    }
    let total: usize = counts.iter().sum();
    let total_f = total.max(1) as f64;

    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));

    let global = balance.as_ref().map(|b| {
        let mut g = [0usize; NUM_CLASSES];
        for h in b.histograms {
            for c in 0..NUM_CLASSES {
                g[c] += h[c];
            }
        }
        g
    });
    let mix_distance = |hist: &[usize; NUM_CLASSES]| -> f64 {
        let g = global.as_ref().expect("balance enabled");
        let (hs, gs) = (hist.iter().sum::<usize>(), g.iter().sum::<usize>());
        if hs == 0 || gs == 0 {
            return 0.0;
        }
        0.5 * (0..NUM_CLASSES)
            .map(|c| (hist[c] as f64 / hs as f64 - g[c] as f64 / gs as f64).abs())
            .sum::<f64>()
    };

    let mut assigned = vec![Split::Train; counts.len()];
    let mut per = [0usize; 3];
    let mut hists = [[0usize; NUM_CLASSES]; 3];
    for &b in &order {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for s in 0..3 {
            let deficit = targets.0[s] * total_f - per[s] as f64;
            let mut score = deficit / total_f;
            if let Some(bal) = &balance {
                let mut h = hists[s];
                for c in 0..NUM_CLASSES {
                    h[c] += bal.histograms[b][c];
                }
                score -= bal.weight * mix_distance(&h);
            }
            if score > best_score {
                best = s;
                best_score = score;
            }
        }
        assigned[b] = Split::ALL[best];
        per[best] += counts[b];
        if let Some(bal) = &balance {
            for c in 0..NUM_CLASSES {
                hists[best][c] += bal.histograms[b][c];
            }
        }
    }

    let objective = |assignment: &[Split]| -> f64 {
        let (_, frac) = fractions_of(counts, assignment);
        let mut value = max_deviation(&frac, &targets.0);
        if let Some(bal) = &balance {
            let mut h = [[0usize; NUM_CLASSES]; 3];
            for (b, s) in assignment.iter().enumerate() {
                for c in 0..NUM_CLASSES {
                    h[s.index()][c] += bal.histograms[b][c];
                }
            }
            value += bal.weight * h.iter().map(&mix_distance).sum::<f64>() / 3.0;
        }
        value
    };

    let mut current = objective(&assigned);
    'improve: loop {
        for k in 1..=MAX_JOINT_MOVE.min(order.len()) {
            if let Some(better) = improve_by_moves(&mut assigned, &order, k, current, &objective) {
                current = better;
                continue 'improve;
            }
        }
        break;
    }

    let (point_counts, fractions) = fractions_of(counts, &assigned);
    Ok(SplitAssignment {
        targets,
        seed,
        blocks: ids.iter().copied().zip(assigned).collect(),
        point_counts,
        fractions,
    })
}
