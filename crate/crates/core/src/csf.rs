//! Cloth simulation ground filter and a color/intensity hint for splitting
//! ground into natural (Soil) and artificial (Terrain) surfaces.
//!
//! The cloud is turned upside down and a grid of particles is dropped onto
//! it. Particles fall under gravity, stop where they meet the inverted
//! surface, and are tied to their four neighbours by springs whose stiffness
//! is set by `rigidness`. Once the cloth settles, points close to it are
//! ground.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::taxonomy::ClassId;

const GRAVITY: f64 = 0.2;
const DAMPING: f64 = 0.01;
/// Fraction of a spring's length removed per constraint pass.
const SPRING_STEP: f64 = 0.3;
const INITIAL_CLEARANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClothParams {
    pub grid_resolution: f64,
    pub rigidness: u8,
    pub time_step: f64,
    pub class_threshold: f64,
    pub max_iterations: usize,
    pub displacement_epsilon: f64,
}

impl Default for ClothParams {
    fn default() -> Self {
        ClothParams {
            grid_resolution: 2.0,
            rigidness: 3,
            time_step: 0.65,
            class_threshold: 0.5,
            max_iterations: 500,
            displacement_epsilon: 0.005,
        }
    }
}

impl ClothParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_resolution", self.grid_resolution),
            ("time_step", self.time_step),
            ("class_threshold", self.class_threshold),
            ("displacement_epsilon", self.displacement_epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(1..=3).contains(&self.rigidness) {
            return Err(Error::Argument(format!("rigidness must be 1, 2 or 3, got {}", self.rigidness)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Particle grid in inverted height (`-z`). Node `(col, row)` sits at
/// `origin + (col, row) * resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClothState {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub cols: usize,
    pub rows: usize,
    pub heights: Vec<f64>,
    pub movable: Vec<bool>,
    /// Highest inverted point height near each node.
    pub collision: Vec<f64>,
}

impl ClothState {
    fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    /// Bilinear cloth height (inverted) at `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin[0]) / self.resolution).clamp(0.0, (self.cols - 1) as f64);
        let fy = ((y - self.origin[1]) / self.resolution).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (fx.floor() as usize).min(self.cols - 2);
        let r0 = (fy.floor() as usize).min(self.rows - 2);
        let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
        let h = |c, r| self.heights[self.index(c, r)];
        h(c0, r0) * (1.0 - tx) * (1.0 - ty)
            + h(c0 + 1, r0) * tx * (1.0 - ty)
            + h(c0, r0 + 1) * (1.0 - tx) * ty
            + h(c0 + 1, r0 + 1) * tx * ty
    }
}

#[derive(Debug, Clone)]
pub struct CsfOutput {
    pub ground: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    pub cloth: ClothState,
}

impl CsfOutput {
    pub fn ground_count(&self) -> usize {
        self.ground.iter().filter(|g| **g).count()
    }
}

pub fn run_csf(cloud: &PointCloud, params: &ClothParams) -> Result<CsfOutput> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::Argument("cannot filter an empty cloud".into()));
    }
    if let Some(i) = (0..cloud.len()).find(|&i| !cloud.point(i).iter().all(|v| v.is_finite())) {
        return Err(Error::Argument(format!("point {i} has a non-finite coordinate")));
    }

    let mut cloth = simulate(cloud, params);
    let ground = classify(cloud, &cloth.state, params.class_threshold);
    if !cloth.converged {
        warn!(
            "cloth did not settle within {} iterations (last displacement {:.4} m)",
            params.max_iterations, cloth.last_displacement
        );
    }
    Ok(CsfOutput {
        ground,
        converged: cloth.converged,
        iterations: cloth.iterations,
        cloth: std::mem::replace(&mut cloth.state, empty_state()),
    })
}

/// Ground mask for an already settled cloth.
pub fn classify(cloud: &PointCloud, cloth: &ClothState, threshold: f64) -> Vec<bool> {
    (0..cloud.len())
        .map(|i| (-cloud.z[i] - cloth.height_at(cloud.x[i], cloud.y[i])).abs() < threshold)
        .collect()
}

fn empty_state() -> ClothState {
    ClothState {
        origin: [0.0; 2],
        resolution: 1.0,
        cols: 0,
        rows: 0,
        heights: vec![],
        movable: vec![],
        collision: vec![],
    }
}

struct Simulation {
    state: ClothState,
    converged: bool,
    iterations: usize,
    last_displacement: f64,
}

fn simulate(cloud: &PointCloud, params: &ClothParams) -> Simulation {
    let res = params.grid_resolution;
    let (lo, hi) = cloud.bounds().expect("non-empty");
    let origin = [lo.x - res, lo.y - res];
    let cols = ((hi.x - lo.x) / res).ceil() as usize + 3;
    let rows = ((hi.y - lo.y) / res).ceil() as usize + 3;
    let nodes = cols * rows;

    let mut collision = vec![f64::NEG_INFINITY; nodes];
    for i in 0..cloud.len() {
        let c = (((cloud.x[i] - origin[0]) / res).round() as usize).min(cols - 1);
        let r = (((cloud.y[i] - origin[1]) / res).round() as usize).min(rows - 1);
        let k = r * cols + c;
        collision[k] = collision[k].max(-cloud.z[i]);
    }
    fill_empty_nodes(&mut collision, cols, rows);

    let top = collision.iter().copied().fold(f64::NEG_INFINITY, f64::max) + INITIAL_CLEARANCE;
    let mut state = ClothState {
        origin,
        resolution: res,
        cols,
        rows,
        heights: vec![top; nodes],
        movable: vec![true; nodes],
        collision,
    };
    let mut previous = state.heights.clone();
    let mut start = state.heights.clone();
    let drop = GRAVITY * params.time_step * params.time_step;

    let mut converged = false;
    let mut iterations = 0;
    let mut last_displacement = f64::INFINITY;
    while iterations < params.max_iterations {
        iterations += 1;
        start.copy_from_slice(&state.heights);

        for k in 0..nodes {
            if state.movable[k] {
                let h = state.heights[k];
                state.heights[k] = h + (h - previous[k]) * (1.0 - DAMPING) - drop;
                previous[k] = h;
            }
        }

        for _ in 0..params.rigidness {
            for r in 0..rows {
                for c in 0..cols {
                    let a = r * cols + c;
                    if c + 1 < cols {
                        relax(&mut state, a, a + 1);
                    }
                    if r + 1 < rows {
                        relax(&mut state, a, a + cols);
                    }
                }
            }
        }

        for k in 0..nodes {
            if state.movable[k] && state.heights[k] <= state.collision[k] {
                state.heights[k] = state.collision[k];
                previous[k] = state.collision[k];
                state.movable[k] = false;
            }
        }

        last_displacement = state
            .heights
            .iter()
            .zip(&start)
            .map(|(h, s)| (h - s).abs())
            .fold(0.0, f64::max);
        if last_displacement < params.displacement_epsilon {
            converged = true;
            break;
        }
    }

    Simulation {
        state,
        converged,
        iterations,
        last_displacement,
    }
}

fn relax(state: &mut ClothState, a: usize, b: usize) {
    let d = state.heights[b] - state.heights[a];
    match (state.movable[a], state.movable[b]) {
        (true, true) => {
            state.heights[a] += SPRING_STEP * d;
            state.heights[b] -= SPRING_STEP * d;
        }
        (true, false) => state.heights[a] += SPRING_STEP * d,
        (false, true) => state.heights[b] -= SPRING_STEP * d,
        (false, false) => {}
    }
}

/// Gives nodes without points the highest height among already filled
/// 4-neighbours, growing outwards one ring at a time.
fn fill_empty_nodes(values: &mut [f64], cols: usize, rows: usize) {
    let mut frontier: Vec<usize> = (0..values.len()).filter(|&k| values[k].is_finite()).collect();
    while !frontier.is_empty() {
        let mut next: Vec<usize> = Vec::new();
        let mut incoming: std::collections::BTreeMap<usize, f64> = Default::default();
        for &k in &frontier {
            let (c, r) = (k % cols, k / cols);
            let mut visit = |n: usize| {
                if !values[n].is_finite() {
                    let e = incoming.entry(n).or_insert(f64::NEG_INFINITY);
                    *e = e.max(values[k]);
                }
            };
            if c > 0 {
                visit(k - 1);
            }
            if c + 1 < cols {
                visit(k + 1);
            }
            if r > 0 {
                visit(k - cols);
            }
            if r + 1 < rows {
                visit(k + cols);
            }
        }
        for (n, v) in incoming {
            values[n] = v;
            next.push(n);
        }
        frontier = next;
    }
}

/// Thresholds for the Soil/Terrain hint. Colors are compared as chromatic
/// coordinates (each channel over the channel sum); intensity as a fraction of
/// the 16-bit range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTypeRule {
    pub excess_green_threshold: f64,
    pub intensity_threshold: Option<f64>,
}

impl Default for GroundTypeRule {
    fn default() -> Self {
        GroundTypeRule {
            excess_green_threshold: 0.1,
            intensity_threshold: Some(0.05),
        }
    }
}

/// Excess green `2g - r - b` over chromatic coordinates.
pub fn excess_green(r: f64, g: f64, b: f64) -> f64 {
    let sum = r + g + b;
    if sum <= 0.0 {
        return 0.0;
    }
    (2.0 * g - r - b) / sum
}

/// Advisory Soil/Terrain split of ground points. Nothing here becomes a
/// label until [`GroundTypeSuggestion::confirm`] is called.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTypeSuggestion {
    /// `None` for non-ground points.
    suggestions: Vec<Option<ClassId>>,
    pub used_intensity: bool,
}

impl GroundTypeSuggestion {
    pub fn suggestions(&self) -> &[Option<ClassId>] {
        &self.suggestions
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.suggestions.iter().filter(|s| **s == Some(class)).count()
    }

    /// Writes the suggestions into the cloud's labels, leaving non-ground
    /// points as they were (Unassigned if the cloud had no labels).
    pub fn confirm(self, cloud: &mut PointCloud) -> Result<()> {
        if self.suggestions.len() != cloud.len() {
            return Err(Error::Alignment {
                expected: cloud.len(),
                found: self.suggestions.len(),
            });
        }
        let labels = cloud
            .labels
            .get_or_insert_with(|| vec![ClassId::Unassigned; self.suggestions.len()]);
        for (label, s) in labels.iter_mut().zip(self.suggestions) {
            if let Some(class) = s {
                *label = class;
            }
        }
        Ok(())
    }
}

pub fn suggest_ground_type(
    cloud: &PointCloud,
    ground: &[bool],
    rule: &GroundTypeRule,
) -> Result<GroundTypeSuggestion> {
    if ground.len() != cloud.len() {
        return Err(Error::Alignment {
            expected: cloud.len(),
            found: ground.len(),
        });
    }
    let intensity = match (&cloud.intensity, rule.intensity_threshold) {
        (Some(col), Some(t)) => Some((col, t)),
        (None, Some(_)) => {
            warn!("cloud has no intensity column, suggesting ground types from color only");
            None
        }
        _ => None,
    };
    let colors = cloud.colors_unit();
    let suggestions = (0..cloud.len())
        .map(|i| {
            if !ground[i] {
                return None;
            }
            let [r, g, b] = colors[i];
            let green = excess_green(r, g, b) > rule.excess_green_threshold;
            let dark = intensity.is_some_and(|(col, t)| (col[i] as f64 / 65535.0) < t);
            Some(if green || dark { ClassId::Soil } else { ClassId::Terrain })
        })
        .collect();
    Ok(GroundTypeSuggestion {
        suggestions,
        used_intensity: intensity.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(n_side: usize, extent: f64, slope_deg: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tan = slope_deg.to_radians().tan();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut z = Vec::new();
        for _ in 0..n_side * n_side {
            let px = rng.random_range(0.0..extent);
            let py = rng.random_range(0.0..extent);
            x.push(px);
            y.push(py);
            z.push(px * tan);
        }
        PointCloud::from_xyz(x, y, z)
    }

    #[test]
    fn flat_plane_is_all_ground() {
        let cloud = plane(100, 100.0, 0.0, 1);
        let out = run_csf(&cloud, &ClothParams::default()).unwrap();
        assert_eq!(out.ground_count(), cloud.len());
        assert!(out.converged);
    }

    #[test]
    fn cloth_never_sinks_below_collision_surface() {
        let cloud = plane(60, 80.0, 10.0, 2);
        let out = run_csf(&cloud, &ClothParams::default()).unwrap();
        let s = &out.cloth;
        for k in 0..s.heights.len() {
            assert!(s.heights[k] >= s.collision[k] - 1e-12);
        }
    }

    #[test]
    fn threshold_monotone() {
        let mut cloud = plane(50, 60.0, 0.0, 3);
        for i in 0..cloud.len() {
            if i % 7 == 0 {
                cloud.z[i] += (i % 13) as f64 * 0.2;
            }
        }
        let params = ClothParams::default();
        let out = run_csf(&cloud, &params).unwrap();
        let mut last = 0;
        for t in [0.1, 0.3, 0.5, 1.0, 2.0, 5.0] {
            let count = classify(&cloud, &out.cloth, t).iter().filter(|g| **g).count();
            assert!(count >= last);
            last = count;
        }
    }

    #[test]
    fn translation_does_not_change_mask() {
        let mut cloud = plane(50, 50.0, 5.0, 4);
        for i in (0..cloud.len()).step_by(5) {
            cloud.z[i] += 3.0;
        }
        let params = ClothParams::default();
        let a = run_csf(&cloud, &params).unwrap().ground;
        for i in 0..cloud.len() {
            cloud.x[i] += 1024.0;
            cloud.y[i] -= 512.0;
        }
        let b = run_csf(&cloud, &params).unwrap().ground;
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs() {
        let empty = PointCloud::default();
        assert!(matches!(run_csf(&empty, &ClothParams::default()), Err(Error::Argument(_))));
        let cloud = plane(3, 1.0, 0.0, 0);
        let bad = ClothParams { rigidness: 4, ..Default::default() };
        assert!(run_csf(&cloud, &bad).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let cloud = plane(20, 40.0, 0.0, 5);
        let params = ClothParams { max_iterations: 2, ..Default::default() };
        let out = run_csf(&cloud, &params).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    fn colored(rgb: [u16; 3], intensity: Option<u16>) -> PointCloud {
        let mut c = PointCloud::from_xyz(vec![0.0], vec![0.0], vec![0.0]);
        c.red = vec![rgb[0]];
        c.green = vec![rgb[1]];
        c.blue = vec![rgb[2]];
        c.intensity = intensity.map(|v| vec![v]);
        c
    }

    #[test]
    fn green_is_soil_gray_is_terrain() {
        let rule = GroundTypeRule::default();
        let s = suggest_ground_type(&colored([0, 65535, 0], Some(60000)), &[true], &rule).unwrap();
        assert_eq!(s.suggestions(), &[Some(ClassId::Soil)]);
        let s = suggest_ground_type(&colored([32768; 3], Some(60000)), &[true], &rule).unwrap();
        assert_eq!(s.suggestions(), &[Some(ClassId::Terrain)]);
        assert!(s.used_intensity);
        let s = suggest_ground_type(&colored([32768; 3], Some(100)), &[true], &rule).unwrap();
        assert_eq!(s.suggestions(), &[Some(ClassId::Soil)]);
        let s = suggest_ground_type(&colored([32768; 3], Some(100)), &[false], &rule).unwrap();
        assert_eq!(s.suggestions(), &[None]);
    }

    #[test]
    fn missing_intensity_falls_back_to_color() {
        let s = suggest_ground_type(&colored([32768; 3], None), &[true], &GroundTypeRule::default()).unwrap();
        assert!(!s.used_intensity);
        assert_eq!(s.suggestions(), &[Some(ClassId::Terrain)]);
    }

    #[test]
    fn lawn_and_asphalt_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 5000;
        let mut cloud = PointCloud::from_xyz(vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut planted = Vec::new();
        let mut intensity = Vec::new();
        for i in 0..n {
            let lawn = rng.random_bool(0.4);
            let jitter = |rng: &mut ChaCha8Rng, base: f64| ((base + rng.random_range(-0.06..0.06)).clamp(0.0, 1.0) * 65535.0) as u16;
            let (r, g, b, inten) = if lawn {
                (jitter(&mut rng, 0.30), jitter(&mut rng, 0.50), jitter(&mut rng, 0.20), rng.random_range(20000..50000))
            } else {
                (jitter(&mut rng, 0.40), jitter(&mut rng, 0.40), jitter(&mut rng, 0.42), rng.random_range(8000..30000))
            };
            cloud.red[i] = r;
            cloud.green[i] = g;
            cloud.blue[i] = b;
            intensity.push(inten);
            planted.push(if lawn { ClassId::Soil } else { ClassId::Terrain });
        }
        cloud.intensity = Some(intensity);
        let s = suggest_ground_type(&cloud, &vec![true; n], &GroundTypeRule::default()).unwrap();
        let agree = s
            .suggestions()
            .iter()
            .zip(&planted)
            .filter(|(s, p)| **s == Some(**p))
            .count();
        assert!(agree as f64 / n as f64 >= 0.95, "{agree}/{n}");

        s.confirm(&mut cloud).unwrap();
        assert_eq!(cloud.labels.as_ref().unwrap().len(), n);
    }
}
