#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use urbanseg::{ClassId, PointCloud, PredictionSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Builder {
    cloud: PointCloud,
    labels: Vec<ClassId>,
    intensity: Vec<u16>,
}

impl Builder {
    fn new() -> Self {
        Builder { cloud: PointCloud::from_xyz(vec![], vec![], vec![]), labels: vec![], intensity: vec![] }
    }

    fn push(&mut self, p: [f64; 3], rgb: [f64; 3], intensity: f64, label: ClassId) {
        let c = &mut self.cloud;
        c.x.push(p[0]);
        c.y.push(p[1]);
        c.z.push(p[2]);
        c.red.push((rgb[0].clamp(0.0, 1.0) * 65535.0).round() as u16);
        c.green.push((rgb[1].clamp(0.0, 1.0) * 65535.0).round() as u16);
        c.blue.push((rgb[2].clamp(0.0, 1.0) * 65535.0).round() as u16);
        c.return_number.push(1);
        c.num_returns.push(1);
        c.scan_direction.push(false);
        c.scan_angle.push(0.0);
        c.gps_time.push(0.0);
        self.intensity.push((intensity.clamp(0.0, 1.0) * 65535.0).round() as u16);
        self.labels.push(label);
    }

    fn finish(self) -> PointCloud {
        let mut c = self.cloud;
        c.intensity = Some(self.intensity);
        c.labels = Some(self.labels);
        c.validate().unwrap();
        c
    }
}

/// Ground plane (Terrain), flat-roofed boxes (Building) and spherical
/// canopies (Vegetation) on a `side × side` m square.
pub fn urban_scene(points: usize, side: f64, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.06).unwrap();
    let boxes: Vec<[f64; 5]> = (0..(side * side / 1600.0).ceil() as usize)
        .map(|_| {
            let (w, d) = (r.random_range(8.0..20.0), r.random_range(8.0..20.0));
            let x0 = r.random_range(0.0..side - w);
            let y0 = r.random_range(0.0..side - d);
            [x0, y0, x0 + w, y0 + d, r.random_range(5.0..15.0)]
        })
        .collect();
    let trees: Vec<[f64; 4]> = (0..(side * side / 900.0).ceil() as usize)
        .map(|_| {
            [
                r.random_range(0.0..side),
                r.random_range(0.0..side),
                r.random_range(2.0..4.0),
                r.random_range(4.0..9.0),
            ]
        })
        .collect();
    let in_box = |x: f64, y: f64| boxes.iter().find(|b| x >= b[0] && x < b[2] && y >= b[1] && y < b[3]);
    let mut b = Builder::new();
    let n_veg = points / 5;
    while b.labels.len() < points - n_veg {
        let (x, y) = (r.random_range(0.0..side), r.random_range(0.0..side));
        let ground_z = 0.3 * (x / 40.0).sin() + 0.2 * (y / 55.0).cos();
        match in_box(x, y) {
            Some(bx) => {
                let g = r.random_range(0.35..0.6);
                let rgb = [g + 0.08 + noise.sample(&mut r), g + noise.sample(&mut r), g - 0.04 + noise.sample(&mut r)];
                b.push([x, y, bx[4] + 0.02 * noise.sample(&mut r)], rgb, 0.55 + noise.sample(&mut r), ClassId::Building);
            }
            None => {
                let g = r.random_range(0.3..0.55);
                let rgb = [g + 0.05 + noise.sample(&mut r), g + 0.02 + noise.sample(&mut r), g - 0.05 + noise.sample(&mut r)];
                b.push([x, y, ground_z + 0.02 * noise.sample(&mut r)], rgb, 0.4 + noise.sample(&mut r), ClassId::Terrain);
            }
        }
    }
    while b.labels.len() < points {
        let t = trees[r.random_range(0..trees.len())];
        let v = [r.random_range(-1.0..1.0f64), r.random_range(-1.0..1.0f64), r.random_range(-1.0..1.0f64)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-6);
        let p = [t[0] + t[2] * v[0] / norm, t[1] + t[2] * v[1] / norm, t[3] + t[2] * v[2].abs() / norm];
        let rgb = [0.2 + noise.sample(&mut r), r.random_range(0.35..0.7), 0.15 + noise.sample(&mut r)];
        b.push(p, rgb, 0.2 + noise.sample(&mut r), ClassId::Vegetation);
    }
    b.finish()
}

/// Low flat Terrain and Water with nearly identical color and intensity,
/// plus raised Building points.
pub fn ambiguous_water_scene(points: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.08).unwrap();
    let mut b = Builder::new();
    for i in 0..points {
        let (x, y) = (r.random_range(0.0..120.0), r.random_range(0.0..120.0));
        match i % 3 {
            0 => {
                let g = 0.45 + noise.sample(&mut r);
                b.push([x, y, 0.05 * noise.sample(&mut r)], [g, g, g + 0.02], 0.4, ClassId::Terrain);
            }
            1 => {
                let g = 0.45 + noise.sample(&mut r);
                b.push([x, y, 0.05 * noise.sample(&mut r)], [g, g, g + 0.05], 0.4, ClassId::Water);
            }
            _ => {
                let g = 0.7 + noise.sample(&mut r);
                b.push([x, y, 8.0 + noise.sample(&mut r)], [g, g * 0.6, g * 0.5], 0.6, ClassId::Building);
            }
        }
    }
    b.finish()
}

/// Predictions that put `conf(label, rng)` on the true label and spread the
/// remainder evenly over the other classes.
pub fn synthetic_predictions(labels: &[ClassId], mut conf: impl FnMut(ClassId, &mut ChaCha8Rng) -> f64, seed: u64) -> PredictionSet {
    let mut r = rng(seed);
    let rows: Vec<[f64; 6]> = labels
        .iter()
        .map(|&c| {
            let u = conf(c, &mut r);
            let mut row = [(1.0 - u) / 5.0; 6];
            row[c.semantic_index().unwrap()] = u;
            row
        })
        .collect();
    PredictionSet::from_rows(&rows).unwrap()
}
