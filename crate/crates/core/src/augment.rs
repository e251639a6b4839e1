//! Geometric and chromatic augmentations.
//!
//! Every random operation is split into a draw (which consumes the caller's
//! RNG) and a deterministic apply step, so each transform can be replayed or
//! forced to specific parameters. Colors are unit-range RGB triples.
//!
//! Per-point noise uses a ChaCha stream keyed by point index, so results do
//! not depend on how the work is split across threads.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub max_rotation_deg: f64,
    pub flip_axes: Vec<Axis>,
    pub flip_prob: f64,
    pub jitter_std: f64,
    pub autocontrast_prob: f64,
    pub hue_shift_max: f64,
    pub sat_scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            max_rotation_deg: 30.0,
            flip_axes: vec![Axis::X, Axis::Y],
            flip_prob: 0.5,
            jitter_std: 0.05,
            autocontrast_prob: 0.2,
            hue_shift_max: 0.5,
            sat_scale_range: (0.5, 1.5),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("autocontrast_prob", self.autocontrast_prob)?;
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::Config(format!(
                "max_rotation_deg = {} must lie in [0, 180]",
                self.max_rotation_deg
            )));
        }
        if self.flip_axes.contains(&Axis::Z) {
            return Err(Error::Config("flipping the z axis is not allowed".into()));
        }
        if !(self.jitter_std >= 0.0) || !(self.hue_shift_max >= 0.0) {
            return Err(Error::Config("jitter_std and hue_shift_max must be non-negative".into()));
        }
        let (lo, hi) = self.sat_scale_range;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config(format!("bad sat_scale_range ({lo}, {hi})")));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AugmentationConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn centroid(coords: &[Vector3<f64>]) -> Vector3<f64> {
    if coords.is_empty() {
        return Vector3::zeros();
    }
    coords.iter().sum::<Vector3<f64>>() / coords.len() as f64
}

/// Recentering and scaling applied by [`recenter_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - Vector3::from(self.centroid)) / self.scale
    }

    pub fn invert(&self, coords: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let c = Vector3::from(self.centroid);
        coords.iter().map(|p| p * self.scale + c).collect()
    }
}

/// Moves the centroid to the origin and divides by the largest remaining
/// norm, so the output lies in the unit ball. Coincident points get scale 1.
pub fn recenter_normalize(coords: &[Vector3<f64>]) -> (Vec<Vector3<f64>>, Normalization) {
    let c = centroid(coords);
    let max_norm = coords.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    let norm = Normalization {
        centroid: c.into(),
        scale,
    };
    (coords.iter().map(|p| norm.apply(p)).collect(), norm)
}

/// Rotation angles in degrees about x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationDraw {
    pub angles_deg: [f64; 3],
}

impl RotationDraw {
    pub fn sample(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let m = cfg.max_rotation_deg;
        let mut draw = || if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        RotationDraw {
            angles_deg: [draw(), draw(), draw()],
        }
    }

    /// `Rz · Ry · Rx`: x is applied first.
    pub fn matrix(&self) -> Matrix3<f64> {
        let [ax, ay, az] = self.angles_deg.map(f64::to_radians);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), ax);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), ay);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), az);
        (rz * ry * rx).into_inner()
    }

    pub fn apply(&self, coords: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let r = self.matrix();
        coords.iter().map(|p| r * p).collect()
    }
}

pub fn random_rotation(
    coords: &[Vector3<f64>],
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Vec<Vector3<f64>> {
    RotationDraw::sample(cfg, rng).apply(coords)
}

/// Which horizontal axes get mirrored about the centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipDraw {
    pub x: bool,
    pub y: bool,
}

impl FlipDraw {
    pub fn sample(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.flip_axes.contains(&Axis::Z) {
            return Err(Error::Config("flipping the z axis is not allowed".into()));
        }
        let mut draw = |axis| cfg.flip_axes.contains(&axis) && rng.random_bool(cfg.flip_prob);
        Ok(FlipDraw {
            x: draw(Axis::X),
            y: draw(Axis::Y),
        })
    }

    pub fn apply(&self, coords: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let c = centroid(coords);
        coords
            .iter()
            .map(|p| {
                let mut q = *p;
                if self.x {
                    q.x = 2.0 * c.x - p.x;
                }
                if self.y {
                    q.y = 2.0 * c.y - p.y;
                }
                q
            })
            .collect()
    }
}

pub fn random_flip(
    coords: &[Vector3<f64>],
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Vector3<f64>>> {
    Ok(FlipDraw::sample(cfg, rng)?.apply(coords))
}

/// `None` leaves the colors untouched; `Some(beta)` blends the stretched
/// channels in with weight `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoContrastDraw {
    pub blend: Option<f64>,
}

impl AutoContrastDraw {
    pub fn sample(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let blend = rng
            .random_bool(cfg.autocontrast_prob)
            .then(|| rng.random_range(0.0..=1.0));
        AutoContrastDraw { blend }
    }

    pub fn apply(&self, colors: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let Some(beta) = self.blend else {
            return colors.to_vec();
        };
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in colors {
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        colors
            .iter()
            .map(|c| {
                let mut out = *c;
                for k in 0..3 {
                    let range = hi[k] - lo[k];
                    if range > 0.0 {
                        let stretched = (c[k] - lo[k]) / range;
                        out[k] = ((1.0 - beta) * c[k] + beta * stretched).clamp(0.0, 1.0);
                    }
                }
                out
            })
            .collect()
    }
}

pub fn chromatic_auto_contrast(
    colors: &[[f64; 3]],
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Vec<[f64; 3]> {
    AutoContrastDraw::sample(cfg, rng).apply(colors)
}

/// Gaussian color noise, clamped to [0, 1]. Point `i` always draws from
/// stream `i` of a generator keyed by `key`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterDraw {
    pub key: u64,
    pub std: f64,
}

impl JitterDraw {
    pub fn sample(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        JitterDraw {
            key: rng.random(),
            std: cfg.jitter_std,
        }
    }

    pub fn apply(&self, colors: &[[f64; 3]]) -> Vec<[f64; 3]> {
        if self.std == 0.0 {
            return colors.to_vec();
        }
        let normal = Normal::new(0.0, self.std).expect("finite std");
        colors
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.key);
                rng.set_stream(i as u64);
                c.map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
            })
            .collect()
    }
}

pub fn chromatic_jitter(colors: &[[f64; 3]], cfg: &AugmentationConfig, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    JitterDraw::sample(cfg, rng).apply(colors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueSaturationDraw {
    pub hue_offset: f64,
    pub sat_scale: f64,
}

impl HueSaturationDraw {
    pub fn sample(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hue_shift_max;
        let (lo, hi) = cfg.sat_scale_range;
        HueSaturationDraw {
            hue_offset: if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 },
            sat_scale: if hi > lo { rng.random_range(lo..=hi) } else { lo },
        }
    }

    pub fn apply(&self, colors: &[[f64; 3]]) -> Vec<[f64; 3]> {
        colors
            .par_iter()
            .map(|c| {
                let [h, s, v] = rgb_to_hsv(*c);
                let h = (h + self.hue_offset).rem_euclid(1.0);
                let s = (s * self.sat_scale).clamp(0.0, 1.0);
                hsv_to_rgb([h, s, v]).map(|x| x.clamp(0.0, 1.0))
            })
            .collect()
    }
}

pub fn hue_saturation_translation(
    colors: &[[f64; 3]],
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Vec<[f64; 3]> {
    HueSaturationDraw::sample(cfg, rng).apply(colors)
}

/// Hue, saturation and value, all in [0, 1].
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// The draws of one full augmentation pass, for logging and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub rotation: RotationDraw,
    pub flip: FlipDraw,
    pub auto_contrast: AutoContrastDraw,
    pub jitter: JitterDraw,
    pub hue_saturation: HueSaturationDraw,
}

/// Runs every augmentation in a fixed order: normalize, rotate, flip, then
/// auto-contrast, jitter and hue/saturation on the colors.
pub fn augment_all(
    coords: &[Vector3<f64>],
    colors: &[[f64; 3]],
    cfg: &AugmentationConfig,
) -> Result<(Vec<Vector3<f64>>, Vec<[f64; 3]>, AugmentationRecord)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (normalized, _) = recenter_normalize(coords);
    let rotation = RotationDraw::sample(cfg, &mut rng);
    let flip = FlipDraw::sample(cfg, &mut rng)?;
    let auto_contrast = AutoContrastDraw::sample(cfg, &mut rng);
    let jitter = JitterDraw::sample(cfg, &mut rng);
    let hue_saturation = HueSaturationDraw::sample(cfg, &mut rng);

    let coords = flip.apply(&rotation.apply(&normalized));
    let colors = hue_saturation.apply(&jitter.apply(&auto_contrast.apply(colors)));
    Ok((
        coords,
        colors,
        AugmentationRecord {
            rotation,
            flip,
            auto_contrast,
            jitter,
            hue_saturation,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| v(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..30.0)))
            .collect()
    }

    fn max_pairwise_distance_change(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                worst = worst.max(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs());
            }
        }
        worst
    }

    #[test]
    fn two_point_recenter() {
        let (out, norm) = recenter_normalize(&[v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0)]);
        assert_eq!(out, vec![v(-1.0, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
        assert_eq!(norm.scale, 1.0);
        assert_eq!(norm.centroid, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn centered_unit_cloud_is_unchanged() {
        let pts = vec![v(1.0, 0.0, 0.0), v(-1.0, 0.0, 0.0), v(0.0, 0.5, 0.0), v(0.0, -0.5, 0.0)];
        let (out, _) = recenter_normalize(&pts);
        for (a, b) in pts.iter().zip(&out) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn coincident_points_get_unit_scale() {
        let (out, norm) = recenter_normalize(&[v(3.0, 3.0, 3.0); 4]);
        assert_eq!(norm.scale, 1.0);
        assert!(out.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn normalization_inverts() {
        let pts = random_points(1000, 1);
        let (out, norm) = recenter_normalize(&pts);
        let max = out.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-9);
        assert!(centroid(&out).norm() < 1e-9);
        for (a, b) in pts.iter().zip(norm.invert(&out)) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let pts = random_points(10, 2);
        assert_eq!(RotationDraw { angles_deg: [0.0; 3] }.apply(&pts), pts);
    }

    #[test]
    fn thirty_degrees_about_z() {
        let out = RotationDraw { angles_deg: [0.0, 0.0, 30.0] }.apply(&[v(1.0, 0.0, 0.0)]);
        let expected = v(30f64.to_radians().cos(), 30f64.to_radians().sin(), 0.0);
        assert!((out[0] - expected).norm() < 1e-9);
        assert!((out[0] - v(0.8660254037844387, 0.5, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn rotation_order_is_x_then_z() {
        // x by 90 maps y to z; z by 90 then leaves z alone
        let out = RotationDraw { angles_deg: [90.0, 0.0, 90.0] }.apply(&[v(0.0, 1.0, 0.0)]);
        assert!((out[0] - v(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn random_rotation_is_rigid() {
        let pts = random_points(500, 3);
        let cfg = AugmentationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draw = RotationDraw::sample(&cfg, &mut rng);
        assert!(draw.angles_deg.iter().all(|a| a.abs() <= 30.0));
        let out = draw.apply(&pts);
        assert!(max_pairwise_distance_change(&pts, &out) < 1e-9);
        assert!((draw.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_flip_is_identity() {
        let pts = random_points(200, 5);
        let flip = FlipDraw { x: true, y: true };
        let twice = flip.apply(&flip.apply(&pts));
        for (a, b) in pts.iter().zip(&twice) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn forced_x_flip_about_centroid() {
        let out = FlipDraw { x: true, y: false }.apply(&[v(1.0, 2.0, 3.0), v(3.0, 2.0, 3.0)]);
        assert_eq!(out, vec![v(3.0, 2.0, 3.0), v(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn flip_prob_zero_and_z_untouched() {
        let pts = random_points(50, 6);
        let cfg = AugmentationConfig { flip_prob: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_flip(&pts, &cfg, &mut rng).unwrap(), pts);
        let out = FlipDraw { x: true, y: true }.apply(&pts);
        for (a, b) in pts.iter().zip(&out) {
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn z_flip_is_a_config_error() {
        let cfg = AugmentationConfig { flip_axes: vec![Axis::X, Axis::Z], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(random_flip(&[v(0.0, 0.0, 0.0)], &cfg, &mut rng), Err(Error::Config(_))));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn auto_contrast_cases() {
        let full = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.3, 0.6, 0.9]];
        assert_eq!(AutoContrastDraw { blend: Some(1.0) }.apply(&full), full);

        let out = AutoContrastDraw { blend: Some(1.0) }.apply(&[[0.25, 0.4, 0.1], [0.75, 0.4, 0.1]]);
        assert_eq!(out[0][0], 0.0);
        assert_eq!(out[1][0], 1.0);
        // constant channels pass through
        assert_eq!(out[0][1], 0.4);
        assert_eq!(out[1][1], 0.4);
        assert_eq!(AutoContrastDraw { blend: None }.apply(&full), full);
    }

    #[test]
    fn neutral_chromatic_ops_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let colors: Vec<[f64; 3]> = (0..300)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        assert_eq!(JitterDraw { key: 1, std: 0.0 }.apply(&colors), colors);
        let hst = HueSaturationDraw { hue_offset: 0.0, sat_scale: 1.0 }.apply(&colors);
        for (a, b) in colors.iter().zip(&hst) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn red_plus_third_turn_is_green() {
        let out = HueSaturationDraw { hue_offset: 1.0 / 3.0, sat_scale: 1.0 }.apply(&[[1.0, 0.0, 0.0]]);
        for (got, want) in out[0].iter().zip([0.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-7, "{out:?}");
        }
    }

    #[test]
    fn jitter_is_thread_count_independent() {
        let colors = vec![[0.5, 0.5, 0.5]; 2000];
        let draw = JitterDraw { key: 99, std: 0.05 };
        let parallel = draw.apply(&colors);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| draw.apply(&colors));
        assert_eq!(parallel, serial);
        assert!(parallel.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(parallel.iter().any(|c| c[0] != 0.5));
    }

    #[test]
    fn augment_all_is_seeded() {
        let pts = random_points(100, 9);
        let colors = vec![[0.2, 0.4, 0.6]; 100];
        let cfg = AugmentationConfig { seed: 17, ..Default::default() };
        let a = augment_all(&pts, &colors, &cfg).unwrap();
        let b = augment_all(&pts, &colors, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg = AugmentationConfig::from_toml("max_rotation_deg = 10.0\nflip_axes = [\"x\"]\nseed = 4\n").unwrap();
        assert_eq!(cfg.max_rotation_deg, 10.0);
        assert_eq!(cfg.flip_axes, vec![Axis::X]);
        assert_eq!(cfg.jitter_std, 0.05);
        assert!(AugmentationConfig::from_toml("flip_prob = 2.0").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn colors_stay_in_unit_range(seed in any::<u64>(), raw in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..100)) {
                let colors: Vec<[f64; 3]> = raw.into_iter().map(|(r, g, b)| [r, g, b]).collect();
                let cfg = AugmentationConfig { autocontrast_prob: 1.0, ..Default::default() };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = hue_saturation_translation(
                    &chromatic_jitter(&chromatic_auto_contrast(&colors, &cfg, &mut rng), &cfg, &mut rng),
                    &cfg,
                    &mut rng,
                );
                prop_assert!(out.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn rigid_ops_preserve_distances(seed in any::<u64>()) {
                let pts = random_points(40, seed);
                let cfg = AugmentationConfig { flip_prob: 1.0, max_rotation_deg: 180.0, ..Default::default() };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = random_flip(&random_rotation(&pts, &cfg, &mut rng), &cfg, &mut rng).unwrap();
                prop_assert!(max_pairwise_distance_change(&pts, &out) < 1e-9);
            }
        }
    }
}
