use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::taxonomy::ClassId;

/// Columnar point records. Every column has the same length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// LAS always carries intensity; clouds built in memory may not.
    pub intensity: Option<Vec<u16>>,
    pub return_number: Vec<u8>,
    pub num_returns: Vec<u8>,
    pub scan_direction: Vec<bool>,
    /// Degrees.
    pub scan_angle: Vec<f64>,
    pub gps_time: Vec<f64>,
    pub red: Vec<u16>,
    pub green: Vec<u16>,
    pub blue: Vec<u16>,
    pub labels: Option<Vec<ClassId>>,
    pub confidence: Option<Vec<f64>>,
}

impl PointCloud {
    /// A cloud with the given coordinates, single returns and black color.
    pub fn from_xyz(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Self {
        let n = x.len();
        assert!(y.len() == n && z.len() == n, "coordinate columns differ in length");
        PointCloud {
            x,
            y,
            z,
            intensity: None,
            return_number: vec![1; n],
            num_returns: vec![1; n],
            scan_direction: vec![false; n],
            scan_angle: vec![0.0; n],
            gps_time: vec![0.0; n],
            red: vec![0; n],
            green: vec![0; n],
            blue: vec![0; n],
            labels: None,
            confidence: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.x[i], self.y[i], self.z[i])
    }

    pub fn coords(&self) -> Vec<Vector3<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn set_coords(&mut self, coords: &[Vector3<f64>]) {
        assert_eq!(coords.len(), self.len());
        for (i, p) in coords.iter().enumerate() {
            self.x[i] = p.x;
            self.y[i] = p.y;
            self.z[i] = p.z;
        }
    }

    /// Colors scaled to [0, 1] per channel.
    pub fn colors_unit(&self) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|i| {
                [
                    self.red[i] as f64 / 65535.0,
                    self.green[i] as f64 / 65535.0,
                    self.blue[i] as f64 / 65535.0,
                ]
            })
            .collect()
    }

    /// Re-quantizes unit colors into the 16-bit channels.
    pub fn set_colors_unit(&mut self, colors: &[[f64; 3]]) {
        assert_eq!(colors.len(), self.len());
        let q = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        for (i, c) in colors.iter().enumerate() {
            self.red[i] = q(c[0]);
            self.green[i] = q(c[1]);
            self.blue[i] = q(c[2]);
        }
    }

    /// Checks the column-length and value invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lengths = [
            ("y", self.y.len()),
            ("z", self.z.len()),
            ("return_number", self.return_number.len()),
            ("num_returns", self.num_returns.len()),
            ("scan_direction", self.scan_direction.len()),
            ("scan_angle", self.scan_angle.len()),
            ("gps_time", self.gps_time.len()),
            ("red", self.red.len()),
            ("green", self.green.len()),
            ("blue", self.blue.len()),
            ("intensity", self.intensity.as_ref().map_or(n, Vec::len)),
            ("label", self.labels.as_ref().map_or(n, Vec::len)),
            ("confidence", self.confidence.as_ref().map_or(n, Vec::len)),
        ];
        for (name, len) in lengths {
            if len != n {
                return Err(Error::Validation(format!(
                    "column {name} has {len} entries, expected {n}"
                )));
            }
        }
        if let Some(conf) = &self.confidence {
            if let Some(i) = conf.iter().position(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Validation(format!(
                    "confidence {} at point {i} is outside [0, 1]",
                    conf[i]
                )));
            }
        }
        Ok(())
    }

    /// A new cloud holding the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        fn pick<T: Copy>(col: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| col[i]).collect()
        }
        PointCloud {
            x: pick(&self.x, indices),
            y: pick(&self.y, indices),
            z: pick(&self.z, indices),
            intensity: self.intensity.as_ref().map(|c| pick(c, indices)),
            return_number: pick(&self.return_number, indices),
            num_returns: pick(&self.num_returns, indices),
            scan_direction: pick(&self.scan_direction, indices),
            scan_angle: pick(&self.scan_angle, indices),
            gps_time: pick(&self.gps_time, indices),
            red: pick(&self.red, indices),
            green: pick(&self.green, indices),
            blue: pick(&self.blue, indices),
            labels: self.labels.as_ref().map(|c| pick(c, indices)),
            confidence: self.confidence.as_ref().map(|c| pick(c, indices)),
        }
    }

    /// Axis-aligned bounds as (min, max). `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        if self.is_empty() {
            return None;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for i in 0..self.len() {
            let p = self.point(i);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_keeps_columns_aligned() {
        let mut c = PointCloud::from_xyz(vec![0.0, 1.0, 2.0], vec![0.0; 3], vec![5.0, 6.0, 7.0]);
        c.labels = Some(vec![ClassId::Soil, ClassId::Water, ClassId::Building]);
        let s = c.select(&[2, 0]);
        assert_eq!(s.x, vec![2.0, 0.0]);
        assert_eq!(s.z, vec![7.0, 5.0]);
        assert_eq!(s.labels.as_deref(), Some(&[ClassId::Building, ClassId::Soil][..]));
        s.validate().unwrap();
    }

    #[test]
    fn ragged_columns_fail_validation() {
        let mut c = PointCloud::from_xyz(vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
        c.red.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unit_colors_requantize_exactly() {
        let mut c = PointCloud::from_xyz(vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]);
        c.red = vec![0, 65535];
        c.green = vec![12345, 1];
        c.blue = vec![40000, 65534];
        let before = c.clone();
        let unit = c.colors_unit();
        c.set_colors_unit(&unit);
        assert_eq!(c, before);
    }
}
