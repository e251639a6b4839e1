use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use urbanseg::csf::{run_csf, ClothParams};
use urbanseg::las::{read_las_with, write_las_with, LasClassMap, LasHeaderInfo};
use urbanseg::metrics::MetricsReport;
use urbanseg::pipeline::{run_selftrain, PipelineConfig};
use urbanseg::prediction::{read_predictions, write_predictions};
use urbanseg::pseudolabel::{adjust_thresholds, compute_thresholds, filter_pseudolabels, ThresholdTable};
use urbanseg::taxonomy::{remap_labels, validate_mapping, LabelMapping};
use urbanseg::tiling::{assign_splits, build_blocks, SplitTargets};
use urbanseg::{ClassId, Error, ErrorFamily, PointCloud, PredictionSet};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.family() {
        ErrorFamily::Io => PyOSError::new_err(msg),
        ErrorFamily::Validation => PyValueError::new_err(msg),
        ErrorFamily::Numeric => PyArithmeticError::new_err(msg),
    }
}

fn parse_class(name: &str) -> PyResult<ClassId> {
    name.parse().map_err(to_py)
}

fn class_map(path: Option<PathBuf>) -> PyResult<LasClassMap> {
    match path {
        Some(p) => LasClassMap::load(p).map_err(to_py),
        None => Ok(LasClassMap::default()),
    }
}

/// A point cloud read from or written to LAS 1.4.
#[pyclass(name = "PointCloud", module = "urbanseg_py")]
pub struct PyPointCloud {
    inner: PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[staticmethod]
    #[pyo3(signature = (path, class_map=None))]
    fn read(path: PathBuf, class_map: Option<PathBuf>) -> PyResult<Self> {
        let map = self::class_map(class_map)?;
        Ok(PyPointCloud { inner: read_las_with(path, &map).map_err(to_py)?.cloud })
    }

    /// Builds a cloud from coordinates and optional 16-bit colors.
    #[staticmethod]
    #[pyo3(signature = (xyz, rgb=None))]
    fn from_points(xyz: Vec<(f64, f64, f64)>, rgb: Option<Vec<(u16, u16, u16)>>) -> PyResult<Self> {
        let mut cloud = PointCloud::from_xyz(
            xyz.iter().map(|p| p.0).collect(),
            xyz.iter().map(|p| p.1).collect(),
            xyz.iter().map(|p| p.2).collect(),
        );
        if let Some(rgb) = rgb {
            if rgb.len() != xyz.len() {
                return Err(to_py(Error::Alignment { expected: xyz.len(), found: rgb.len() }));
            }
            cloud.red = rgb.iter().map(|c| c.0).collect();
            cloud.green = rgb.iter().map(|c| c.1).collect();
            cloud.blue = rgb.iter().map(|c| c.2).collect();
        }
        Ok(PyPointCloud { inner: cloud })
    }

    #[pyo3(signature = (path, scale=0.001, class_map=None))]
    fn write(&self, path: PathBuf, scale: f64, class_map: Option<PathBuf>) -> PyResult<()> {
        let map = self::class_map(class_map)?;
        write_las_with(&self.inner, &LasHeaderInfo::for_cloud(&self.inner, scale), &map, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn xyz(&self) -> Vec<(f64, f64, f64)> {
        let c = &self.inner;
        (0..c.len()).map(|i| (c.x[i], c.y[i], c.z[i])).collect()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<String>> {
        self.inner.labels.as_ref().map(|l| l.iter().map(|c| c.to_string()).collect())
    }

    #[setter]
    fn set_labels(&mut self, labels: Option<Vec<String>>) -> PyResult<()> {
        let labels = labels
            .map(|l| l.iter().map(|s| parse_class(s)).collect::<PyResult<Vec<_>>>())
            .transpose()?;
        if let Some(l) = &labels {
            if l.len() != self.inner.len() {
                return Err(to_py(Error::Alignment { expected: self.inner.len(), found: l.len() }));
            }
        }
        self.inner.labels = labels;
        Ok(())
    }

    /// Ground mask from the cloth simulation filter.
    #[pyo3(signature = (grid_resolution=None, class_threshold=None))]
    fn ground_mask(&self, grid_resolution: Option<f64>, class_threshold: Option<f64>) -> PyResult<Vec<bool>> {
        let mut params = ClothParams::default();
        if let Some(r) = grid_resolution {
            params.grid_resolution = r;
        }
        if let Some(t) = class_threshold {
            params.class_threshold = t;
        }
        Ok(run_csf(&self.inner, &params).map_err(to_py)?.ground)
    }

    /// Point count per block for a square grid of the given block area.
    fn block_point_counts(&self, area: f64) -> PyResult<Vec<usize>> {
        Ok(build_blocks(&self.inner, area).map_err(to_py)?.point_counts())
    }

    /// Train/val/test point fractions of a seeded block split.
    #[pyo3(signature = (area, targets=(0.7, 0.1, 0.2), seed=0))]
    fn split_fractions(&self, area: f64, targets: (f64, f64, f64), seed: u64) -> PyResult<(f64, f64, f64)> {
        let grid = build_blocks(&self.inner, area).map_err(to_py)?;
        let targets = SplitTargets::new([targets.0, targets.1, targets.2]).map_err(to_py)?;
        let f = assign_splits(&grid, targets, seed).map_err(to_py)?.fractions;
        Ok((f[0], f[1], f[2]))
    }
}

/// Per-point class probabilities in taxonomy order.
#[pyclass(name = "Predictions", module = "urbanseg_py")]
pub struct PyPredictions {
    inner: PredictionSet,
}

#[pymethods]
impl PyPredictions {
    #[new]
    fn new(rows: Vec<[f64; 6]>) -> PyResult<Self> {
        Ok(PyPredictions { inner: PredictionSet::from_rows(&rows).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyPredictions { inner: read_predictions(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_predictions(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn argmax(&self) -> Vec<String> {
        self.inner.argmax_classes().iter().map(|c| c.to_string()).collect()
    }

    fn confidences(&self) -> Vec<f64> {
        self.inner.confidences()
    }
}

/// Per-class confidence thresholds.
#[pyclass(name = "ThresholdTable", module = "urbanseg_py")]
pub struct PyThresholdTable {
    inner: ThresholdTable,
}

#[pymethods]
impl PyThresholdTable {
    #[staticmethod]
    fn compute(predictions: &PyPredictions) -> PyResult<Self> {
        Ok(PyThresholdTable { inner: compute_thresholds(&predictions.inner).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyThresholdTable { inner: ThresholdTable::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn thresholds(&self) -> BTreeMap<String, Option<f64>> {
        self.inner.entries.iter().map(|e| (e.class.to_string(), e.threshold)).collect()
    }

    /// A copy with the given class thresholds replaced.
    fn adjust(&self, overrides: BTreeMap<String, f64>) -> PyResult<Self> {
        let parsed = overrides
            .iter()
            .map(|(k, &v)| Ok((parse_class(k)?, v)))
            .collect::<PyResult<BTreeMap<_, _>>>()?;
        Ok(PyThresholdTable { inner: adjust_thresholds(&self.inner, &parsed).map_err(to_py)? })
    }

    /// Indices, labels and confidences of points whose confidence strictly
    /// exceeds their class threshold.
    fn filter(&self, predictions: &PyPredictions) -> (Vec<usize>, Vec<String>, Vec<f64>) {
        let set = filter_pseudolabels(&predictions.inner, &self.inner);
        (set.indices, set.labels.iter().map(|c| c.to_string()).collect(), set.confidences)
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let per_class = |v: &[Option<f64>]| -> BTreeMap<String, Option<f64>> {
        ClassId::SEMANTIC.iter().zip(v).map(|(c, x)| (c.to_string(), *x)).collect()
    };
    let d = PyDict::new(py);
    d.set_item("miou", r.miou)?;
    d.set_item("macro_f1", r.macro_f1)?;
    d.set_item("evaluated", r.evaluated)?;
    d.set_item("iou", per_class(&r.per_class_iou))?;
    d.set_item("f1", per_class(&r.per_class_f1))?;
    Ok(d)
}

/// Scores predicted labels against ground truth; Unassigned ground truth is skipped.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, gt: Vec<String>, pred: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let parse = |v: &[String]| v.iter().map(|s| parse_class(s)).collect::<PyResult<Vec<_>>>();
    let report = urbanseg::metrics::evaluate(&parse(&gt)?, &parse(&pred)?).map_err(to_py)?;
    report_dict(py, &report)
}

/// Maps source-dataset class ids through a mapping file's text.
#[pyfunction]
fn remap(labels: Vec<u32>, mapping: &str) -> PyResult<Vec<String>> {
    let mapping = LabelMapping::parse(mapping).map_err(to_py)?;
    validate_mapping(&mapping).map_err(to_py)?;
    Ok(remap_labels(&labels, &mapping).map_err(to_py)?.iter().map(|c| c.to_string()).collect())
}

/// Runs self-training from a TOML config and returns the run id.
#[pyfunction]
#[pyo3(signature = (config, run_root="run"))]
fn selftrain(py: Python<'_>, config: PathBuf, run_root: &str) -> PyResult<String> {
    let cfg = PipelineConfig::load(&config).map_err(to_py)?;
    let root = PathBuf::from(run_root);
    let manifest = py.detach(|| run_selftrain(&cfg, &root)).map_err(to_py)?;
    Ok(manifest.run_id)
}

#[pymodule]
fn urbanseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyPredictions>()?;
    m.add_class::<PyThresholdTable>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(remap, m)?)?;
    m.add_function(wrap_pyfunction!(selftrain, m)?)?;
    m.add("CLASSES", ClassId::SEMANTIC.iter().map(|c| c.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
