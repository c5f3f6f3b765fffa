//! Python bindings. Extreme points cross the boundary as 8-sequences in the
//! flat `x_l, y_l, x_t, y_t, x_r, y_r, x_b, y_b` layout or as
//! [`PyExtremePoints`] objects; every validation error becomes `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use eiou_core::assignment::{self, DisplacementVector};
use eiou_core::extraction::{self, PolygonMask};
use eiou_core::geometry::{self, AxisAlignedBox, ExtremePoints, Point};
use eiou_core::loss;
use eiou_core::postprocess::{self, Detection, RankingMode};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "ExtremePoints", module = "eiou", frozen)]
pub struct PyExtremePoints {
    inner: ExtremePoints,
}

#[pymethods]
impl PyExtremePoints {
    #[new]
    fn new(coords: [f64; 8]) -> PyResult<Self> {
        let inner = ExtremePoints::from_array(coords).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_polygon(coords: Vec<f64>) -> PyResult<Self> {
        let mask = PolygonMask::from_flat(&coords).map_err(value_err)?;
        let inner = extraction::extract_extremes(&mask).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_list(&self) -> [f64; 8] {
        self.inner.to_array()
    }

    /// `(x_min, y_min, x_max, y_max)` of the enclosing box.
    fn bbox(&self) -> (f64, f64, f64, f64) {
        let b = geometry::enclosing_box(&self.inner);
        (b.x_min, b.y_min, b.x_max, b.y_max)
    }

    fn __repr__(&self) -> String {
        format!("ExtremePoints({:?})", self.inner.to_array())
    }
}

fn points(coords: [f64; 8]) -> PyResult<ExtremePoints> {
    ExtremePoints::from_array(coords).map_err(value_err)
}

#[pyclass(name = "Detection", module = "eiou", frozen)]
pub struct PyDetection {
    inner: Detection,
}

#[pymethods]
impl PyDetection {
    #[new]
    #[pyo3(signature = (extremes, category, cls_confidence, eiou_score, centerness=None))]
    fn new(
        extremes: [f64; 8],
        category: u64,
        cls_confidence: f64,
        eiou_score: f64,
        centerness: Option<f64>,
    ) -> PyResult<Self> {
        let mut d = Detection::new(points(extremes)?, category, cls_confidence, eiou_score).map_err(value_err)?;
        if let Some(c) = centerness {
            d = d.with_centerness(c).map_err(value_err)?;
        }
        Ok(Self { inner: d })
    }

    #[getter]
    fn extremes(&self) -> [f64; 8] {
        self.inner.extremes.to_array()
    }

    #[getter]
    fn category(&self) -> u64 {
        self.inner.category
    }

    #[getter]
    fn cls_confidence(&self) -> f64 {
        self.inner.cls_confidence
    }

    #[getter]
    fn eiou_score(&self) -> f64 {
        self.inner.eiou_score
    }

    #[getter]
    fn centerness(&self) -> Option<f64> {
        self.inner.centerness
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection(category={}, cls_confidence={}, eiou_score={})",
            self.inner.category, self.inner.cls_confidence, self.inner.eiou_score
        )
    }
}

/// Returns `(rect_iou, cos_sim, eiou)`.
#[pyfunction]
fn eiou(gt: [f64; 8], pred: [f64; 8]) -> PyResult<(f64, f64, f64)> {
    let b = geometry::eiou(&points(gt)?, &points(pred)?);
    Ok((b.rect_iou, b.cos_sim, b.eiou))
}

/// IoU of two `(x_min, y_min, x_max, y_max)` boxes.
#[pyfunction]
fn rect_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    let a = AxisAlignedBox::new(a.0, a.1, a.2, a.3).map_err(value_err)?;
    let b = AxisAlignedBox::new(b.0, b.1, b.2, b.3).map_err(value_err)?;
    Ok(geometry::rect_iou(&a, &b))
}

#[pyfunction]
fn quad_iou_exact(a: [f64; 8], b: [f64; 8]) -> PyResult<f64> {
    geometry::quad_iou_exact(&points(a)?, &points(b)?).map_err(value_err)
}

/// Returns `(value, overlap_branch)`.
#[pyfunction]
fn eiou_loss(gt: [f64; 8], pred: [f64; 8]) -> PyResult<(f64, bool)> {
    let l = loss::eiou_loss(&points(gt)?, &points(pred)?).map_err(value_err)?;
    Ok((l.value, l.overlap_branch))
}

#[pyfunction]
fn eiou_loss_grad(gt: [f64; 8], pred: [f64; 8]) -> PyResult<[f64; 8]> {
    let g = loss::eiou_loss_grad(&points(gt)?, &points(pred)?).map_err(value_err)?;
    Ok(g.d_pred)
}

#[pyfunction]
fn smooth_l1_loss(gt: [f64; 8], pred: [f64; 8]) -> f64 {
    loss::smooth_l1_loss(&DisplacementVector(gt), &DisplacementVector(pred))
}

/// Returns `(r_x, r_y)` for a box of the given size.
#[pyfunction]
fn dynamic_radius(width: f64, height: f64) -> PyResult<(f64, f64)> {
    assignment::dynamic_radius(width, height).map_err(value_err)
}

#[pyfunction]
fn encode(x: f64, y: f64, extremes: [f64; 8]) -> PyResult<[f64; 8]> {
    Ok(assignment::encode(Point::new(x, y), &points(extremes)?).0)
}

#[pyfunction]
fn decode(x: f64, y: f64, displacement: [f64; 8]) -> PyResult<[f64; 8]> {
    let e = assignment::decode(Point::new(x, y), &DisplacementVector(displacement)).map_err(value_err)?;
    Ok(e.to_array())
}

/// Extreme points of a flat `[x0, y0, x1, y1, ...]` polygon.
#[pyfunction]
fn extract_extremes(polygon: Vec<f64>) -> PyResult<[f64; 8]> {
    let mask = PolygonMask::from_flat(&polygon).map_err(value_err)?;
    Ok(extraction::extract_extremes(&mask).map_err(value_err)?.to_array())
}

#[pyfunction]
fn centerness(x: f64, y: f64, bbox: (f64, f64, f64, f64)) -> PyResult<f64> {
    let b = AxisAlignedBox::new(bbox.0, bbox.1, bbox.2, bbox.3).map_err(value_err)?;
    postprocess::centerness(Point::new(x, y), &b).map_err(value_err)
}

/// Indices of the kept detections, in priority order.
#[pyfunction]
#[pyo3(signature = (detections, mode="eiou", iou_threshold=postprocess::DEFAULT_IOU_THRESHOLD))]
fn nms(detections: Vec<PyRef<'_, PyDetection>>, mode: &str, iou_threshold: f64) -> PyResult<Vec<usize>> {
    let mode: RankingMode = mode.parse().map_err(value_err)?;
    let dets: Vec<Detection> = detections.iter().map(|d| d.inner.clone()).collect();
    postprocess::nms_indices(&dets, mode, iou_threshold).map_err(value_err)
}

#[pymodule]
#[pyo3(name = "eiou")]
fn eiou_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExtremePoints>()?;
    m.add_class::<PyDetection>()?;
    m.add_function(wrap_pyfunction!(eiou, m)?)?;
    m.add_function(wrap_pyfunction!(rect_iou, m)?)?;
    m.add_function(wrap_pyfunction!(quad_iou_exact, m)?)?;
    m.add_function(wrap_pyfunction!(eiou_loss, m)?)?;
    m.add_function(wrap_pyfunction!(eiou_loss_grad, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_l1_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_radius, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(extract_extremes, m)?)?;
    m.add_function(wrap_pyfunction!(centerness, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    Ok(())
}
