//! Extreme points from COCO polygon annotations.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::assignment::GroundTruthInstance;
use crate::geometry::{AxisAlignedBox, ExtremePoints, Point};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    MalformedPolygon(usize),
    #[error("non-finite polygon vertex")]
    NonFinite,
    #[error("instance has no polygons")]
    EmptyInstance,
    #[error("annotation file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[source] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonMask {
    pub vertices: Vec<Point>,
    pub image_id: u64,
    pub category: u64,
    pub instance_id: u64,
}

impl PolygonMask {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self {
            vertices,
            image_id: 0,
            category: 0,
            instance_id: 0,
        }
    }

    /// From COCO's flat `[x0, y0, x1, y1, ...]` list.
    pub fn from_flat(coords: &[f64]) -> Result<Self, ExtractionError> {
        if !coords.len().is_multiple_of(2) {
            return Err(ExtractionError::Schema(format!(
                "polygon has an odd number of coordinates ({})",
                coords.len()
            )));
        }
        Ok(Self::new(
            coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
        ))
    }
}

/// Extremal point along one direction. Ties on the extremal coordinate are
/// resolved to the midpoint of the tied vertices' span on the other axis.
fn extremal<'a>(
    vertices: impl Iterator<Item = &'a Point> + Clone,
    key: impl Fn(&Point) -> f64,
    other: impl Fn(&Point) -> f64,
    pick_max: bool,
    make: impl Fn(f64, f64) -> Point,
) -> Point {
    let best = vertices
        .clone()
        .map(&key)
        .fold(if pick_max { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| {
            if pick_max {
                a.max(b)
            } else {
                a.min(b)
            }
        });
    let (lo, hi) = vertices
        .filter(|p| key(p) == best)
        .map(other)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    make(best, 0.5 * (lo + hi))
}

fn extremes_of<'a>(vertices: impl Iterator<Item = &'a Point> + Clone) -> Result<ExtremePoints, ExtractionError> {
    let x = |p: &Point| p.x;
    let y = |p: &Point| p.y;
    let left = extremal(vertices.clone(), x, y, false, Point::new);
    let right = extremal(vertices.clone(), x, y, true, Point::new);
    let top = extremal(vertices.clone(), y, x, false, |a, b| Point::new(b, a));
    let bottom = extremal(vertices, y, x, true, |a, b| Point::new(b, a));
    // Tie midpoints stay within the extremal span, so ordering holds.
    ExtremePoints::new(left, top, right, bottom).map_err(|_| ExtractionError::NonFinite)
}

pub fn extract_extremes(mask: &PolygonMask) -> Result<ExtremePoints, ExtractionError> {
    if mask.vertices.len() < 3 {
        return Err(ExtractionError::MalformedPolygon(mask.vertices.len()));
    }
    if !mask.vertices.iter().all(Point::is_finite) {
        return Err(ExtractionError::NonFinite);
    }
    extremes_of(mask.vertices.iter())
}

/// Extremes over the union of all polygon parts of one instance.
pub fn extract_instance(masks: &[PolygonMask]) -> Result<ExtremePoints, ExtractionError> {
    if masks.is_empty() {
        return Err(ExtractionError::EmptyInstance);
    }
    for m in masks {
        if m.vertices.len() < 3 {
            return Err(ExtractionError::MalformedPolygon(m.vertices.len()));
        }
        if !m.vertices.iter().all(Point::is_finite) {
            return Err(ExtractionError::NonFinite);
        }
    }
    extremes_of(masks.iter().flat_map(|m| m.vertices.iter()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: u64,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// Annotation box clamped to the image.
    pub bbox: AxisAlignedBox,
    pub polygons: Vec<PolygonMask>,
}

impl AnnotatedInstance {
    pub fn extremes(&self) -> Result<ExtremePoints, ExtractionError> {
        extract_instance(&self.polygons)
    }

    pub fn to_ground_truth(&self) -> Result<GroundTruthInstance, ExtractionError> {
        Ok(GroundTruthInstance {
            extremes: self.extremes()?,
            bbox: self.bbox,
            category: self.category_id,
            instance_id: self.id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub categories: Vec<CategoryInfo>,
    pub instances: Vec<AnnotatedInstance>,
    /// Annotations dropped because their segmentation is RLE.
    pub skipped_rle: usize,
    /// Annotations dropped because `iscrowd` is set.
    pub skipped_crowd: usize,
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn instances_for(&self, image_id: u64) -> impl Iterator<Item = &AnnotatedInstance> {
        self.instances.iter().filter(move |i| i.image_id == image_id)
    }
}

#[derive(Deserialize)]
struct RawFile {
    images: Vec<ImageInfo>,
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<CategoryInfo>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: Vec<f64>,
    segmentation: Value,
    #[serde(default)]
    iscrowd: u8,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet, ExtractionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ExtractionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<AnnotationSet, ExtractionError> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ExtractionError::Schema(e.to_string()),
        _ => ExtractionError::Json(e),
    })?;

    let images: HashMap<u64, &ImageInfo> = raw.images.iter().map(|i| (i.id, i)).collect();
    if images.len() != raw.images.len() {
        return Err(ExtractionError::Schema("duplicate image id".into()));
    }
    let categories: HashSet<u64> = raw.categories.iter().map(|c| c.id).collect();

    let mut set = AnnotationSet {
        images: raw.images.clone(),
        categories: raw.categories.clone(),
        ..Default::default()
    };
    for ann in &raw.annotations {
        let Some(image) = images.get(&ann.image_id) else {
            return Err(ExtractionError::Schema(format!(
                "annotation {} references unknown image {}",
                ann.id, ann.image_id
            )));
        };
        if !categories.is_empty() && !categories.contains(&ann.category_id) {
            return Err(ExtractionError::Schema(format!(
                "annotation {} references unknown category {}",
                ann.id, ann.category_id
            )));
        }
        if ann.iscrowd != 0 {
            set.skipped_crowd += 1;
            continue;
        }
        let bbox = parse_bbox(ann, image)?;
        let polygons = match &ann.segmentation {
            Value::Object(_) => {
                set.skipped_rle += 1;
                continue;
            }
            Value::Array(parts) => parts
                .iter()
                .map(|p| parse_polygon(ann, p))
                .collect::<Result<Vec<_>, _>>()?,
            other => {
                return Err(ExtractionError::Schema(format!(
                    "annotation {}: segmentation must be a list of polygons or an RLE object, got {other}",
                    ann.id
                )))
            }
        };
        if polygons.is_empty() {
            return Err(ExtractionError::Schema(format!(
                "annotation {} has no polygons",
                ann.id
            )));
        }
        set.instances.push(AnnotatedInstance {
            id: ann.id,
            image_id: ann.image_id,
            category_id: ann.category_id,
            bbox,
            polygons,
        });
    }
    Ok(set)
}

fn parse_bbox(ann: &RawAnnotation, image: &ImageInfo) -> Result<AxisAlignedBox, ExtractionError> {
    let [x, y, w, h] = ann.bbox[..] else {
        return Err(ExtractionError::Schema(format!(
            "annotation {}: bbox must have 4 numbers, got {}",
            ann.id,
            ann.bbox.len()
        )));
    };
    if !(w >= 0.0 && h >= 0.0) {
        return Err(ExtractionError::Schema(format!(
            "annotation {}: negative bbox size {w} x {h}",
            ann.id
        )));
    }
    let (iw, ih) = (f64::from(image.width), f64::from(image.height));
    let x0 = x.clamp(0.0, iw);
    let y0 = y.clamp(0.0, ih);
    let x1 = (x + w).clamp(0.0, iw);
    let y1 = (y + h).clamp(0.0, ih);
    AxisAlignedBox::new(x0, y0, x1, y1).map_err(|e| ExtractionError::Schema(format!("annotation {}: {e}", ann.id)))
}

fn parse_polygon(ann: &RawAnnotation, part: &Value) -> Result<PolygonMask, ExtractionError> {
    let coords: Vec<f64> = part
        .as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| {
            ExtractionError::Schema(format!("annotation {}: polygon must be a flat list of numbers", ann.id))
        })?;
    let mut mask =
        PolygonMask::from_flat(&coords).map_err(|e| ExtractionError::Schema(format!("annotation {}: {e}", ann.id)))?;
    if mask.vertices.len() < 3 {
        return Err(ExtractionError::Schema(format!(
            "annotation {}: polygon with {} vertices",
            ann.id,
            mask.vertices.len()
        )));
    }
    mask.image_id = ann.image_id;
    mask.category = ann.category_id;
    mask.instance_id = ann.id;
    Ok(mask)
}
