//! Non-maximum suppression over decoded extreme-point detections.
//!
//! Candidates are ranked by one of three keywords: the raw classification
//! confidence, center-ness times confidence, or predicted EIoU times
//! confidence. Overlap is measured with the IoU of enclosing boxes and
//! suppression only happens within a category.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{enclosing_box, rect_iou, AxisAlignedBox, ExtremePoints, Point};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.6;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocessError {
    #[error("{name} = {value} is outside [0, 1]")]
    ScoreOutOfRange { name: &'static str, value: f64 },
    #[error("location ({x}, {y}) is not strictly inside the box")]
    OutsideBox { x: f64, y: f64 },
    #[error("center-ness ranking needs a center-ness score on every detection")]
    MissingCenterness,
    #[error("unknown ranking mode {0:?} (expected plain, centerness or eiou)")]
    UnknownMode(String),
    #[error("IoU threshold {0} must lie in (0, 1)")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    /// Classification confidence alone.
    Plain,
    /// `center-ness * confidence`.
    CenternessGuided,
    /// `predicted EIoU * confidence`.
    EiouGuided,
}

impl RankingMode {
    pub const ALL: [RankingMode; 3] = [
        RankingMode::Plain,
        RankingMode::CenternessGuided,
        RankingMode::EiouGuided,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RankingMode::Plain => "plain",
            RankingMode::CenternessGuided => "centerness",
            RankingMode::EiouGuided => "eiou",
        }
    }
}

impl fmt::Display for RankingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankingMode {
    type Err = PostprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(RankingMode::Plain),
            "centerness" | "centerness_guided" => Ok(RankingMode::CenternessGuided),
            "eiou" | "eiou_guided" => Ok(RankingMode::EiouGuided),
            other => Err(PostprocessError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub extremes: ExtremePoints,
    /// Always `enclosing_box(extremes)`.
    pub bbox: AxisAlignedBox,
    pub category: u64,
    pub cls_confidence: f64,
    pub eiou_score: f64,
    pub centerness: Option<f64>,
}

fn check_unit(name: &'static str, value: f64) -> Result<f64, PostprocessError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(PostprocessError::ScoreOutOfRange { name, value })
    }
}

impl Detection {
    pub fn new(
        extremes: ExtremePoints,
        category: u64,
        cls_confidence: f64,
        eiou_score: f64,
    ) -> Result<Self, PostprocessError> {
        Ok(Self {
            bbox: enclosing_box(&extremes),
            extremes,
            category,
            cls_confidence: check_unit("cls_confidence", cls_confidence)?,
            eiou_score: check_unit("eiou_score", eiou_score)?,
            centerness: None,
        })
    }

    pub fn with_centerness(mut self, value: f64) -> Result<Self, PostprocessError> {
        self.centerness = Some(check_unit("centerness", value)?);
        Ok(self)
    }

    /// Center-ness of the location that produced this detection.
    pub fn with_location(self, location: Point) -> Result<Self, PostprocessError> {
        let c = centerness(location, &self.bbox)?;
        self.with_centerness(c)
    }
}

/// `sqrt(min(l, r) / max(l, r) * min(t, b) / max(t, b))` for the distances
/// from `p` to the four sides of `b`.
pub fn centerness(p: Point, b: &AxisAlignedBox) -> Result<f64, PostprocessError> {
    let l = p.x - b.x_min;
    let r = b.x_max - p.x;
    let t = p.y - b.y_min;
    let bo = b.y_max - p.y;
    if !(l > 0.0 && r > 0.0 && t > 0.0 && bo > 0.0) {
        return Err(PostprocessError::OutsideBox { x: p.x, y: p.y });
    }
    Ok(((l.min(r) / l.max(r)) * (t.min(bo) / t.max(bo))).sqrt())
}

pub fn ranking_key(d: &Detection, mode: RankingMode) -> Result<f64, PostprocessError> {
    match mode {
        RankingMode::Plain => Ok(d.cls_confidence),
        RankingMode::EiouGuided => Ok(d.eiou_score * d.cls_confidence),
        RankingMode::CenternessGuided => d
            .centerness
            .map(|c| c * d.cls_confidence)
            .ok_or(PostprocessError::MissingCenterness),
    }
}

/// Indices of `dets` in NMS priority order: key descending, then index.
pub fn priority_order(dets: &[Detection], mode: RankingMode) -> Result<Vec<(usize, f64)>, PostprocessError> {
    let mut keyed = dets
        .iter()
        .enumerate()
        .map(|(i, d)| ranking_key(d, mode).map(|k| (i, k)))
        .collect::<Result<Vec<_>, _>>()?;
    keyed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(keyed)
}

/// Greedy NMS returning the indices of kept detections in keep order.
pub fn nms_indices(dets: &[Detection], mode: RankingMode, iou_threshold: f64) -> Result<Vec<usize>, PostprocessError> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(PostprocessError::BadThreshold(iou_threshold));
    }
    let order = priority_order(dets, mode)?;
    let mut kept: Vec<usize> = Vec::new();
    for (i, _) in order {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            let other = &dets[k];
            other.category == d.category && rect_iou(&other.bbox, &d.bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn nms(dets: &[Detection], mode: RankingMode, iou_threshold: f64) -> Result<Vec<Detection>, PostprocessError> {
    Ok(nms_indices(dets, mode, iou_threshold)?
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}

/// NMS with a classification-confidence pre-filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub mode: RankingMode,
    pub iou_threshold: f64,
    pub score_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            mode: RankingMode::EiouGuided,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
        }
    }
}

impl NmsConfig {
    pub fn run(&self, dets: &[Detection]) -> Result<Vec<Detection>, PostprocessError> {
        let candidates: Vec<Detection> = dets
            .iter()
            .filter(|d| d.cls_confidence >= self.score_threshold)
            .cloned()
            .collect();
        nms(&candidates, self.mode, self.iou_threshold)
    }
}
