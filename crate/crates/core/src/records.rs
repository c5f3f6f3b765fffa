//! Line-oriented JSON records exchanged by the command-line tools.
//!
//! Extremes are always the flat `[x_l, y_l, x_t, y_t, x_r, y_r, x_b, y_b]`.
//! Detection boxes are derived from the extremes and never stored.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::AssignmentTarget;
use crate::geometry::{ExtremePoints, GeometryError, Point};
use crate::postprocess::{Detection, PostprocessError};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One detection in the dump format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub cls_confidence: f64,
    pub eiou_score: f64,
    pub extremes: [f64; 8],
    /// Optional center-ness score, needed for center-ness ranking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centerness: Option<f64>,
    /// Optional source location; center-ness is derived from it when the
    /// score itself is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<[f64; 2]>,
}

#[derive(Debug, Error)]
pub enum DetectionRecordError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
}

impl DetectionRecord {
    pub fn from_detection(image_id: u64, d: &Detection) -> Self {
        Self {
            image_id,
            category_id: d.category,
            cls_confidence: d.cls_confidence,
            eiou_score: d.eiou_score,
            extremes: d.extremes.to_array(),
            centerness: d.centerness,
            location: None,
        }
    }

    pub fn to_detection(&self) -> Result<Detection, DetectionRecordError> {
        let e = ExtremePoints::from_array(self.extremes)?;
        let d = Detection::new(e, self.category_id, self.cls_confidence, self.eiou_score)?;
        Ok(match (self.centerness, self.location) {
            (Some(c), _) => d.with_centerness(c)?,
            (None, Some([x, y])) => d.with_location(Point::new(x, y))?,
            (None, None) => d,
        })
    }
}

/// Extreme points of one annotated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesRecord {
    #[serde(default)]
    pub image_id: u64,
    #[serde(default)]
    pub category_id: u64,
    #[serde(default)]
    pub instance_id: u64,
    pub extremes: [f64; 8],
}

/// One positive (or, on request, negative) assignment target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub image_id: u64,
    pub x: f64,
    pub y: f64,
    pub stride: f64,
    pub level: usize,
    pub positive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub displacement: Option<[f64; 8]>,
}

impl TargetRecord {
    pub fn from_target(image_id: u64, t: &AssignmentTarget, instance_id: Option<u64>) -> Self {
        Self {
            image_id,
            x: t.location.x,
            y: t.location.y,
            stride: t.stride,
            level: t.level,
            positive: t.positive,
            instance_id,
            displacement: t.displacement.map(|d| d.0),
        }
    }
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| RecordError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
