//! Seeded synthetic scenes: ground-truth quads plus detections produced by
//! a noise model standing in for a trained detector.
//!
//! Randomness comes from ChaCha8 with one stream per (image, slot): slot 0
//! lays out the ground truth, slot `g + 1` draws the detections of ground
//! truth `g`, and slot `u32::MAX` draws background false positives. Images
//! are generated in parallel; the stream layout makes the output identical
//! at any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::GroundTruthInstance;
use crate::eval::ImageRecord;
use crate::extraction::{extract_extremes, PolygonMask};
use crate::geometry::{eiou, enclosing_box, AxisAlignedBox, ExtremePoints, Point};
use crate::postprocess::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
}

/// How the predicted-EIoU field of each detection is filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EiouScoreModel {
    /// The true EIoU against the source ground truth.
    Perfect,
    /// True EIoU plus Gaussian noise, clamped to [0, 1].
    Noisy { sigma: f64 },
}

/// Random boxes with noisy detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyConfig {
    pub num_images: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub gts_per_image: usize,
    pub num_categories: u64,
    pub min_size: f64,
    pub max_size: f64,
    /// How far the extreme points may slide along their box side, as a
    /// fraction of the side; in `[0, 1)`.
    pub shear: f64,
    pub detections_per_gt: usize,
    /// Whole-detection translation, standard deviation as a fraction of the
    /// ground-truth width/height.
    pub translation_sigma: f64,
    /// Independent per-point jitter, same units.
    pub jitter_sigma: f64,
    pub cls_min: f64,
    pub cls_max: f64,
    pub eiou_score: EiouScoreModel,
    pub false_positives_per_image: usize,
}

impl Default for NoisyConfig {
    fn default() -> Self {
        Self {
            num_images: 8,
            image_width: 640.0,
            image_height: 480.0,
            gts_per_image: 6,
            num_categories: 3,
            min_size: 24.0,
            max_size: 160.0,
            shear: 0.5,
            detections_per_gt: 3,
            translation_sigma: 0.08,
            jitter_sigma: 0.04,
            cls_min: 0.3,
            cls_max: 1.0,
            eiou_score: EiouScoreModel::Perfect,
            false_positives_per_image: 2,
        }
    }
}

/// Every ground truth gets an exact detection with lower confidence and a
/// shifted detection with higher confidence that overlaps it enough to be
/// suppressed. Ground truths sit in disjoint grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MisalignedConfig {
    pub num_images: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub cell_size: f64,
    pub accurate_cls: f64,
    pub poor_cls: f64,
    /// Horizontal shift of the poor detection as a fraction of the width.
    pub poor_shift: f64,
}

impl Default for MisalignedConfig {
    fn default() -> Self {
        Self {
            num_images: 4,
            grid_cols: 4,
            grid_rows: 3,
            cell_size: 160.0,
            accurate_cls: 0.7,
            poor_cls: 0.8,
            poor_shift: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Noisy(NoisyConfig),
    Misaligned(MisalignedConfig),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::Noisy(NoisyConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub images: Vec<ImageRecord>,
}

fn stream_rng(seed: u64, image: usize, slot: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((image as u64) << 32) | u64::from(slot));
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn bad(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidConfig(msg.into())
}

impl NoisyConfig {
    fn validate(&self) -> Result<(), ScenarioError> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.translation_sigma) && finite_nonneg(self.jitter_sigma)) {
            return Err(bad("noise sigmas must be finite and non-negative"));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(bad("image size must be positive"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size.is_finite()) {
            return Err(bad("need 0 < min_size <= max_size"));
        }
        if self.min_size > self.image_width.min(self.image_height) {
            return Err(bad("min_size larger than the image"));
        }
        if !(0.0..1.0).contains(&self.shear) {
            return Err(bad("shear must lie in [0, 1)"));
        }
        if !(0.0 <= self.cls_min && self.cls_min <= self.cls_max && self.cls_max <= 1.0) {
            return Err(bad("need 0 <= cls_min <= cls_max <= 1"));
        }
        if self.num_categories == 0 {
            return Err(bad("num_categories must be positive"));
        }
        if let EiouScoreModel::Noisy { sigma } = self.eiou_score {
            if !finite_nonneg(sigma) {
                return Err(bad("eiou score sigma must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn ground_truth(&self, rng: &mut ChaCha8Rng, image_id: u64) -> Vec<GroundTruthInstance> {
        (0..self.gts_per_image)
            .map(|g| {
                let w = uniform(rng, self.min_size, self.max_size.min(self.image_width));
                let h = uniform(rng, self.min_size, self.max_size.min(self.image_height));
                let x0 = uniform(rng, 0.0, self.image_width - w);
                let y0 = uniform(rng, 0.0, self.image_height - h);
                let mut slide = || 0.5 + self.shear * (rng.random::<f64>() - 0.5);
                let extremes = ExtremePoints {
                    left: Point::new(x0, y0 + h * slide()),
                    top: Point::new(x0 + w * slide(), y0),
                    right: Point::new(x0 + w, y0 + h * slide()),
                    bottom: Point::new(x0 + w * slide(), y0 + h),
                };
                let category = 1 + rng.random_range(0..self.num_categories);
                GroundTruthInstance {
                    bbox: enclosing_box(&extremes),
                    extremes,
                    category,
                    instance_id: image_id * 1_000_000 + g as u64,
                }
            })
            .collect()
    }

    fn perturb(&self, rng: &mut ChaCha8Rng, gt: &ExtremePoints) -> ExtremePoints {
        let b = enclosing_box(gt);
        let (w, h) = (b.width(), b.height());
        let tx = self.translation_sigma * w * normal(rng);
        let ty = self.translation_sigma * h * normal(rng);
        let vertices = gt
            .points()
            .iter()
            .map(|p| {
                let jx = self.jitter_sigma * w * normal(rng);
                let jy = self.jitter_sigma * h * normal(rng);
                Point::new(p.x + tx + jx, p.y + ty + jy)
            })
            .collect();
        // Re-reading the extremes keeps the ordering invariant after jitter.
        extract_extremes(&PolygonMask::new(vertices)).expect("four finite vertices")
    }

    fn score(&self, rng: &mut ChaCha8Rng, true_eiou: f64) -> f64 {
        match self.eiou_score {
            EiouScoreModel::Perfect => true_eiou,
            EiouScoreModel::Noisy { sigma } => (true_eiou + sigma * normal(rng)).clamp(0.0, 1.0),
        }
    }

    fn image(&self, seed: u64, index: usize) -> ImageRecord {
        let image_id = index as u64 + 1;
        let gts = self.ground_truth(&mut stream_rng(seed, index, 0), image_id);
        let mut detections = Vec::with_capacity(gts.len() * self.detections_per_gt);
        for (g, gt) in gts.iter().enumerate() {
            let mut rng = stream_rng(seed, index, g as u32 + 1);
            for _ in 0..self.detections_per_gt {
                let extremes = self.perturb(&mut rng, &gt.extremes);
                let cls = uniform(&mut rng, self.cls_min, self.cls_max);
                let score = self.score(&mut rng, eiou(&gt.extremes, &extremes).eiou);
                let loc = (rng.random::<f64>(), rng.random::<f64>());
                detections.push(finish(extremes, gt.category, cls, score, loc));
            }
        }
        let mut rng = stream_rng(seed, index, u32::MAX);
        for _ in 0..self.false_positives_per_image {
            let w = uniform(&mut rng, self.min_size, self.max_size.min(self.image_width));
            let h = uniform(&mut rng, self.min_size, self.max_size.min(self.image_height));
            let x0 = uniform(&mut rng, 0.0, self.image_width - w);
            let y0 = uniform(&mut rng, 0.0, self.image_height - h);
            let b = AxisAlignedBox {
                x_min: x0,
                y_min: y0,
                x_max: x0 + w,
                y_max: y0 + h,
            };
            let extremes = ExtremePoints::from_box_midpoints(&b);
            let category = 1 + rng.random_range(0..self.num_categories);
            let cls = uniform(&mut rng, self.cls_min, self.cls_max);
            let best = gts
                .iter()
                .filter(|g| g.category == category)
                .map(|g| eiou(&g.extremes, &extremes).eiou)
                .fold(0.0, f64::max);
            let score = self.score(&mut rng, best);
            let loc = (rng.random::<f64>(), rng.random::<f64>());
            detections.push(finish(extremes, category, cls, score, loc));
        }
        ImageRecord {
            image_id,
            width: self.image_width,
            height: self.image_height,
            gts,
            detections,
        }
    }
}

/// Builds a detection whose source location sits in the central half of
/// its box at relative position `loc`.
fn finish(extremes: ExtremePoints, category: u64, cls: f64, eiou_score: f64, loc: (f64, f64)) -> Detection {
    let det = Detection::new(extremes, category, cls, eiou_score).expect("scores are in [0, 1]");
    let b = det.bbox;
    let p = Point::new(
        b.x_min + b.width() * (0.25 + 0.5 * loc.0),
        b.y_min + b.height() * (0.25 + 0.5 * loc.1),
    );
    match det.clone().with_location(p) {
        Ok(d) => d,
        Err(_) => det.with_centerness(0.0).expect("0 is a valid score"),
    }
}

impl MisalignedConfig {
    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(bad("cell_size must be positive"));
        }
        for v in [self.accurate_cls, self.poor_cls] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad("confidences must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.poor_shift) {
            return Err(bad("poor_shift must lie in [0, 1)"));
        }
        Ok(())
    }

    fn image(&self, seed: u64, index: usize) -> ImageRecord {
        let image_id = index as u64 + 1;
        let mut rng = stream_rng(seed, index, 0);
        let cell = self.cell_size;
        let mut gts = Vec::new();
        let mut detections = Vec::new();
        for row in 0..self.grid_rows {
            for col in 0..self.grid_cols {
                // Box of 40-60% of the cell, placed in its central region;
                // a shifted copy still stays inside the cell.
                let w = cell * uniform(&mut rng, 0.4, 0.6);
                let h = cell * uniform(&mut rng, 0.4, 0.6);
                let x0 = col as f64 * cell + 0.1 * cell;
                let y0 = row as f64 * cell + 0.5 * (cell - h);
                let bbox = AxisAlignedBox {
                    x_min: x0,
                    y_min: y0,
                    x_max: x0 + w,
                    y_max: y0 + h,
                };
                let extremes = ExtremePoints::from_box_midpoints(&bbox);
                let gt = GroundTruthInstance {
                    extremes,
                    bbox,
                    category: 1,
                    instance_id: image_id * 1_000_000 + gts.len() as u64,
                };
                let centre = bbox.center();
                let accurate = Detection::new(extremes, 1, self.accurate_cls, 1.0)
                    .and_then(|d| d.with_location(centre))
                    .expect("valid accurate detection");
                let shifted = extremes
                    .scale_translate(1.0, self.poor_shift * w, 0.0)
                    .expect("translation keeps ordering");
                let poor_eiou = eiou(&extremes, &shifted).eiou;
                let poor = Detection::new(shifted, 1, self.poor_cls, poor_eiou)
                    .and_then(|d| d.with_location(centre))
                    .expect("valid poor detection");
                gts.push(gt);
                detections.push(poor);
                detections.push(accurate);
            }
        }
        ImageRecord {
            image_id,
            width: cell * self.grid_cols as f64,
            height: cell * self.grid_rows as f64,
            gts,
            detections,
        }
    }
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    let images = match config {
        ScenarioConfig::Noisy(c) => {
            c.validate()?;
            (0..c.num_images).into_par_iter().map(|i| c.image(seed, i)).collect()
        }
        ScenarioConfig::Misaligned(c) => {
            c.validate()?;
            (0..c.num_images).into_par_iter().map(|i| c.image(seed, i)).collect()
        }
    };
    Ok(Scenario { seed, images })
}
