//! Single-threshold average precision and NMS ranking comparisons.
//!
//! Matching is greedy in score order within each (image, category): a
//! detection takes the unmatched ground truth of highest box IoU, and
//! counts as a true positive when that IoU reaches the threshold. All
//! detections are then pooled and AP is the area under the all-point
//! interpolated precision-recall curve.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::GroundTruthInstance;
use crate::geometry::{eiou, enclosing_box, rect_iou, AxisAlignedBox};
use crate::postprocess::{nms, ranking_key, Detection, PostprocessError, RankingMode, DEFAULT_IOU_THRESHOLD};
use crate::scenario::Scenario;

pub const DEFAULT_AP_THRESHOLDS: [f64; 2] = [0.5, 0.75];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error("matching threshold {0} must lie in (0, 1]")]
    BadThreshold(f64),
}

/// Ground truth and detections of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: f64,
    pub height: f64,
    pub gts: Vec<GroundTruthInstance>,
    pub detections: Vec<Detection>,
}

/// Which ground-truth box detections are matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtBoxSource {
    /// The annotation box.
    #[default]
    Annotation,
    /// The enclosing box of the ground-truth extreme points.
    Extremes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_thresholds: Vec<f64>,
    pub mode: RankingMode,
    /// Run NMS at this IoU threshold before matching; `None` for detections
    /// that are already post-processed.
    pub nms_threshold: Option<f64>,
    pub gt_box: GtBoxSource,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_thresholds: DEFAULT_AP_THRESHOLDS.to_vec(),
            mode: RankingMode::Plain,
            nms_threshold: Some(DEFAULT_IOU_THRESHOLD),
            gt_box: GtBoxSource::Annotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub iou_threshold: f64,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    /// Mean EIoU over matched (detection, ground truth) pairs; 0 when none.
    pub mean_matched_eiou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: RankingMode,
    pub num_gt: usize,
    pub num_detections: usize,
    pub thresholds: Vec<ThresholdReport>,
}

impl EvalReport {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| t.iou_threshold == threshold)
            .map(|t| t.ap)
    }
}

/// One scored detection after matching.
#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f64,
    image: usize,
    index: usize,
    matched_eiou: Option<f64>,
}

fn gt_box(g: &GroundTruthInstance, src: GtBoxSource) -> AxisAlignedBox {
    match src {
        GtBoxSource::Annotation => g.bbox,
        GtBoxSource::Extremes => enclosing_box(&g.extremes),
    }
}

fn by_score_desc(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.image.cmp(&b.image))
        .then(a.index.cmp(&b.index))
}

fn match_image(
    image: usize,
    gts: &[GroundTruthInstance],
    dets: &[Detection],
    opts: &EvalOptions,
) -> Result<Vec<Vec<Scored>>, EvalError> {
    let mut scored: Vec<Scored> = dets
        .iter()
        .enumerate()
        .map(|(index, d)| {
            ranking_key(d, opts.mode).map(|score| Scored {
                score,
                image,
                index,
                matched_eiou: None,
            })
        })
        .collect::<Result<_, _>>()?;
    scored.sort_by(by_score_desc);

    let boxes: Vec<AxisAlignedBox> = gts.iter().map(|g| gt_box(g, opts.gt_box)).collect();
    let mut per_threshold = Vec::with_capacity(opts.iou_thresholds.len());
    for &thr in &opts.iou_thresholds {
        let mut taken = vec![false; gts.len()];
        let mut out = scored.clone();
        for s in &mut out {
            let d = &dets[s.index];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.category != d.category {
                    continue;
                }
                let iou = rect_iou(&boxes[g], &d.bbox);
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                s.matched_eiou = Some(eiou(&gts[g].extremes, &d.extremes).eiou);
            }
        }
        per_threshold.push(out);
    }
    Ok(per_threshold)
}

/// Area under the precision-recall curve with the precision envelope
/// `p(r) = max_{r' >= r} p(r')`.
pub fn average_precision(is_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || is_tp.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (k, &hit) in is_tp.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub fn evaluate(images: &[ImageRecord], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    if let Some(t) = opts.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(EvalError::BadThreshold(*t));
    }
    let per_image: Vec<(usize, Vec<Vec<Scored>>)> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let dets = match opts.nms_threshold {
                Some(thr) => nms(&img.detections, opts.mode, thr)?,
                None => img.detections.clone(),
            };
            Ok((dets.len(), match_image(i, &img.gts, &dets, opts)?))
        })
        .collect::<Result<_, EvalError>>()?;

    let num_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    let num_detections: usize = per_image.iter().map(|(n, _)| n).sum();
    let thresholds = opts
        .iou_thresholds
        .iter()
        .enumerate()
        .map(|(t, &iou_threshold)| {
            let mut pooled: Vec<Scored> = per_image.iter().flat_map(|(_, m)| m[t].iter().copied()).collect();
            pooled.sort_by(by_score_desc);
            let hits: Vec<bool> = pooled.iter().map(|s| s.matched_eiou.is_some()).collect();
            let tp = hits.iter().filter(|h| **h).count();
            let eiou_sum: f64 = pooled.iter().filter_map(|s| s.matched_eiou).sum();
            ThresholdReport {
                iou_threshold,
                ap: average_precision(&hits, num_gt),
                tp,
                fp: pooled.len() - tp,
                fn_count: num_gt - tp,
                mean_matched_eiou: if tp > 0 { eiou_sum / tp as f64 } else { 0.0 },
            }
        })
        .collect();
    Ok(EvalReport {
        mode: opts.mode,
        num_gt,
        num_detections,
        thresholds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOrdering {
    pub iou_threshold: f64,
    /// Modes by decreasing AP; equal APs keep the plain, centerness, eiou order.
    pub modes_by_ap: Vec<RankingMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub nms_threshold: f64,
    pub reports: Vec<EvalReport>,
    pub ordering: Vec<ModeOrdering>,
}

impl ComparisonReport {
    pub fn report(&self, mode: RankingMode) -> &EvalReport {
        self.reports
            .iter()
            .find(|r| r.mode == mode)
            .expect("every mode is evaluated")
    }
}

/// Runs NMS and evaluation under every ranking mode on the same scenario.
pub fn compare_rankings(
    scenario: &Scenario,
    iou_thresholds: &[f64],
    nms_threshold: f64,
) -> Result<ComparisonReport, EvalError> {
    let reports = RankingMode::ALL
        .iter()
        .map(|&mode| {
            let opts = EvalOptions {
                iou_thresholds: iou_thresholds.to_vec(),
                mode,
                nms_threshold: Some(nms_threshold),
                gt_box: GtBoxSource::Annotation,
            };
            evaluate(&scenario.images, &opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ordering = iou_thresholds
        .iter()
        .enumerate()
        .map(|(t, &iou_threshold)| {
            let mut modes: Vec<(RankingMode, f64)> = reports.iter().map(|r| (r.mode, r.thresholds[t].ap)).collect();
            modes.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
            ModeOrdering {
                iou_threshold,
                modes_by_ap: modes.into_iter().map(|(m, _)| m).collect(),
            }
        })
        .collect();
    Ok(ComparisonReport {
        seed: scenario.seed,
        nms_threshold,
        reports,
        ordering,
    })
}
