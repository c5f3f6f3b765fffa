//! EIoU regression loss, its analytic gradient, and the Smooth-L1 baseline.
//!
//! The loss follows the published forward pass: when the enclosing boxes
//! overlap it is `-ln(IoU) + (1 - CosSim)`, otherwise only `1 - CosSim`.
//! The second branch can be zero for disjoint predictions of the right
//! shape; [`LossValue::overlap_branch`] reports which branch was taken.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::DisplacementVector;
use crate::geometry::{cos_sim, edge_vectors, enclosing_box, ExtremePoints, Vector, DEGENERATE_EDGE_NORM};

/// Minimum distance from a non-differentiable configuration accepted by
/// [`eiou_loss_grad`].
pub const GRAD_MARGIN: f64 = 1e-6;

/// Default Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("ground-truth enclosing box has zero area")]
    DegenerateGroundTruth,
    #[error("prediction enclosing box has zero area")]
    DegeneratePrediction,
    #[error("configuration within {margin:e} of a non-differentiable point ({reason})")]
    NearNondifferentiable { reason: &'static str, margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    /// Whether the enclosing boxes overlapped (the `-ln(IoU)` branch).
    pub overlap_branch: bool,
}

/// Partial derivatives of the loss with respect to the prediction, in the
/// flat layout `x_l, y_l, x_t, y_t, x_r, y_r, x_b, y_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub d_pred: [f64; 8],
}

/// Enclosing-box overlap quantities shared by the forward and backward pass.
struct Overlap {
    /// Signed intersection extents (negative when the boxes are apart).
    width: f64,
    height: f64,
    area_gt: f64,
    area_pred: f64,
}

impl Overlap {
    fn new(gt: &ExtremePoints, pred: &ExtremePoints) -> Self {
        let g = enclosing_box(gt);
        let p = enclosing_box(pred);
        Self {
            width: g.x_max.min(p.x_max) - g.x_min.max(p.x_min),
            height: g.y_max.min(p.y_max) - g.y_min.max(p.y_min),
            area_gt: g.area(),
            area_pred: p.area(),
        }
    }

    fn overlaps(&self) -> bool {
        self.width > 0.0 && self.height > 0.0
    }

    fn intersection(&self) -> f64 {
        if self.overlaps() {
            self.width * self.height
        } else {
            0.0
        }
    }

    fn union(&self) -> f64 {
        self.area_gt + self.area_pred - self.intersection()
    }
}

pub fn eiou_loss(gt: &ExtremePoints, pred: &ExtremePoints) -> Result<LossValue, LossError> {
    let ov = Overlap::new(gt, pred);
    if ov.area_gt <= 0.0 {
        return Err(LossError::DegenerateGroundTruth);
    }
    let shape = 1.0 - cos_sim(gt, pred);
    if ov.overlaps() {
        let iou = (ov.intersection() / ov.union()).min(1.0);
        Ok(LossValue {
            value: -iou.ln() + shape,
            overlap_branch: true,
        })
    } else {
        Ok(LossValue {
            value: shape,
            overlap_branch: false,
        })
    }
}

/// Weight of the prediction coordinate in `max(pred, gt)`: 1 when it wins,
/// 0 when it loses, and the mean of both one-sided slopes on a tie.
fn max_weight(pred: f64, gt: f64) -> f64 {
    if pred > gt {
        1.0
    } else if pred < gt {
        0.0
    } else {
        0.5
    }
}

fn min_weight(pred: f64, gt: f64) -> f64 {
    max_weight(-pred, -gt)
}

/// d cos(g, p) / d p.
fn cosine_grad(g: Vector, p: Vector) -> Vector {
    let tiny = DEGENERATE_EDGE_NORM * DEGENERATE_EDGE_NORM;
    let gn2 = g.norm_sq();
    if gn2 < tiny {
        return Vector::default();
    }
    let pn2 = p.norm_sq();
    let gp = (gn2 * pn2).sqrt();
    let cos = g.dot(p) / gp;
    Vector::new(g.dx / gp - cos * p.dx / pn2, g.dy / gp - cos * p.dy / pn2)
}

/// Analytic gradient of [`eiou_loss`] with respect to the prediction.
///
/// Ties between a predicted and a ground-truth box side use the average of
/// the two one-sided derivatives, which is what a central difference sees.
pub fn eiou_loss_grad(gt: &ExtremePoints, pred: &ExtremePoints) -> Result<LossGradient, LossError> {
    let ov = Overlap::new(gt, pred);
    if ov.area_gt <= 0.0 {
        return Err(LossError::DegenerateGroundTruth);
    }
    if ov.area_pred <= 0.0 {
        return Err(LossError::DegeneratePrediction);
    }
    let pred_edges = edge_vectors(pred).as_array();
    if let Some(n) = pred_edges.iter().map(|e| e.norm()).find(|n| *n < GRAD_MARGIN) {
        return Err(LossError::NearNondifferentiable {
            reason: "prediction edge too short",
            margin: n,
        });
    }
    let overlap = ov.overlaps();
    let margin = if overlap {
        ov.width.min(ov.height).min(ov.intersection())
    } else {
        (-ov.width).max(-ov.height)
    };
    if margin < GRAD_MARGIN {
        return Err(LossError::NearNondifferentiable {
            reason: "enclosing boxes close to touching",
            margin,
        });
    }

    // Flat indices of the box-side coordinates.
    const XL: usize = 0;
    const YT: usize = 3;
    const XR: usize = 4;
    const YB: usize = 7;
    let mut d = [0.0f64; 8];

    if overlap {
        let inter = ov.intersection();
        let union = ov.union();
        let d_inter = -1.0 / inter - 1.0 / union;
        let d_area = 1.0 / union;

        let g = enclosing_box(gt);
        let p = enclosing_box(pred);
        let (w, h) = (ov.width, ov.height);
        // I = w * h with w = min(x_r) - max(x_l), h = min(y_b) - max(y_t).
        let di_dxl = -h * max_weight(p.x_min, g.x_min);
        let di_dxr = h * min_weight(p.x_max, g.x_max);
        let di_dyt = -w * max_weight(p.y_min, g.y_min);
        let di_dyb = w * min_weight(p.y_max, g.y_max);
        // A = (x_r - x_l) * (y_b - y_t).
        let (pw, ph) = (p.width(), p.height());
        d[XL] += d_inter * di_dxl - d_area * ph;
        d[XR] += d_inter * di_dxr + d_area * ph;
        d[YT] += d_inter * di_dyt - d_area * pw;
        d[YB] += d_inter * di_dyb + d_area * pw;
    }

    // 1 - mean cosine; each edge is (head - tail) of two prediction points.
    let gt_edges = edge_vectors(gt).as_array();
    let ends: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];
    for ((g, p), (tail, head)) in gt_edges.iter().zip(&pred_edges).zip(ends) {
        let v = cosine_grad(*g, *p);
        let (sx, sy) = (-0.25 * v.dx, -0.25 * v.dy);
        d[2 * head] += sx;
        d[2 * head + 1] += sy;
        d[2 * tail] -= sx;
        d[2 * tail + 1] -= sy;
    }

    Ok(LossGradient { d_pred: d })
}

/// Loss over many pairs; results are returned in input order.
pub fn eiou_loss_batch(pairs: &[(ExtremePoints, ExtremePoints)]) -> Vec<Result<LossValue, LossError>> {
    pairs.par_iter().map(|(g, p)| eiou_loss(g, p)).collect()
}

pub fn smooth_l1_loss(gt: &DisplacementVector, pred: &DisplacementVector) -> f64 {
    smooth_l1_loss_with_beta(gt, pred, SMOOTH_L1_BETA)
}

/// Sum over the eight components of the Smooth-L1 kernel.
pub fn smooth_l1_loss_with_beta(gt: &DisplacementVector, pred: &DisplacementVector, beta: f64) -> f64 {
    gt.0.iter()
        .zip(&pred.0)
        .map(|(a, b)| {
            let d = (a - b).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AxisAlignedBox, Point};

    fn square(x0: f64, y0: f64, side: f64) -> ExtremePoints {
        ExtremePoints::from_box_midpoints(&AxisAlignedBox::new(x0, y0, x0 + side, y0 + side).unwrap())
    }

    /// Central differences, h = 1e-5.
    fn numeric_grad(gt: &ExtremePoints, pred: &ExtremePoints) -> [f64; 8] {
        let h = 1e-5;
        let base = pred.to_array();
        let mut out = [0.0; 8];
        for i in 0..8 {
            let mut plus = base;
            let mut minus = base;
            plus[i] += h;
            minus[i] -= h;
            let fp = eiou_loss(gt, &ExtremePoints::from_array(plus).unwrap()).unwrap().value;
            let fm = eiou_loss(gt, &ExtremePoints::from_array(minus).unwrap()).unwrap().value;
            out[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    fn max_rel_err(a: &[f64; 8], b: &[f64; 8]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_is_zero() {
        let e = square(0.0, 0.0, 1.0);
        let l = eiou_loss(&e, &e).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.overlap_branch);
    }

    #[test]
    fn shifted_square_loss() {
        let e = square(0.0, 0.0, 1.0);
        let s = square(0.5, 0.0, 1.0);
        let l = eiou_loss(&e, &s).unwrap();
        assert!((l.value - 3.0f64.ln()).abs() < 1e-12);
        assert!((l.value - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn disjoint_same_shape_takes_flat_branch() {
        let e = square(0.0, 0.0, 1.0);
        let far = square(5.0, 5.0, 1.0);
        let l = eiou_loss(&e, &far).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(!l.overlap_branch);
    }

    #[test]
    fn degenerate_ground_truth_is_rejected() {
        let p = ExtremePoints::degenerate(Point::new(1.0, 1.0));
        assert_eq!(
            eiou_loss(&p, &square(0.0, 0.0, 1.0)),
            Err(LossError::DegenerateGroundTruth)
        );
    }

    #[test]
    fn gradient_at_coincidence_matches_central_difference() {
        let e = square(0.0, 0.0, 1.5);
        let g = eiou_loss_grad(&e, &e).unwrap();
        for v in g.d_pred {
            assert_eq!(v, 0.0);
        }
        assert!(max_rel_err(&g.d_pred, &numeric_grad(&e, &e)) < 1e-5);
    }

    #[test]
    fn translated_family_has_no_shape_gradient() {
        let gt = square(0.0, 0.0, 2.0);
        let pred = square(0.3, 0.2, 2.0);
        let g = eiou_loss_grad(&gt, &pred).unwrap();
        let n = numeric_grad(&gt, &pred);
        assert!(max_rel_err(&g.d_pred, &n) < 1e-5);
        // Only the box-side coordinates feed the IoU term.
        for i in [1, 2, 5, 6] {
            assert!(g.d_pred[i].abs() < 1e-12, "component {i}: {}", g.d_pred[i]);
        }
    }

    #[test]
    fn disjoint_gradient_vanishes() {
        let gt = square(0.0, 0.0, 1.0);
        let far = square(5.0, 5.0, 1.0);
        let g = eiou_loss_grad(&gt, &far).unwrap();
        let n = numeric_grad(&gt, &far);
        assert!(g.d_pred.iter().all(|v| v.abs() < 1e-12));
        assert!(n.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn gradient_refuses_touching_boxes() {
        let gt = square(0.0, 0.0, 1.0);
        let touching = square(1.0, 0.0, 1.0);
        assert!(matches!(
            eiou_loss_grad(&gt, &touching),
            Err(LossError::NearNondifferentiable { .. })
        ));
        let short_edge = ExtremePoints::from_array([0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(matches!(
            eiou_loss_grad(&gt, &short_edge),
            Err(LossError::NearNondifferentiable { .. })
        ));
    }

    #[test]
    fn smooth_l1_examples() {
        let zero = DisplacementVector([0.0; 8]);
        assert_eq!(smooth_l1_loss(&zero, &zero), 0.0);
        let mut half = zero;
        half.0[3] = 0.5;
        assert_eq!(smooth_l1_loss(&zero, &half), 0.125);
        let mut two = zero;
        two.0[0] = 2.0;
        assert_eq!(smooth_l1_loss(&zero, &two), 1.5);
    }

    #[test]
    fn smooth_l1_depends_on_scale_while_eiou_does_not() {
        let gt = square(0.0, 0.0, 1.0);
        let pred = square(0.2, 0.1, 1.0);
        let p = Point::new(0.5, 0.5);
        let small = smooth_l1_loss(
            &DisplacementVector::encode(p, &gt),
            &DisplacementVector::encode(p, &pred),
        );
        let (gt10, pred10) = (
            gt.scale_translate(10.0, 0.0, 0.0).unwrap(),
            pred.scale_translate(10.0, 0.0, 0.0).unwrap(),
        );
        let p10 = Point::new(5.0, 5.0);
        let large = smooth_l1_loss(
            &DisplacementVector::encode(p10, &gt10),
            &DisplacementVector::encode(p10, &pred10),
        );
        assert!(large > 10.0 * small);
        let a = eiou_loss(&gt, &pred).unwrap().value;
        let b = eiou_loss(&gt10, &pred10).unwrap().value;
        assert!((a - b).abs() < 1e-9);
    }
}
