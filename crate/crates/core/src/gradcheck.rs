//! Finite-difference verification of [`crate::loss::eiou_loss_grad`].
//!
//! Errors are measured per component as `|a - n| / max(1, |a|, |n|)`, i.e.
//! relative for gradients of magnitude above one and absolute below.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::extraction::{extract_extremes, PolygonMask};
use crate::geometry::{enclosing_box, ExtremePoints, Point};
use crate::loss::{eiou_loss, eiou_loss_grad};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Configurations closer than this to a kink or an ordering tie are redrawn.
const TIE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub seed: u64,
    pub overlapping: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central differences of the loss over the eight prediction coordinates.
pub fn central_difference(gt: &ExtremePoints, pred: &ExtremePoints, h: f64) -> Option<[f64; 8]> {
    let base = pred.to_array();
    let mut out = [0.0; 8];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[i] += h;
        minus[i] -= h;
        let fp = eiou_loss(gt, &ExtremePoints::from_array(plus).ok()?).ok()?.value;
        let fm = eiou_loss(gt, &ExtremePoints::from_array(minus).ok()?).ok()?.value;
        *slot = (fp - fm) / (2.0 * h);
    }
    Some(out)
}

fn random_quad(rng: &mut ChaCha8Rng, cx: f64, cy: f64, scale: f64) -> ExtremePoints {
    let vertices = (0..4)
        .map(|k| {
            let angle = std::f64::consts::FRAC_PI_2 * k as f64 + rng.random_range(-0.6..0.6);
            let r = scale * rng.random_range(0.5..1.5);
            Point::new(cx + r * angle.cos(), cy + r * angle.sin())
        })
        .collect();
    extract_extremes(&PolygonMask::new(vertices)).expect("finite vertices")
}

/// Smallest gap between coordinates whose order or equality matters.
fn tie_gap(gt: &ExtremePoints, pred: &ExtremePoints) -> f64 {
    let g = enclosing_box(gt);
    let p = enclosing_box(pred);
    let mut gap = [
        (g.x_min - p.x_min).abs(),
        (g.x_max - p.x_max).abs(),
        (g.y_min - p.y_min).abs(),
        (g.y_max - p.y_max).abs(),
        (g.x_max - p.x_min).abs(),
        (p.x_max - g.x_min).abs(),
        (g.y_max - p.y_min).abs(),
        (p.y_max - g.y_min).abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    // Other points must stay strictly inside the prediction's extremal span.
    let pts = pred.points();
    for (k, q) in pts.iter().enumerate() {
        if k != 0 {
            gap = gap.min(q.x - pred.left.x);
        }
        if k != 2 {
            gap = gap.min(pred.right.x - q.x);
        }
        if k != 1 {
            gap = gap.min(q.y - pred.top.y);
        }
        if k != 3 {
            gap = gap.min(pred.bottom.y - q.y);
        }
    }
    gap
}

/// Draws a ground truth and a prediction away from kinks and ties. Roughly
/// one in five configurations has disjoint enclosing boxes.
pub fn random_configuration(rng: &mut ChaCha8Rng) -> (ExtremePoints, ExtremePoints) {
    loop {
        let scale = rng.random_range(0.5..3.0);
        let gt = random_quad(rng, 0.0, 0.0, scale);
        let offset = if rng.random_bool(0.2) { 4.0 } else { 0.6 };
        let (cx, cy) = (
            rng.random_range(-offset..offset) * scale,
            rng.random_range(-offset..offset) * scale,
        );
        let pred_scale = scale * rng.random_range(0.6..1.4);
        let pred = random_quad(rng, cx, cy, pred_scale);
        if tie_gap(&gt, &pred) > TIE_MARGIN && eiou_loss_grad(&gt, &pred).is_ok() {
            return (gt, pred);
        }
    }
}

/// Checks `trials` seeded configurations; passes when every component's
/// error is below `tolerance`.
pub fn run(trials: usize, seed: u64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_error: f64 = 0.0;
    let mut overlapping = 0;
    for _ in 0..trials {
        let (gt, pred) = random_configuration(&mut rng);
        let analytic = eiou_loss_grad(&gt, &pred).expect("configuration is differentiable");
        let numeric = central_difference(&gt, &pred, FD_STEP).expect("perturbations keep ordering");
        if eiou_loss(&gt, &pred).map(|l| l.overlap_branch).unwrap_or(false) {
            overlapping += 1;
        }
        for (a, n) in analytic.d_pred.iter().zip(&numeric) {
            max_rel_error = max_rel_error.max(rel_error(*a, *n));
        }
    }
    GradCheckReport {
        trials,
        seed,
        overlapping,
        max_rel_error,
        passed: max_rel_error < tolerance,
    }
}
