//! Positive-sample assignment with aspect-ratio dependent sampling radii.
//!
//! Every feature-pyramid level with stride `s` places locations at the cell
//! centres `(s/2 + i*s, s/2 + j*s)`. A location is positive for a ground
//! truth when it falls inside that instance's target area (the box centre
//! expanded by `s * (r_x, r_y)` and clipped to the box) and the instance's
//! largest displacement component lies in the level's regression range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{eiou, AxisAlignedBox, ExtremePoints, GeometryError, Point};

/// Base sampling radius in units of the level stride.
pub const BASE_RADIUS: f64 = 1.5;

/// Aspect ratios are clamped to `[1 / MAX_ASPECT, MAX_ASPECT]`.
pub const MAX_ASPECT: f64 = 1.3;

pub const DEFAULT_STRIDES: [f64; 5] = [8.0, 16.0, 32.0, 64.0, 128.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("box dimensions must be positive, got {w} x {h}")]
    NonPositiveSize { w: f64, h: f64 },
    #[error("decoded extreme points are inconsistent: {0}")]
    InvalidDecode(GeometryError),
    #[error("invalid level configuration: {0}")]
    InvalidLevels(String),
}

/// Eight signed offsets from a location to the extreme points:
/// `(x_p - x_l, y_p - y_l, x_p - x_t, y_p - y_t, x_p - x_r, y_p - y_r, x_p - x_b, y_p - y_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementVector(pub [f64; 8]);

impl DisplacementVector {
    pub fn encode(p: Point, e: &ExtremePoints) -> Self {
        encode(p, e)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub extremes: ExtremePoints,
    /// Annotation box; may disagree slightly with the extremes' enclosing box.
    pub bbox: AxisAlignedBox,
    pub category: u64,
    pub instance_id: u64,
}

/// One pyramid level: stride and the half-open range `(min_extent, max_extent]`
/// of displacement magnitudes it regresses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub stride: f64,
    pub min_extent: f64,
    pub max_extent: f64,
}

impl LevelSpec {
    fn accepts(&self, extent: f64) -> bool {
        extent > self.min_extent && extent <= self.max_extent
    }
}

/// Levels for the given strides with ranges `(8 * s_prev, 8 * s]` and an open
/// top level. For the default strides this yields
/// `(0, 64], (64, 128], (128, 256], (256, 512], (512, inf)`.
pub fn levels_for_strides(strides: &[f64]) -> Result<Vec<LevelSpec>, AssignError> {
    if strides.is_empty() {
        return Err(AssignError::InvalidLevels("no strides given".into()));
    }
    if strides.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(AssignError::InvalidLevels(format!(
            "strides must be positive: {strides:?}"
        )));
    }
    if strides.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AssignError::InvalidLevels(format!(
            "strides must increase: {strides:?}"
        )));
    }
    let n = strides.len();
    Ok(strides
        .iter()
        .enumerate()
        .map(|(i, &stride)| LevelSpec {
            stride,
            min_extent: if i == 0 { 0.0 } else { 8.0 * strides[i - 1] },
            max_extent: if i + 1 == n { f64::INFINITY } else { 8.0 * stride },
        })
        .collect())
}

pub fn default_levels() -> Vec<LevelSpec> {
    levels_for_strides(&DEFAULT_STRIDES).expect("default strides are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTarget {
    pub location: Point,
    pub stride: f64,
    pub level: usize,
    pub positive: bool,
    /// Index into the ground-truth list passed to [`assign`].
    pub gt_index: Option<usize>,
    pub displacement: Option<DisplacementVector>,
    /// Supervision for the EIoU predictor; filled once a prediction exists.
    pub eiou_target: Option<f64>,
}

impl AssignmentTarget {
    /// Sets the EIoU-predictor target from the prediction decoded at this
    /// location. No-op for negatives.
    pub fn fill_eiou_target(&mut self, gt: &ExtremePoints, pred: &ExtremePoints) {
        if self.positive {
            self.eiou_target = Some(eiou(gt, pred).eiou);
        }
    }
}

/// Horizontal and vertical sampling radii for a `w x h` box.
pub fn dynamic_radius(w: f64, h: f64) -> Result<(f64, f64), AssignError> {
    if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
        return Err(AssignError::NonPositiveSize { w, h });
    }
    let f = (w / h).clamp(1.0 / MAX_ASPECT, MAX_ASPECT);
    Ok(if f > 1.0 {
        (BASE_RADIUS * f, BASE_RADIUS)
    } else if f < 1.0 {
        (BASE_RADIUS, BASE_RADIUS / f)
    } else {
        (BASE_RADIUS, BASE_RADIUS)
    })
}

/// Target area of `gt` on a level with the given stride.
///
/// Degenerate annotation boxes yield the box itself.
pub fn positive_area(gt: &GroundTruthInstance, stride: f64) -> AxisAlignedBox {
    let b = gt.bbox;
    let Ok((rx, ry)) = dynamic_radius(b.width(), b.height()) else {
        return b;
    };
    let c = b.center();
    let raw = AxisAlignedBox {
        x_min: c.x - stride * rx,
        y_min: c.y - stride * ry,
        x_max: c.x + stride * rx,
        y_max: c.y + stride * ry,
    };
    // The centre lies inside the box, so the overlap is never empty.
    raw.intersect(&b).unwrap_or(b)
}

pub fn encode(p: Point, e: &ExtremePoints) -> DisplacementVector {
    let mut d = [0.0; 8];
    for (k, q) in e.points().iter().enumerate() {
        d[2 * k] = p.x - q.x;
        d[2 * k + 1] = p.y - q.y;
    }
    DisplacementVector(d)
}

pub fn decode(p: Point, d: &DisplacementVector) -> Result<ExtremePoints, AssignError> {
    let c = d.0;
    let pt = |k: usize| Point::new(p.x - c[2 * k], p.y - c[2 * k + 1]);
    ExtremePoints::new(pt(0), pt(1), pt(2), pt(3)).map_err(AssignError::InvalidDecode)
}

/// Feature-map locations of one level covering a `width x height` image.
pub fn level_locations(width: f64, height: f64, stride: f64) -> impl Iterator<Item = Point> {
    let cols = (width / stride).ceil().max(0.0) as usize;
    let rows = (height / stride).ceil().max(0.0) as usize;
    (0..rows).flat_map(move |j| {
        (0..cols).map(move |i| Point::new(0.5 * stride + i as f64 * stride, 0.5 * stride + j as f64 * stride))
    })
}

/// Key for resolving locations claimed by several instances: smaller box
/// area first, then instance id, category, list position.
fn claim_key(gts: &[GroundTruthInstance], idx: usize) -> (f64, u64, u64, usize) {
    let g = &gts[idx];
    (g.bbox.area(), g.instance_id, g.category, idx)
}

/// Assigns every location on every level of a `width x height` image.
///
/// Targets are ordered by level, then row, then column.
pub fn assign(gts: &[GroundTruthInstance], width: f64, height: f64, levels: &[LevelSpec]) -> Vec<AssignmentTarget> {
    let mut out = Vec::new();
    for (level, spec) in levels.iter().enumerate() {
        let areas: Vec<AxisAlignedBox> = gts.iter().map(|g| positive_area(g, spec.stride)).collect();
        for location in level_locations(width, height, spec.stride) {
            let mut best: Option<(usize, DisplacementVector)> = None;
            for (idx, gt) in gts.iter().enumerate() {
                if !areas[idx].contains(location) {
                    continue;
                }
                let d = encode(location, &gt.extremes);
                if !spec.accepts(d.max_abs()) {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((cur, _)) => {
                        claim_key(gts, idx).partial_cmp(&claim_key(gts, *cur)) == Some(std::cmp::Ordering::Less)
                    }
                };
                if better {
                    best = Some((idx, d));
                }
            }
            out.push(AssignmentTarget {
                location,
                stride: spec.stride,
                level,
                positive: best.is_some(),
                gt_index: best.map(|(i, _)| i),
                displacement: best.map(|(_, d)| d),
                eiou_target: None,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt_from_box(b: AxisAlignedBox, id: u64) -> GroundTruthInstance {
        GroundTruthInstance {
            extremes: ExtremePoints::from_box_midpoints(&b),
            bbox: b,
            category: 1,
            instance_id: id,
        }
    }

    fn bx(a: f64, b: f64, c: f64, d: f64) -> AxisAlignedBox {
        AxisAlignedBox::new(a, b, c, d).unwrap()
    }

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn dynamic_radius_table() {
        assert!(close(dynamic_radius(13.0, 10.0).unwrap(), (1.95, 1.5)));
        assert!(close(dynamic_radius(30.0, 10.0).unwrap(), (1.95, 1.5)));
        assert!(close(dynamic_radius(10.0, 13.0).unwrap(), (1.5, 1.95)));
        assert!(close(dynamic_radius(10.0, 30.0).unwrap(), (1.5, 1.95)));
        assert_eq!(dynamic_radius(10.0, 10.0).unwrap(), (1.5, 1.5));
        assert!(dynamic_radius(0.0, 10.0).is_err());
        assert!(dynamic_radius(10.0, -1.0).is_err());
    }

    #[test]
    fn longer_side_gets_larger_radius() {
        for (w, h) in [(11.0, 10.0), (50.0, 3.0), (1.01, 1.0)] {
            let (rx, ry) = dynamic_radius(w, h).unwrap();
            assert!(rx > ry);
            let (rx, ry) = dynamic_radius(h, w).unwrap();
            assert!(rx < ry);
        }
    }

    #[test]
    fn positive_area_examples() {
        let g = gt_from_box(bx(88.0, 88.0, 112.0, 112.0), 0);
        assert_eq!(positive_area(&g, 8.0), bx(88.0, 88.0, 112.0, 112.0));

        // 26 x 20: x radius 8 * 1.95 = 15.6 and y radius 8 * 1.5 = 12 both
        // reach past the box, so the area is the box.
        let g = gt_from_box(bx(87.0, 90.0, 113.0, 110.0), 0);
        let a = positive_area(&g, 8.0);
        assert_eq!(a, bx(87.0, 90.0, 113.0, 110.0));

        let g = gt_from_box(bx(0.0, 0.0, 4.0, 4.0), 0);
        assert_eq!(positive_area(&g, 8.0), bx(0.0, 0.0, 4.0, 4.0));

        // Large box: the radius, not the box, bounds the area.
        let g = gt_from_box(bx(0.0, 0.0, 200.0, 100.0), 0);
        let a = positive_area(&g, 8.0);
        assert!((a.x_min - (100.0 - 15.6)).abs() < 1e-12);
        assert!((a.x_max - (100.0 + 15.6)).abs() < 1e-12);
        assert_eq!((a.y_min, a.y_max), (38.0, 62.0));
    }

    #[test]
    fn single_gt_locations() {
        let g = gt_from_box(bx(88.0, 88.0, 112.0, 112.0), 0);
        let levels = levels_for_strides(&[8.0]).unwrap();
        let targets = assign(&[g], 200.0, 200.0, &levels);
        let at = |x: f64, y: f64| targets.iter().find(|t| t.location == Point::new(x, y)).unwrap().clone();
        assert!(at(100.0, 100.0).positive);
        assert!(!at(124.0, 100.0).positive);
        let t = at(100.0, 100.0);
        assert_eq!(t.displacement.unwrap().0[0], 100.0 - 88.0);
        assert_eq!(t.eiou_target, None);
    }

    #[test]
    fn nested_gts_go_to_smaller_box() {
        let big = gt_from_box(bx(60.0, 60.0, 140.0, 140.0), 0);
        let small = gt_from_box(bx(90.0, 90.0, 110.0, 110.0), 1);
        let levels = levels_for_strides(&[8.0]).unwrap();
        let t = assign(&[big, small], 200.0, 200.0, &levels);
        let c = t.iter().find(|t| t.location == Point::new(100.0, 100.0)).unwrap();
        assert_eq!(c.gt_index, Some(1));
    }

    #[test]
    fn level_ranges_route_large_objects_up() {
        let g = gt_from_box(bx(100.0, 100.0, 400.0, 400.0), 0);
        let t = assign(&[g], 512.0, 512.0, &default_levels());
        let levels: Vec<usize> = t.iter().filter(|t| t.positive).map(|t| t.level).collect();
        assert!(!levels.is_empty());
        // Max displacement from the centre region is about 150 px: level 2.
        assert!(levels.iter().all(|&l| l == 2), "{levels:?}");
    }

    #[test]
    fn empty_gt_list_is_all_negative() {
        let t = assign(&[], 64.0, 64.0, &default_levels());
        assert!(!t.is_empty());
        assert!(t.iter().all(|t| !t.positive && t.displacement.is_none()));
    }

    #[test]
    fn default_levels_match_fcos_ranges() {
        let l = default_levels();
        let ranges: Vec<(f64, f64)> = l.iter().map(|l| (l.min_extent, l.max_extent)).collect();
        assert_eq!(
            ranges,
            vec![
                (0.0, 64.0),
                (64.0, 128.0),
                (128.0, 256.0),
                (256.0, 512.0),
                (512.0, f64::INFINITY)
            ]
        );
        assert!(levels_for_strides(&[16.0, 8.0]).is_err());
        assert!(levels_for_strides(&[]).is_err());
    }

    #[test]
    fn encode_decode_examples() {
        let e = ExtremePoints::from_array([2.0, 4.0, 5.0, 1.0, 9.0, 5.0, 6.0, 8.0]).unwrap();
        let p = Point::new(5.0, 5.0);
        let d = encode(p, &e);
        assert_eq!(&d.0[..2], &[3.0, 1.0]);
        assert_eq!(decode(p, &d).unwrap(), e);
        assert_eq!(decode(p, &d).unwrap().left, Point::new(2.0, 4.0));

        let z = encode(p, &ExtremePoints::degenerate(p));
        assert_eq!(z.0, [0.0; 8]);
        assert_eq!(
            decode(p, &DisplacementVector([0.0; 8])).unwrap(),
            ExtremePoints::degenerate(p)
        );

        let mut bad = d;
        bad.0[4] = 10.0; // right.x = -5 < left.x
        assert!(matches!(decode(p, &bad), Err(AssignError::InvalidDecode(_))));
    }

    #[test]
    fn fill_eiou_target_only_for_positives() {
        let g = gt_from_box(bx(88.0, 88.0, 112.0, 112.0), 0);
        let levels = levels_for_strides(&[8.0]).unwrap();
        let mut targets = assign(std::slice::from_ref(&g), 200.0, 200.0, &levels);
        for t in &mut targets {
            t.fill_eiou_target(&g.extremes, &g.extremes);
        }
        assert!(targets.iter().all(|t| t.positive == t.eiou_target.is_some()));
        assert!(targets.iter().filter_map(|t| t.eiou_target).all(|v| v == 1.0));
    }
}
