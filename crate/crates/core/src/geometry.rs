//! Extreme-point quadrilaterals and the similarity measures defined on them.
//!
//! All coordinates are image pixels with `x` growing rightward and `y`
//! growing downward, so the "top" extreme point is the one with minimal `y`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Edges shorter than this are treated as degenerate by [`cos_sim`].
pub const DEGENERATE_EDGE_NORM: f64 = 1e-8;

/// Quadrilaterals with area at or below this are rejected by [`quad_iou_exact`].
pub const DEGENERATE_QUAD_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("extreme points out of order: {0}")]
    Unordered(String),
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("degenerate quadrilateral (area {0:e})")]
    DegenerateQuad(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Vector from `self` to `to`.
    pub fn to(self, to: Point) -> Vector {
        Vector::new(to.x - self.x, to.y - self.y)
    }

    pub fn translate(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// A displacement in the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector {
    pub dx: f64,
    pub dy: f64,
}

impl Vector {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn dot(self, other: Vector) -> f64 {
        self.dx * other.dx + self.dy * other.dy
    }

    pub fn cross(self, other: Vector) -> f64 {
        self.dx * other.dy - self.dy * other.dx
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }
}

impl std::ops::Add for Vector {
    type Output = Vector;
    fn add(self, rhs: Vector) -> Vector {
        Vector::new(self.dx + rhs.dx, self.dy + rhs.dy)
    }
}

/// The four extreme points of an object.
///
/// Construction through [`ExtremePoints::new`] enforces that `left` carries
/// the minimal x, `right` the maximal x, `top` the minimal y and `bottom`
/// the maximal y among the four points. Under that invariant the points,
/// traversed left, top, right, bottom, form a convex (possibly degenerate)
/// quadrilateral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremePoints {
    pub left: Point,
    pub top: Point,
    pub right: Point,
    pub bottom: Point,
}

impl ExtremePoints {
    pub fn new(left: Point, top: Point, right: Point, bottom: Point) -> Result<Self, GeometryError> {
        let e = Self {
            left,
            top,
            right,
            bottom,
        };
        e.validate()?;
        Ok(e)
    }

    /// Builds from the flat layout `x_l, y_l, x_t, y_t, x_r, y_r, x_b, y_b`.
    pub fn from_array(c: [f64; 8]) -> Result<Self, GeometryError> {
        Self::new(
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        )
    }

    pub fn from_slice(c: &[f64]) -> Result<Self, GeometryError> {
        let arr: [f64; 8] = c
            .try_into()
            .map_err(|_| GeometryError::Unordered(format!("expected 8 coordinates, got {}", c.len())))?;
        Self::from_array(arr)
    }

    /// All four points at `p`.
    pub fn degenerate(p: Point) -> Self {
        Self {
            left: p,
            top: p,
            right: p,
            bottom: p,
        }
    }

    /// Extremes of the axis-aligned rectangle at the midpoints of its sides.
    pub fn from_box_midpoints(b: &AxisAlignedBox) -> Self {
        let cx = 0.5 * (b.x_min + b.x_max);
        let cy = 0.5 * (b.y_min + b.y_max);
        Self {
            left: Point::new(b.x_min, cy),
            top: Point::new(cx, b.y_min),
            right: Point::new(b.x_max, cy),
            bottom: Point::new(cx, b.y_max),
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.left.x,
            self.left.y,
            self.top.x,
            self.top.y,
            self.right.x,
            self.right.y,
            self.bottom.x,
            self.bottom.y,
        ]
    }

    /// Points in traversal order left, top, right, bottom.
    pub fn points(&self) -> [Point; 4] {
        [self.left, self.top, self.right, self.bottom]
    }

    /// Applies `p -> scale * p + (dx, dy)` to every point.
    pub fn scale_translate(&self, scale: f64, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        let f = |p: Point| Point::new(scale * p.x + dx, scale * p.y + dy);
        Self::new(f(self.left), f(self.top), f(self.right), f(self.bottom))
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if !self.points().iter().all(Point::is_finite) {
            return Err(GeometryError::NonFinite("extreme points"));
        }
        let pts = self.points();
        let min_x = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        if self.left.x != min_x {
            return Err(GeometryError::Unordered(format!(
                "left.x = {} is not the minimal x ({min_x})",
                self.left.x
            )));
        }
        if self.right.x != max_x {
            return Err(GeometryError::Unordered(format!(
                "right.x = {} is not the maximal x ({max_x})",
                self.right.x
            )));
        }
        if self.top.y != min_y {
            return Err(GeometryError::Unordered(format!(
                "top.y = {} is not the minimal y ({min_y})",
                self.top.y
            )));
        }
        if self.bottom.y != max_y {
            return Err(GeometryError::Unordered(format!(
                "bottom.y = {} is not the maximal y ({max_y})",
                self.bottom.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl AxisAlignedBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// From the COCO `[x, y, width, height]` layout.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Overlap of two boxes, `None` when they do not share a region.
    pub fn intersect(&self, other: &AxisAlignedBox) -> Option<AxisAlignedBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(AxisAlignedBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

/// Directed edges l->t, t->r, r->b, b->l of an extreme-point quadrilateral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadEdges {
    pub e1: Vector,
    pub e2: Vector,
    pub e3: Vector,
    pub e4: Vector,
}

impl QuadEdges {
    pub fn as_array(&self) -> [Vector; 4] {
        [self.e1, self.e2, self.e3, self.e4]
    }

    pub fn sum(&self) -> Vector {
        self.e1 + self.e2 + self.e3 + self.e4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EiouBreakdown {
    pub rect_iou: f64,
    pub cos_sim: f64,
    pub eiou: f64,
}

pub fn enclosing_box(e: &ExtremePoints) -> AxisAlignedBox {
    AxisAlignedBox {
        x_min: e.left.x,
        y_min: e.top.y,
        x_max: e.right.x,
        y_max: e.bottom.y,
    }
}

/// Intersection over union of two axis-aligned boxes.
///
/// Two zero-area boxes score 1 when they coincide and 0 otherwise.
pub fn rect_iou(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 && area_b <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn edge_vectors(e: &ExtremePoints) -> QuadEdges {
    QuadEdges {
        e1: e.left.to(e.top),
        e2: e.top.to(e.right),
        e3: e.right.to(e.bottom),
        e4: e.bottom.to(e.left),
    }
}

/// Cosine of the angle between two edges, with the degenerate-edge rule:
/// both shorter than [`DEGENERATE_EDGE_NORM`] gives 1, exactly one gives 0.
pub(crate) fn edge_cosine(a: Vector, b: Vector) -> f64 {
    let na = a.norm_sq();
    let nb = b.norm_sq();
    let tiny = DEGENERATE_EDGE_NORM * DEGENERATE_EDGE_NORM;
    match (na < tiny, nb < tiny) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => (a.dot(b) / (na * nb).sqrt()).clamp(-1.0, 1.0),
    }
}

/// Mean cosine similarity between corresponding edges of two quadrilaterals.
pub fn cos_sim(gt: &ExtremePoints, pred: &ExtremePoints) -> f64 {
    let g = edge_vectors(gt).as_array();
    let p = edge_vectors(pred).as_array();
    let total: f64 = g.iter().zip(&p).map(|(a, b)| edge_cosine(*a, *b)).sum();
    0.25 * total
}

/// EIoU = (rect IoU + (1 + cos_sim) / 2) / 2 over the enclosing boxes and
/// paired edges of two extreme-point quadrilaterals.
pub fn eiou(gt: &ExtremePoints, pred: &ExtremePoints) -> EiouBreakdown {
    let rect_iou = rect_iou(&enclosing_box(gt), &enclosing_box(pred));
    let cos_sim = cos_sim(gt, pred);
    let eiou = 0.5 * (rect_iou + 0.5 * (1.0 + cos_sim));
    EiouBreakdown {
        rect_iou,
        cos_sim,
        eiou,
    }
}

/// Signed shoelace area; positive for counter-clockwise order in a y-up frame.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Clips `subject` against every half-plane of the convex polygon `clip`.
///
/// Both polygons must be convex and share the same orientation with
/// positive signed area.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = a.to(b);
        if edge.norm_sq() == 0.0 {
            continue;
        }
        let side = |p: Point| edge.cross(a.to(p));
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let s_cur = side(cur);
            let s_prev = side(prev);
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(segment_cut(prev, cur, s_prev, s_cur));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(segment_cut(prev, cur, s_prev, s_cur));
            }
        }
    }
    output
}

fn segment_cut(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Quadrilateral vertices in positive orientation with repeats removed.
fn oriented_quad(e: &ExtremePoints) -> Result<(Vec<Point>, f64), GeometryError> {
    let mut pts: Vec<Point> = Vec::with_capacity(4);
    for p in e.points() {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    let area = signed_area(&pts);
    if area.abs() <= DEGENERATE_QUAD_AREA {
        return Err(GeometryError::DegenerateQuad(area.abs()));
    }
    if area < 0.0 {
        pts.reverse();
    }
    Ok((pts, area.abs()))
}

/// Exact IoU of the two convex quadrilaterals spanned by the extreme points.
pub fn quad_iou_exact(a: &ExtremePoints, b: &ExtremePoints) -> Result<f64, GeometryError> {
    let (pa, area_a) = oriented_quad(a)?;
    let (pb, area_b) = oriented_quad(b)?;
    let inter = signed_area(&clip_convex(&pa, &pb)).abs();
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(c: [f64; 8]) -> ExtremePoints {
        ExtremePoints::from_array(c).unwrap()
    }

    fn unit_diamond() -> ExtremePoints {
        pts([0.0, 0.5, 0.5, 0.0, 1.0, 0.5, 0.5, 1.0])
    }

    #[test]
    fn enclosing_box_examples() {
        let b = enclosing_box(&unit_diamond());
        assert_eq!(b, AxisAlignedBox::new(0.0, 0.0, 1.0, 1.0).unwrap());

        let b = enclosing_box(&ExtremePoints::degenerate(Point::new(3.0, 3.0)));
        assert_eq!(b, AxisAlignedBox::new(3.0, 3.0, 3.0, 3.0).unwrap());
        assert_eq!(b.area(), 0.0);

        let tri = pts([0.0, 0.0, 2.0, 0.0, 4.0, 0.0, 2.0, 3.0]);
        assert_eq!(enclosing_box(&tri), AxisAlignedBox::new(0.0, 0.0, 4.0, 3.0).unwrap());
    }

    #[test]
    fn rejects_unordered_extremes() {
        // right.x below left.x
        assert!(ExtremePoints::from_array([2.0, 0.5, 1.5, 0.0, 1.0, 0.5, 1.5, 1.0]).is_err());
        // top is not the highest point
        assert!(ExtremePoints::from_array([0.0, -1.0, 0.5, 0.0, 1.0, 0.5, 0.5, 1.0]).is_err());
        assert!(ExtremePoints::from_array([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rect_iou_examples() {
        let a = AxisAlignedBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(rect_iou(&a, &a), 1.0);
        let far = AxisAlignedBox::new(2.0, 2.0, 3.0, 3.0).unwrap();
        assert_eq!(rect_iou(&a, &far), 0.0);
        let shifted = AxisAlignedBox::new(0.5, 0.0, 1.5, 1.0).unwrap();
        // intersection 0.5, union 1.5
        assert!((rect_iou(&a, &shifted) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rect_iou_zero_area_rule() {
        let p = AxisAlignedBox::new(3.0, 3.0, 3.0, 3.0).unwrap();
        let q = AxisAlignedBox::new(4.0, 3.0, 4.0, 3.0).unwrap();
        let seg = AxisAlignedBox::new(0.0, 1.0, 5.0, 1.0).unwrap();
        assert_eq!(rect_iou(&p, &p), 1.0);
        assert_eq!(rect_iou(&p, &q), 0.0);
        assert_eq!(rect_iou(&seg, &seg), 1.0);
        let unit = AxisAlignedBox::new(0.0, 0.0, 5.0, 5.0).unwrap();
        assert_eq!(rect_iou(&seg, &unit), 0.0);
    }

    #[test]
    fn edge_vectors_examples() {
        let e = edge_vectors(&unit_diamond());
        assert_eq!(e.e1, Vector::new(0.5, -0.5));
        assert_eq!(e.e2, Vector::new(0.5, 0.5));
        assert_eq!(e.e3, Vector::new(-0.5, 0.5));
        assert_eq!(e.e4, Vector::new(-0.5, -0.5));
        assert_eq!(e.sum(), Vector::new(0.0, 0.0));

        let d = edge_vectors(&ExtremePoints::degenerate(Point::new(7.0, -2.0)));
        for v in d.as_array() {
            assert_eq!(v, Vector::new(0.0, 0.0));
        }
    }

    #[test]
    fn cos_sim_examples() {
        let d = unit_diamond();
        assert_eq!(cos_sim(&d, &d), 1.0);

        // Square with its extremes on the corners, and the same square with
        // every label moved one corner clockwise: each edge pair is orthogonal.
        let (corners, rotated) = rotated_corner_square();
        assert_eq!(cos_sim(&corners, &rotated), 0.0);

        // 2x1 rectangle diamond: edges (1, -0.5) family.
        let wide = pts([0.0, 0.5, 1.0, 0.0, 2.0, 0.5, 1.0, 1.0]);
        let expected = (0.5 * 1.0 + 0.5 * 0.5) / ((0.5f64).sqrt() * (1.25f64).sqrt());
        assert!((cos_sim(&d, &wide) - expected).abs() < 1e-12);
        assert!((expected - 0.948_683_298_050_513_8).abs() < 1e-12);
    }

    /// Unit square with l=(0,1), t=(0,0), r=(1,0), b=(1,1) and its image
    /// under the 90 degree rotation (x, y) -> (1 - y, x) with labels kept.
    pub(crate) fn rotated_corner_square() -> (ExtremePoints, ExtremePoints) {
        let a = pts([0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let rot = |p: Point| Point::new(1.0 - p.y, p.x);
        let [l, t, r, b] = a.points().map(rot);
        (a, ExtremePoints::new(l, t, r, b).unwrap())
    }

    #[test]
    fn cos_sim_degenerate_pairs() {
        let p = ExtremePoints::degenerate(Point::new(1.0, 1.0));
        assert_eq!(cos_sim(&p, &p), 1.0);
        assert_eq!(cos_sim(&p, &unit_diamond()), 0.0);
        // Triangle: bottom coincides with right, so edge r->b is zero.
        let tri = pts([0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0]);
        let c = cos_sim(&tri, &tri);
        assert_eq!(c, 1.0);
    }

    #[test]
    fn eiou_examples() {
        let d = unit_diamond();
        let same = eiou(&d, &d);
        assert_eq!(same.eiou, 1.0);
        assert_eq!(same.rect_iou, 1.0);
        assert_eq!(same.cos_sim, 1.0);

        let shifted = d.scale_translate(1.0, 0.5, 0.0).unwrap();
        let s = eiou(&d, &shifted);
        assert!((s.rect_iou - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.cos_sim - 1.0).abs() < 1e-12);
        assert!((s.eiou - 2.0 / 3.0).abs() < 1e-12);

        let (corners, rotated) = rotated_corner_square();
        let r = eiou(&corners, &rotated);
        assert_eq!(r.rect_iou, 1.0);
        assert!(r.cos_sim.abs() < 1e-12);
        assert!((r.eiou - 0.75).abs() < 1e-12);
    }

    #[test]
    fn quad_iou_basics() {
        let d = unit_diamond();
        assert!((quad_iou_exact(&d, &d).unwrap() - 1.0).abs() < 1e-15);
        let far = d.scale_translate(1.0, 5.0, 5.0).unwrap();
        assert_eq!(quad_iou_exact(&d, &far).unwrap(), 0.0);
        // Shift by half the width: the overlap is a diamond of half size
        // (area 1/8), union = 1/2 + 1/2 - 1/8.
        let shifted = d.scale_translate(1.0, 0.5, 0.0).unwrap();
        let iou = quad_iou_exact(&d, &shifted).unwrap();
        assert!((iou - (0.125 / 0.875)).abs() < 1e-12, "{iou}");
    }

    #[test]
    fn quad_iou_rejects_degenerate() {
        let line = pts([0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            quad_iou_exact(&line, &unit_diamond()),
            Err(GeometryError::DegenerateQuad(_))
        ));
    }

    #[test]
    fn quad_iou_triangle_with_repeated_vertex() {
        // l == t collapses the quad into a triangle.
        let tri = pts([0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 2.0]);
        assert!((quad_iou_exact(&tri, &tri).unwrap() - 1.0).abs() < 1e-15);
    }
}
