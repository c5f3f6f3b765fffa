//! Geometry toolkit for detectors that regress the four extreme points
//! (leftmost, topmost, rightmost, bottommost) of an object.
//!
//! The crate is organised around [`geometry::ExtremePoints`]:
//!
//! * [`geometry`] - enclosing boxes, the EIoU similarity and an exact
//!   convex-quadrilateral IoU used for validation.
//! * [`loss`] - EIoU regression loss with analytic gradients and a
//!   Smooth-L1 baseline.
//! * [`assignment`] - dynamic-radius positive sampling over a feature
//!   pyramid and displacement encoding.
//! * [`extraction`] - extreme points from COCO polygon annotations.
//! * [`postprocess`] - center-ness and EIoU-guided non-maximum suppression.
//! * [`scenario`] and [`eval`] - seeded synthetic detections and a small
//!   AP evaluator for comparing NMS ranking keywords.

pub mod assignment;
pub mod eval;
pub mod extraction;
pub mod geometry;
pub mod gradcheck;
pub mod loss;
pub mod postprocess;
pub mod records;
pub mod scenario;

pub use assignment::{AssignmentTarget, DisplacementVector, GroundTruthInstance, LevelSpec};
pub use geometry::{AxisAlignedBox, EiouBreakdown, ExtremePoints, Point, QuadEdges, Vector};
pub use loss::{LossGradient, LossValue};
pub use postprocess::{Detection, RankingMode};
