use alloc::format;

use crate::error::{Error, Result};
use crate::math;

/// Axis-aligned box: top-left corner in 0-based float pixels, positive size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
        if !(w > 0.0 && h > 0.0)
            || !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate bounding box ({x}, {y}, {w}, {h})"
            )));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Euclidean distance between this box's center and another's.
    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        math::hypot(ax - bx, ay - by)
    }
}
