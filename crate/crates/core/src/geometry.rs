//! Axis-aligned box arithmetic.
//!
//! Coordinates are continuous: a box spanning `[0, 2]` has width 2, not 3.
//! Zero-area boxes are legal everywhere and never produce errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `(x_min, y_min, x_max, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite or inverted coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.is_valid() {
            return Err(Error::Domain(format!(
                "invalid box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
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

    /// Overlap rectangle, `None` when the boxes do not touch.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of `inner`'s area that lies inside `outer`.
///
/// A zero-area `inner` counts as fully inside when its corner point lies in
/// `outer` (for a degenerate segment, when the whole segment does).
pub fn containment_fraction(inner: &BBox, outer: &BBox) -> f64 {
    let a = inner.area();
    if a <= 0.0 {
        let inside = outer.contains_point(inner.x_min, inner.y_min)
            && outer.contains_point(inner.x_max, inner.y_max);
        return if inside { 1.0 } else { 0.0 };
    }
    (inner.intersection_area(outer) / a).clamp(0.0, 1.0)
}
