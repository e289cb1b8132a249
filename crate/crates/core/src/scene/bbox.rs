//! Canvas-normalized axis-aligned boxes.
//!
//! Coordinates are fractions of the canvas with the origin at the top-left
//! corner and `y` growing downward.

use serde::{Deserialize, Serialize};

use super::SceneError;

/// A validated box: `0 <= x_min < x_max <= 1` and `0 <= y_min < y_max <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, SceneError> {
        let raw = RawBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !raw.is_valid() {
            return Err(SceneError::InvalidBox(raw));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from its center and size, shifting it back inside the
    /// canvas when it pokes out. Width and height are capped at 1.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, SceneError> {
        let w = width.min(1.0);
        let h = height.min(1.0);
        let x_min = (cx - w / 2.0).clamp(0.0, 1.0 - w);
        let y_min = (cy - h / 2.0).clamp(0.0, 1.0 - h);
        Self::new(x_min, y_min, (x_min + w).min(1.0), (y_min + h).min(1.0))
    }

    pub fn full_canvas() -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 1.0,
            y_max: 1.0,
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center_x(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }

    pub fn area(&self) -> f64 {
        bbox_area(self)
    }

    /// Physical width/height ratio on a canvas whose width/height ratio is
    /// `canvas_aspect`.
    pub fn aspect(&self, canvas_aspect: f64) -> f64 {
        self.width() * canvas_aspect / self.height()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn to_raw(self) -> RawBox {
        RawBox {
            x_min: self.x_min,
            y_min: self.y_min,
            x_max: self.x_max,
            y_max: self.y_max,
        }
    }

    /// Translates the box, returning `None` when the result leaves the canvas.
    pub fn translated(&self, dx: f64, dy: f64) -> Option<Self> {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy).ok()
    }

    /// Moves the box by the smallest shift that puts it fully inside the canvas.
    pub fn shifted_inside(x_min: f64, y_min: f64, width: f64, height: f64) -> Result<Self, SceneError> {
        let w = width.min(1.0);
        let h = height.min(1.0);
        let x = x_min.clamp(0.0, 1.0 - w);
        let y = y_min.clamp(0.0, 1.0 - h);
        Self::new(x, y, (x + w).min(1.0), (y + h).min(1.0))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Whether `other` lies fully inside `self` (boundaries may touch).
    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min && other.y_min >= self.y_min && other.x_max <= self.x_max && other.y_max <= self.y_max
    }

    /// Chebyshev gap between the two boxes; zero when they touch or overlap.
    pub fn gap(&self, other: &BBox) -> f64 {
        let gx = (other.x_min - self.x_max).max(self.x_min - other.x_max).max(0.0);
        let gy = (other.y_min - self.y_max).max(self.y_min - other.y_max).max(0.0);
        gx.max(gy)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawBox::deserialize(deserializer)?;
        raw.to_bbox().map_err(serde::de::Error::custom)
    }
}

/// Area of a box as a fraction of the canvas.
pub fn bbox_area(b: &BBox) -> f64 {
    (b.x_max - b.x_min) * (b.y_max - b.y_min)
}

/// Intersection over union of two boxes; 0 when their interiors are disjoint.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Unvalidated box coordinates as they arrive from a model or a file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RawBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x_min)
            && in_unit(self.y_min)
            && in_unit(self.x_max)
            && in_unit(self.y_max)
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite() && self.y_min.is_finite() && self.x_max.is_finite() && self.y_max.is_finite()
    }

    pub fn in_canvas(&self) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= 1.0 && self.y_max <= 1.0
    }

    /// Unsigned area of the (possibly inverted) box.
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).abs() * (self.y_max - self.y_min).abs()
    }

    /// Sorts each coordinate pair, replaces non-finite values and clamps into
    /// the unit square. The result may still have zero width or height.
    pub fn clamped(&self) -> RawBox {
        let fix = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 };
        let (x0, x1) = (fix(self.x_min), fix(self.x_max));
        let (y0, y1) = (fix(self.y_min), fix(self.y_max));
        RawBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
    }

    pub fn to_bbox(&self) -> Result<BBox, SceneError> {
        BBox::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }

    /// [`clamped`](Self::clamped), then any side shorter than [`MIN_EXTENT`]
    /// is widened about its center and pushed back inside the canvas.
    pub fn sanitized(&self) -> BBox {
        let c = self.clamped();
        let widen = |lo: f64, hi: f64| {
            if hi - lo >= MIN_EXTENT {
                return (lo, hi);
            }
            let lo = ((lo + hi) / 2.0 - MIN_EXTENT / 2.0).clamp(0.0, 1.0 - MIN_EXTENT);
            let hi = (lo + MIN_EXTENT).min(1.0);
            (hi - MIN_EXTENT, hi)
        };
        let (x0, x1) = widen(c.x_min, c.x_max);
        let (y0, y1) = widen(c.y_min, c.y_max);
        BBox::new(x0, y0, x1, y1).expect("sanitized box is valid")
    }
}

/// Smallest side length [`RawBox::sanitized`] produces.
pub const MIN_EXTENT: f64 = 1e-4;

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        b.to_raw()
    }
}
