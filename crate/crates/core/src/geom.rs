//! Geometry primitives and coordinate conventions.
//!
//! Everything downstream leans on two conventions fixed here:
//!
//! * Pixel `(ix, iy)` of a grid with stride `s` is attributed the continuous
//!   location `((ix + 0.5) * s, (iy + 0.5) * s)` — half-integer centers.
//! * Boxes are continuous real-valued rectangles (COCO style), never snapped
//!   to integer coordinates. They are half-open on the right/bottom for
//!   rasterization purposes and closed when treated as border geometry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("rectangle is degenerate or reversed: [{left}, {top}, {right}, {bottom}]")]
    InvalidRect {
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    },
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("image dimensions {width}x{height} are not divisible by stride {stride}")]
    StrideMismatch { width: u32, height: u32, stride: u32 },
}

/// 2D point or offset in pixels at full input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned box with `left < right` and `top < bottom`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Rect {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, GeomError> {
        if !(left.is_finite() && top.is_finite() && right.is_finite() && bottom.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        if !(left < right && top < bottom) {
            return Err(GeomError::InvalidRect {
                left,
                top,
                right,
                bottom,
            });
        }
        Ok(Rect {
            left,
            top,
            right,
            bottom,
        })
    }

    /// COCO-style `[x, y, w, h]` box.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeomError> {
        Rect::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.left && p.x <= self.right && p.y >= self.top && p.y <= self.bottom
    }

    pub fn contains_strict(&self, p: Vec2) -> bool {
        p.x > self.left && p.x < self.right && p.y > self.top && p.y < self.bottom
    }

    /// Intersection, or `None` when interiors are disjoint.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right.min(other.right);
        let bottom = self.bottom.min(other.bottom);
        if left < right && top < bottom {
            Some(Rect {
                left,
                top,
                right,
                bottom,
            })
        } else {
            None
        }
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.intersect(other).is_some()
    }
}

/// Width/height of the full-resolution input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
}

impl ImageSpec {
    pub fn new(width: u32, height: u32) -> Result<Self, GeomError> {
        if width == 0 || height == 0 {
            return Err(GeomError::EmptyImage { width, height });
        }
        Ok(ImageSpec { width, height })
    }

    /// Both dimensions must be divisible by the configured output stride.
    pub fn check_stride(&self, stride: u32) -> Result<(), GeomError> {
        if stride == 0 || self.width % stride != 0 || self.height % stride != 0 {
            return Err(GeomError::StrideMismatch {
                width: self.width,
                height: self.height,
                stride,
            });
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// The image as a rectangle `[0, w] x [0, h]`.
    pub fn rect(&self) -> Rect {
        Rect {
            left: 0.0,
            top: 0.0,
            right: self.width as f64,
            bottom: self.height as f64,
        }
    }
}

/// Continuous location attributed to grid cell `(ix, iy)` at the given stride.
pub fn pixel_center(ix: u32, iy: u32, stride: u32) -> Vec2 {
    Vec2::new(
        (ix as f64 + 0.5) * stride as f64,
        (iy as f64 + 0.5) * stride as f64,
    )
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let inter = match a.intersect(b) {
        Some(r) => r.area(),
        None => return 0.0,
    };
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Centroid of a box.
pub fn centroid(box_: &Rect) -> Vec2 {
    Vec2::new(
        (box_.left + box_.right) * 0.5,
        (box_.top + box_.bottom) * 0.5,
    )
}
