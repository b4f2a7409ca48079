use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned half-open box `[x, x + w) x [y, y + h)` in pixel units.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Intersection-over-union without the positive-area check.
    #[inline]
    pub fn iou_unchecked(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// Intersection with `[0, width) x [0, height)`, kept at least one pixel
    /// wide and tall inside the image.
    pub fn clip(&self, width: usize, height: usize) -> BBox {
        let (iw, ih) = (width as f64, height as f64);
        let clip_axis = |lo: f64, len: f64, max: f64| -> (f64, f64) {
            let mut a = lo.clamp(0.0, max);
            let mut b = (lo + len).clamp(0.0, max);
            if b - a < 1.0 {
                if a + 1.0 <= max {
                    b = a + 1.0;
                } else {
                    a = (max - 1.0).max(0.0);
                    b = max;
                }
            }
            (a, b - a)
        };
        let (x, w) = clip_axis(self.x, self.w, iw);
        let (y, h) = clip_axis(self.y, self.h, ih);
        BBox::new(x, y, w, h)
    }
}

/// Ground-truth part instance in some image's coordinate frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartBox {
    pub image_id: usize,
    pub part_class: String,
    pub bbox: BBox,
}

/// Intersection-over-union of two positive-area boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(Error::DegenerateBox(format!(
                "{}x{} at ({}, {})",
                bx.w, bx.h, bx.x, bx.y
            )));
        }
    }
    Ok(a.iou_unchecked(b))
}
