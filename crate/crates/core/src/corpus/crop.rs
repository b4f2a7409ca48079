//! Object crops: pad the box with context, then warp it to the network input
//! size with bilinear sampling.

use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, PIXEL_MEAN};
#[cfg(doc)]
use super::RgbImage;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::tensor::{Shape3, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPad {
    /// Fraction of the box width (height) added on each side.
    Fraction(f64),
    /// Fixed margin in source pixels on each side.
    Pixels(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub context_pad: ContextPad,
    pub width: usize,
    pub height: usize,
}

impl CropSpec {
    /// 10% context, warped to the spatial size of `input`.
    pub fn for_input(input: Shape3) -> Self {
        CropSpec {
            context_pad: ContextPad::Fraction(0.10),
            width: input.width,
            height: input.height,
        }
    }

    /// Source region covered by the crop of `object`.
    pub fn region(&self, object: &BBox) -> Result<BBox> {
        if !(object.w > 0.0 && object.h > 0.0) {
            return Err(Error::DegenerateBox(format!("object box {object:?}")));
        }
        let (px, py) = match self.context_pad {
            ContextPad::Fraction(f) if f >= 0.0 => (f * object.w, f * object.h),
            ContextPad::Pixels(p) if p >= 0.0 => (p, p),
            _ => return Err(Error::Config("context pad must be non-negative".into())),
        };
        Ok(BBox::new(object.x - px, object.y - py, object.w + 2.0 * px, object.h + 2.0 * py))
    }
}

/// Axis-aligned affine map `crop = (source - offset) * scale`, in continuous
/// pixel-edge coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl CropTransform {
    pub fn identity() -> Self {
        CropTransform {
            offset_x: 0.0,
            offset_y: 0.0,
            scale_x: 1.0,
            scale_y: 1.0,
        }
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.offset_x) * self.scale_x, (y - self.offset_y) * self.scale_y)
    }

    pub fn map_box(&self, b: &BBox) -> BBox {
        let (x, y) = self.map_point(b.x, b.y);
        BBox::new(x, y, b.w * self.scale_x, b.h * self.scale_y)
    }

    pub fn inverse(&self) -> CropTransform {
        CropTransform {
            offset_x: -self.offset_x * self.scale_x,
            offset_y: -self.offset_y * self.scale_y,
            scale_x: 1.0 / self.scale_x,
            scale_y: 1.0 / self.scale_y,
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &CropTransform) -> CropTransform {
        CropTransform {
            offset_x: self.offset_x + next.offset_x / self.scale_x,
            offset_y: self.offset_y + next.offset_y / self.scale_y,
            scale_x: self.scale_x * next.scale_x,
            scale_y: self.scale_y * next.scale_y,
        }
    }
}

/// Crops object `object_index` with context and warps it to `spec`'s size.
/// Values are mean-centered like [`RgbImage::to_tensor`]; samples falling
/// outside the source image read as zero (the mean).
pub fn crop_and_warp(img: &AnnotatedImage, object_index: usize, spec: &CropSpec) -> Result<(Tensor, CropTransform)> {
    let object = img
        .objects
        .get(object_index)
        .ok_or_else(|| Error::Data(format!("object {object_index} does not exist")))?;
    let region = spec.region(&object.bbox)?;
    let transform = CropTransform {
        offset_x: region.x,
        offset_y: region.y,
        scale_x: spec.width as f64 / region.w,
        scale_y: spec.height as f64 / region.h,
    };
    let src = &img.image;
    let (sw, sh) = (src.width() as i64, src.height() as i64);
    let sample = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= sw || y >= sh {
            0.0
        } else {
            src.pixel(x as usize, y as usize)[c] as f64 / 255.0 - PIXEL_MEAN
        }
    };
    let plane = spec.width * spec.height;
    let mut out = vec![0.0f32; 3 * plane];
    for v in 0..spec.height {
        let sy = region.y + (v as f64 + 0.5) / transform.scale_y - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        for u in 0..spec.width {
            let sx = region.x + (u as f64 + 0.5) / transform.scale_x - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (xi, yi) = (x0 as i64, y0 as i64);
            for c in 0..3 {
                let top = sample(xi, yi, c) * (1.0 - fx) + sample(xi + 1, yi, c) * fx;
                let bottom = sample(xi, yi + 1, c) * (1.0 - fx) + sample(xi + 1, yi + 1, c) * fx;
                out[c * plane + v * spec.width + u] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    let tensor = Tensor::from_vec(Shape3::new(3, spec.height, spec.width), out)?;
    Ok((tensor, transform))
}

/// Nearest-neighbour warp of an image-sized mask into a `width` x `height` crop.
pub fn warp_mask(mask: &PixelMask, transform: &CropTransform, width: usize, height: usize) -> PixelMask {
    let inv = transform.inverse();
    PixelMask::from_fn(width, height, |u, v| {
        let (x, y) = inv.map_point(u as f64 + 0.5, v as f64 + 0.5);
        let (x, y) = (x.floor(), y.floor());
        x >= 0.0
            && y >= 0.0
            && (x as usize) < mask.width()
            && (y as usize) < mask.height()
            && mask.get(x as usize, y as usize)
    })
}
