//! Annotated images, object-crop preprocessing, part catalogs and a
//! synthetic planted-part generator.

mod annotation;
mod catalog;
mod crop;
mod ppm;
mod synth;

pub use annotation::{load_corpus, parse_annotation, save_corpus, write_annotation, AnnotationFile};
pub use catalog::{canonical_part, filter_catalog, relabel, CatalogEntry, CatalogRules, PartCatalog};
pub use crop::{crop_and_warp, warp_mask, ContextPad, CropSpec, CropTransform};
pub use ppm::{decode_ppm, encode_ppm};
pub use synth::{generate_synthetic, render_pattern, ObjectLayout, PartLayout, Pattern, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::tensor::{Shape3, Tensor};

/// Intensity (on a 0..1 scale) subtracted from every pixel before it enters
/// a network.
pub const PIXEL_MEAN: f64 = 0.5;

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar 3xHxW tensor of `v / 255 - PIXEL_MEAN`, so zero is mid-gray.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (px[c] as f64 / 255.0 - PIXEL_MEAN) as f32;
            }
        }
        Tensor::from_vec(Shape3::new(3, self.height, self.width), out).expect("sized")
    }

    /// Inverse of [`RgbImage::to_tensor`] for 3-channel tensors, clamping to the 8-bit range.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.channels != 3 {
            return Err(Error::Format(format!("expected 3 channels, got {}", s.channels)));
        }
        let mut img = RgbImage::new(s.width, s.height);
        for y in 0..s.height {
            for x in 0..s.width {
                let px = [0, 1, 2].map(|c| ((t.get(c, y, x) as f64 + PIXEL_MEAN).clamp(0.0, 1.0) * 255.0).round() as u8);
                img.put_pixel(x, y, px);
            }
        }
        Ok(img)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartAnnotation {
    pub part_class: String,
    /// Index into the image's objects.
    pub parent: usize,
    pub bbox: BBox,
    /// Image-sized mask of the part's pixels.
    pub mask: PixelMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub image: RgbImage,
    pub objects: Vec<ObjectAnnotation>,
    pub parts: Vec<PartAnnotation>,
}

impl AnnotatedImage {
    /// Checks parent indices, mask sizes and that part boxes bound their masks.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.parts.iter().enumerate() {
            if p.parent >= self.objects.len() {
                return Err(Error::Data(format!(
                    "part {i} (`{}`) references object {} of {}",
                    p.part_class,
                    p.parent,
                    self.objects.len()
                )));
            }
            if p.mask.width() != self.image.width() || p.mask.height() != self.image.height() {
                return Err(Error::Data(format!("part {i} mask does not match the image size")));
            }
            if let Some(tight) = p.mask.bounding_box() {
                if tight != p.bbox {
                    return Err(Error::Data(format!(
                        "part {i} box {:?} does not bound its mask {:?}",
                        p.bbox, tight
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A part class within an object class, e.g. `(car, wheel)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartKey {
    pub object: String,
    pub part: String,
}

impl PartKey {
    pub fn new(object: impl Into<String>, part: impl Into<String>) -> Self {
        PartKey {
            object: object.into(),
            part: part.into(),
        }
    }
}

impl std::fmt::Display for PartKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.object, self.part)
    }
}
