//! Per-image annotation JSON and the on-disk corpus layout: `NNNNN.ppm`
//! next to `NNNNN.json`, loaded in file-name order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ppm::{decode_ppm, encode_ppm};
use super::{AnnotatedImage, ObjectAnnotation, PartAnnotation};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mask::PixelMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub objects: Vec<ObjectAnnotation>,
    #[serde(default)]
    pub parts: Vec<RawPart>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPart {
    pub part_class: String,
    pub parent: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub mask_rle: Vec<u32>,
}

/// Parses an annotation for an image of the given size.
pub fn parse_annotation(text: &str, width: usize, height: usize) -> Result<(Vec<ObjectAnnotation>, Vec<PartAnnotation>)> {
    let file: AnnotationFile = serde_json::from_str(text)?;
    let mut parts = Vec::with_capacity(file.parts.len());
    for p in file.parts {
        if p.parent >= file.objects.len() {
            return Err(Error::Data(format!(
                "part `{}` references object {} of {}",
                p.part_class,
                p.parent,
                file.objects.len()
            )));
        }
        parts.push(PartAnnotation {
            mask: PixelMask::from_rle(width, height, &p.mask_rle)?,
            part_class: p.part_class,
            parent: p.parent,
            bbox: p.bbox,
        });
    }
    Ok((file.objects, parts))
}

pub fn write_annotation(img: &AnnotatedImage) -> String {
    let file = AnnotationFile {
        objects: img.objects.clone(),
        parts: img
            .parts
            .iter()
            .map(|p| RawPart {
                part_class: p.part_class.clone(),
                parent: p.parent,
                bbox: p.bbox,
                mask_rle: p.mask.to_rle(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("annotation serializes")
}

pub fn save_corpus(dir: &Path, images: &[AnnotatedImage]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        let ppm = dir.join(format!("{i:05}.ppm"));
        std::fs::write(&ppm, encode_ppm(&img.image)).map_err(|e| Error::io(&ppm, e))?;
        let json = dir.join(format!("{i:05}.json"));
        std::fs::write(&json, write_annotation(img)).map_err(|e| Error::io(&json, e))?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Vec<AnnotatedImage>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            stems.push(path.with_extension(""));
        }
    }
    stems.sort();
    stems
        .iter()
        .map(|stem| {
            let ppm = stem.with_extension("ppm");
            let json = stem.with_extension("json");
            let bytes = std::fs::read(&ppm).map_err(|e| Error::io(&ppm, e))?;
            let image = decode_ppm(&bytes)?;
            let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
            let (objects, parts) = parse_annotation(&text, image.width(), image.height())
                .map_err(|e| Error::Data(format!("{}: {e}", json.display())))?;
            let img = AnnotatedImage { image, objects, parts };
            img.validate()?;
            Ok(img)
        })
        .collect()
}
