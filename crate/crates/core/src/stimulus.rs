//! Feature-map local maxima and the image-space detections they induce.

use std::io::Write;
use std::sync::Arc;

use crate::bbox::BBox;
use crate::error::Result;
use crate::geometry::{layer_geometry, LayerGeometry};
use crate::nn::NetworkSpec;
use crate::tensor::ChannelView;

/// Default IoU above which NMS suppresses a lower-scored detection.
pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// A strict local maximum of one feature map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activation {
    pub c: usize,
    pub r: usize,
    pub value: f32,
    /// Row-major 3x3 values around `(c, r)`, zero outside the map.
    pub neighborhood: [f32; 9],
}

/// Cells strictly greater than all in-bounds 8-neighbours and `min_value`,
/// sorted by value descending then row-major.
pub fn local_maxima(map: ChannelView<'_>, min_value: f32) -> Vec<Activation> {
    let (w, h) = (map.width as i64, map.height as i64);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = map.at(c as usize, r as usize);
            if v <= min_value {
                continue;
            }
            let mut is_max = true;
            'scan: for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nc, nr) = (c + dc, r + dr);
                    if (dc, dr) == (0, 0) || nc < 0 || nr < 0 || nc >= w || nr >= h {
                        continue;
                    }
                    if map.at(nc as usize, nr as usize) >= v {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                let mut neighborhood = [0.0; 9];
                for (k, slot) in neighborhood.iter_mut().enumerate() {
                    let (dc, dr) = (k as i64 % 3 - 1, k as i64 / 3 - 1);
                    *slot = map.at_padded(c + dc, r + dr);
                }
                out.push(Activation {
                    c: c as usize,
                    r: r as usize,
                    value: v,
                    neighborhood,
                });
            }
        }
    }
    // row-major order is already the scan order, so a stable sort keeps it for ties
    out.sort_by(|a, b| b.value.total_cmp(&a.value));
    out
}

/// Anything with an image, a box and a score.
pub trait Scored {
    fn image_id(&self) -> usize;
    fn bbox(&self) -> &BBox;
    fn score(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StimulusDetection {
    pub image_id: usize,
    pub layer: Arc<str>,
    pub filter: usize,
    pub bbox: BBox,
    pub score: f32,
    pub regressed: bool,
}

impl Scored for StimulusDetection {
    fn image_id(&self) -> usize {
        self.image_id
    }
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
    fn score(&self) -> f64 {
        self.score as f64
    }
}

/// Clipped receptive-field box of an activation.
pub fn raw_box(geometry: &LayerGeometry, act: &Activation) -> BBox {
    geometry.field(act.c, act.r).clipped
}

pub fn raw_detection(
    spec: &NetworkSpec,
    layer: &str,
    filter: usize,
    image_id: usize,
    act: &Activation,
) -> Result<StimulusDetection> {
    let geometry = layer_geometry(spec, layer)?;
    Ok(StimulusDetection {
        image_id,
        layer: Arc::from(layer),
        filter,
        bbox: raw_box(&geometry, act),
        score: act.value,
        regressed: false,
    })
}

/// Greedy non-maximum suppression within each image.
///
/// Detections are visited by descending score (ties in input order); one is
/// dropped when its IoU with an already kept detection of the same image
/// exceeds `iou_threshold`. The kept detections are returned in visit order.
pub fn nms<D: Scored + Clone>(dets: &[D], iou_threshold: f64) -> Vec<D> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()));
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_by_image: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for i in order {
        let d = &dets[i];
        let same = kept_by_image.entry(d.image_id()).or_default();
        if same
            .iter()
            .all(|&k| dets[k].bbox().iou_unchecked(d.bbox()) <= iou_threshold)
        {
            same.push(i);
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Writes `image_id,layer,filter,x,y,w,h,score,regressed` rows.
pub fn write_detections_csv<W: Write>(mut out: W, dets: &[StimulusDetection]) -> std::io::Result<()> {
    writeln!(out, "image_id,layer,filter,x,y,w,h,score,regressed")?;
    for d in dets {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            d.image_id, d.layer, d.filter, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score, d.regressed
        )?;
    }
    Ok(())
}
