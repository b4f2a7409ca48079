//! Sheets of each filter's strongest activations, for annotation by eye.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::RgbImage;
use crate::error::{Error, Result};
use crate::geometry::{layer_geometry, LayerGeometry};
use crate::nn::{Ablation, Network};
use crate::pipeline::Crop;
use crate::tensor::{ChannelView, Tensor};

const GAP: usize = 2;
const CROSS_ARM: i64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkEntry {
    pub layer: String,
    pub filter: usize,
    pub class: String,
    pub rank: usize,
    pub image: usize,
    pub object: usize,
    pub activation: f32,
    /// Strongest cell of the feature map.
    pub cell: (usize, usize),
}

pub struct TopkSheet {
    pub layer: String,
    pub filter: usize,
    pub class: String,
    pub sheet: RgbImage,
    pub entries: Vec<TopkEntry>,
}

/// First cell holding the map maximum, in row-major order.
fn argmax(map: ChannelView<'_>) -> ((usize, usize), f32) {
    let mut best = ((0, 0), f32::NEG_INFINITY);
    for r in 0..map.height {
        for c in 0..map.width {
            let v = map.at(c, r);
            if v > best.1 {
                best = ((c, r), v);
            }
        }
    }
    best
}

/// Shades `input` by the activation map: a pixel keeps `act / scale` of its
/// colour, so zero activation is fully shaded. The strongest cell's
/// receptive-field center is marked with a red cross when it is positive.
pub fn overlay_panel(input: &Tensor, map: ChannelView<'_>, geometry: &LayerGeometry, scale: f32) -> Result<RgbImage> {
    let mut panel = RgbImage::from_tensor(input)?;
    for y in 0..panel.height() {
        for x in 0..panel.width() {
            let (c, r) = geometry.nearest_cell(x as f64 + 0.5, y as f64 + 0.5);
            let a = if scale > 0.0 { (map.at(c, r) / scale).clamp(0.0, 1.0) } else { 0.0 };
            let p = panel.pixel(x, y);
            panel.put_pixel(x, y, p.map(|v| (v as f32 * a).round() as u8));
        }
    }
    let ((c, r), peak) = argmax(map);
    if peak > 0.0 {
        let (cx, cy) = geometry.field(c, r).clamped_center;
        let (cx, cy) = (cx.floor() as i64, cy.floor() as i64);
        for d in -CROSS_ARM..=CROSS_ARM {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                if x >= 0 && y >= 0 && (x as usize) < panel.width() && (y as usize) < panel.height() {
                    panel.put_pixel(x as usize, y as usize, [255, 0, 0]);
                }
            }
        }
    }
    Ok(panel)
}

fn hstack(panels: &[RgbImage]) -> RgbImage {
    let h = panels.iter().map(RgbImage::height).max().unwrap_or(0);
    let w = panels.iter().map(RgbImage::width).sum::<usize>() + GAP * panels.len().saturating_sub(1);
    let mut sheet = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            sheet.put_pixel(x, y, [128, 128, 128]);
        }
    }
    let mut x0 = 0;
    for p in panels {
        for y in 0..p.height() {
            for x in 0..p.width() {
                sheet.put_pixel(x0 + x, y, p.pixel(x, y));
            }
        }
        x0 += p.width() + GAP;
    }
    sheet
}

/// For each filter and object class, the `k` crops with the highest map
/// maximum (ties by crop order). Fewer panels are exported, with a warning,
/// when a class has fewer than `k` crops.
pub fn export_topk(
    net: &Network,
    crops: &[Crop],
    layer: &str,
    filters: &[usize],
    k: usize,
) -> Result<(Vec<TopkSheet>, Vec<String>)> {
    let n_filters = net.filter_count(layer)?;
    if let Some(&j) = filters.iter().find(|&&j| j >= n_filters) {
        return Err(Error::Config(format!("filter {j} out of range for `{layer}` ({n_filters} filters)")));
    }
    let geometry = layer_geometry(net.spec(), layer)?;
    let maps: Vec<Tensor> = crops
        .par_iter()
        .map(|c| net.forward_to(&c.input, &Ablation::none(), layer))
        .collect::<Result<_>>()?;
    let mut classes: Vec<&str> = crops.iter().map(|c| c.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut sheets = Vec::new();
    let mut warnings = Vec::new();
    for &class in &classes {
        let members: Vec<usize> = (0..crops.len()).filter(|&i| crops[i].class == class).collect();
        if members.len() < k {
            warnings.push(format!("{class}: only {} crops for top-{k}", members.len()));
        }
        for &j in filters {
            let mut ranked: Vec<(usize, (usize, usize), f32)> = members
                .iter()
                .map(|&i| {
                    let (cell, v) = argmax(maps[i].channel(j));
                    (i, cell, v)
                })
                .collect();
            ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            ranked.truncate(k);
            let scale = ranked.iter().map(|r| r.2).fold(0.0f32, f32::max);
            let panels = ranked
                .iter()
                .map(|&(i, _, _)| overlay_panel(&crops[i].input, maps[i].channel(j), &geometry, scale))
                .collect::<Result<Vec<_>>>()?;
            let entries = ranked
                .iter()
                .enumerate()
                .map(|(rank, &(i, cell, activation))| TopkEntry {
                    layer: layer.to_string(),
                    filter: j,
                    class: class.to_string(),
                    rank,
                    image: crops[i].image,
                    object: crops[i].object,
                    activation,
                    cell,
                })
                .collect();
            sheets.push(TopkSheet {
                layer: layer.to_string(),
                filter: j,
                class: class.to_string(),
                sheet: hstack(&panels),
                entries,
            });
        }
    }
    Ok((sheets, warnings))
}

pub fn index_csv(sheets: &[TopkSheet]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("layer,filter,class,rank,image,object,activation,cell_x,cell_y\n");
    for e in sheets.iter().flat_map(|s| &s.entries) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            e.layer, e.filter, e.class, e.rank, e.image, e.object, e.activation, e.cell.0, e.cell.1
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CropTransform;
    use crate::nn::{LayerKind, LayerParams, LayerSpec, NetworkSpec};
    use crate::tensor::Shape3;

    fn identity_net() -> Network {
        let spec = NetworkSpec {
            input_shape: Shape3::new(3, 4, 4),
            layers: vec![LayerSpec::new("conv1", LayerKind::Conv { out_channels: 1, kernel: 1, stride: 1, pad: 0 })],
            class_names: vec![],
        };
        let params = LayerParams { weights: vec![1.0, 0.0, 0.0], bias: vec![0.0] };
        Network::new(spec, vec![Some(params)]).unwrap()
    }

    fn crop(i: usize, value: f32) -> Crop {
        let mut input = Tensor::zeros(Shape3::new(3, 4, 4));
        input.set(0, 1, 2, value);
        Crop {
            image: i,
            object: 0,
            class: "car".into(),
            input,
            transform: CropTransform::identity(),
            parts: vec![],
        }
    }

    #[test]
    fn single_crop_gives_one_panel() {
        let net = identity_net();
        let (sheets, warnings) = export_topk(&net, &[crop(0, 0.3)], "conv1", &[0], 1).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(sheets.len(), 1);
        assert_eq!(sheets[0].sheet.width(), 4);
        assert_eq!(sheets[0].entries[0].cell, (2, 1));
    }

    #[test]
    fn panels_are_sorted_by_activation_and_short_classes_warn() {
        let net = identity_net();
        let crops = [crop(0, 0.1), crop(1, 0.4), crop(2, 0.2)];
        let (sheets, warnings) = export_topk(&net, &crops, "conv1", &[0], 5).unwrap();
        assert_eq!(warnings.len(), 1);
        let order: Vec<usize> = sheets[0].entries.iter().map(|e| e.image).collect();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(sheets[0].sheet.width(), 3 * 4 + 2 * GAP);
    }

    #[test]
    fn zero_activation_is_fully_shaded() {
        let net = identity_net();
        let mut c = crop(0, 0.0);
        c.input = Tensor::filled(Shape3::new(3, 4, 4), 0.3);
        c.input.data_mut()[..16].fill(-0.5);
        let (sheets, _) = export_topk(&net, &[c], "conv1", &[0], 1).unwrap();
        assert!(sheets[0].sheet.raw().iter().all(|&v| v == 0));
    }

    #[test]
    fn out_of_range_filter_is_rejected() {
        let net = identity_net();
        assert!(matches!(export_topk(&net, &[crop(0, 1.0)], "conv1", &[3], 1), Err(Error::Config(_))));
    }
}
