//! Networks with hand-built matched filters for the parts of a synthetic
//! layout, so that ground truth is detectable by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{crop_and_warp, generate_synthetic, render_pattern, ContextPad, CropSpec, Pattern, SynthConfig};
use crate::error::{Error, Result};
use crate::geometry::layer_geometry;
use crate::nn::{Ablation, LayerKind, LayerParams, LayerSpec, Network, NetworkSpec};
use crate::tensor::Shape3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedOptions {
    /// Side of the square network input.
    pub input_size: usize,
    /// Filters per conv layer; planted filters come first, the rest are random.
    pub filters: usize,
    pub kernel: usize,
    /// Fraction of the clean peak response subtracted as bias.
    pub threshold: f64,
    /// Approximate logit of the true class on a clean crop.
    pub target_logit: f64,
    pub calibration_per_class: usize,
    pub context_pad: f64,
    pub seed: u64,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        PlantedOptions {
            input_size: 64,
            filters: 16,
            kernel: 11,
            threshold: 0.35,
            target_logit: 4.0,
            calibration_per_class: 8,
            context_pad: 0.10,
            seed: 0,
        }
    }
}

/// A conv1 filter built to respond to one part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFilter {
    pub object: String,
    pub part: String,
    pub filter: usize,
}

#[derive(Clone, Debug)]
pub struct PlantedNetwork {
    pub network: Network,
    pub filters: Vec<PlantedFilter>,
}

impl PlantedNetwork {
    pub fn filter_for(&self, object: &str, part: &str) -> Option<usize> {
        self.filters
            .iter()
            .find(|f| f.object == object && f.part == part)
            .map(|f| f.filter)
    }
}

/// `conv1 (k, stride 2) -> relu -> 2x2 pool -> conv2 (3x3) -> relu -> fc -> softmax`.
pub fn planted_spec(n_classes: usize, class_names: Vec<String>, opts: &PlantedOptions) -> NetworkSpec {
    NetworkSpec {
        input_shape: Shape3::new(3, opts.input_size, opts.input_size),
        layers: vec![
            LayerSpec::new(
                "conv1",
                LayerKind::Conv { out_channels: opts.filters, kernel: opts.kernel, stride: 2, pad: opts.kernel / 2 },
            ),
            LayerSpec::new("relu1", LayerKind::Relu),
            LayerSpec::new("pool1", LayerKind::Maxpool { kernel: 2, stride: 2 }),
            LayerSpec::new("conv2", LayerKind::Conv { out_channels: opts.filters, kernel: 3, stride: 1, pad: 1 }),
            LayerSpec::new("relu2", LayerKind::Relu),
            LayerSpec::new("fc", LayerKind::Fc { out_units: n_classes }),
            LayerSpec::new("prob", LayerKind::Softmax),
        ],
        class_names,
    }
}

/// Zero-mean, unit-norm spatial template of a part pattern seen at `size`
/// crop pixels, plus the norm of the centered pattern before scaling.
fn template(pattern: Pattern, k: usize, size: (f64, f64)) -> (Vec<f64>, f64) {
    let half = (k / 2) as f64;
    let t: Vec<f64> = (0..k * k)
        .map(|i| {
            let (dx, dy) = ((i % k) as f64 - half, (i / k) as f64 - half);
            render_pattern(pattern, dx / (size.0 / 2.0), dy / (size.1 / 2.0)).unwrap_or(0.0)
        })
        .collect();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let centered: Vec<f64> = t.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (vec![0.0; k * k], 0.0);
    }
    (centered.iter().map(|v| v / norm).collect(), norm)
}

pub fn matched_filter_network(layout: &SynthConfig, opts: &PlantedOptions) -> Result<PlantedNetwork> {
    layout.validate()?;
    let mut planted = Vec::new();
    for class in &layout.classes {
        for p in &class.parts {
            planted.push((class, p));
        }
    }
    if planted.len() > opts.filters {
        return Err(Error::Config(format!(
            "{} planted parts do not fit in {} filters",
            planted.len(),
            opts.filters
        )));
    }
    let names: Vec<String> = layout.classes.iter().map(|c| c.class.clone()).collect();
    let spec = planted_spec(names.len(), names, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let k = opts.kernel;
    let scale = opts.input_size as f64 / (layout.object_size * (1.0 + 2.0 * opts.context_pad));

    // conv1: matched filters, then random fill
    let per1 = 3 * k * k;
    let mut w1 = vec![0.0f32; opts.filters * per1];
    let mut b1 = vec![0.0f32; opts.filters];
    let bound1 = 1.0 / (per1 as f32).sqrt();
    for (f, (class, p)) in planted.iter().enumerate() {
        let size = (p.rel_size[0] * layout.object_size * scale, p.rel_size[1] * layout.object_size * scale);
        let (g, spread) = template(p.pattern, k, size);
        let d: Vec<f64> = (0..3).map(|c| p.color[c] - class.body_color[c]).collect();
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dn == 0.0 || spread == 0.0 {
            continue;
        }
        for c in 0..3 {
            for (i, gv) in g.iter().enumerate() {
                w1[f * per1 + c * k * k + i] = (d[c] / dn * gv) as f32;
            }
        }
        let peak = p.contrast * dn * spread;
        b1[f] = (-opts.threshold * peak) as f32;
    }
    for f in planted.len()..opts.filters {
        for v in &mut w1[f * per1..(f + 1) * per1] {
            *v = rng.random_range(-bound1..bound1);
        }
        b1[f] = rng.random_range(-bound1..bound1);
    }

    // conv2: planted channels pass through, the rest random
    let per2 = opts.filters * 9;
    let mut w2 = vec![0.0f32; opts.filters * per2];
    let mut b2 = vec![0.0f32; opts.filters];
    let bound2 = 1.0 / (per2 as f32).sqrt();
    for f in 0..opts.filters {
        if f < planted.len() {
            w2[f * per2 + f * 9 + 4] = 1.0;
        } else {
            for v in &mut w2[f * per2..(f + 1) * per2] {
                *v = rng.random_range(-bound2..bound2);
            }
            b2[f] = rng.random_range(-bound2..bound2);
        }
    }

    let shapes = spec.validate()?;
    let fc_in = shapes[4].len();
    let plane = shapes[4].plane();
    let n_classes = layout.classes.len();
    let params = |fc: Vec<f32>| {
        vec![
            Some(LayerParams { weights: w1.clone(), bias: b1.clone() }),
            None,
            None,
            Some(LayerParams { weights: w2.clone(), bias: b2.clone() }),
            None,
            Some(LayerParams { weights: fc, bias: vec![0.0; n_classes] }),
            None,
        ]
    };
    let probe = Network::new(spec.clone(), params(vec![0.0; n_classes * fc_in]))?;

    // fc: each class sums its parts' channels over the region where the part
    // can appear, normalized by the mean clean activation mass there so a
    // clean crop reaches about `target_logit`
    let geometry = layer_geometry(&spec, "conv2")?;
    let obj_len = opts.input_size as f64 / (1.0 + 2.0 * opts.context_pad);
    let obj_start = opts.context_pad * obj_len;
    let gates: Vec<Vec<f64>> = planted
        .iter()
        .map(|(_, p)| {
            let (px, py) = (obj_start + p.rel_center[0] * obj_len, obj_start + p.rel_center[1] * obj_len);
            let reach = |rel: f64| (rel / 2.0 + p.jitter + 0.1) * obj_len;
            (0..plane)
                .map(|i| {
                    let (cx, cy) = geometry.field(i % shapes[4].width, i / shapes[4].width).center;
                    let inside = (cx - px).abs() <= reach(p.rel_size[0]) && (cy - py).abs() <= reach(p.rel_size[1]);
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let calib = generate_synthetic(
        opts.seed ^ 0x9e37_79b9_7f4a_7c15,
        n_classes * opts.calibration_per_class,
        layout,
    )?;
    let crop = CropSpec {
        context_pad: ContextPad::Fraction(opts.context_pad),
        width: opts.input_size,
        height: opts.input_size,
    };
    let mut mass = vec![0.0f64; planted.len()];
    let mut seen = vec![0usize; planted.len()];
    for (i, img) in calib.iter().enumerate() {
        let (x, _) = crop_and_warp(img, 0, &crop)?;
        let out = probe.forward(&x, &Ablation::none(), &["conv2"])?;
        let act = &out.captured["conv2"];
        let class = &layout.classes[i % n_classes];
        for (f, (c, p)) in planted.iter().enumerate() {
            if c.class == class.class && img.parts.iter().any(|q| q.part_class == p.name) {
                let channel = &act.data()[f * plane..(f + 1) * plane];
                mass[f] += channel.iter().zip(&gates[f]).map(|(&v, g)| v as f64 * g).sum::<f64>();
                seen[f] += 1;
            }
        }
    }
    let mut fc = vec![0.0f32; n_classes * fc_in];
    for (ci, class) in layout.classes.iter().enumerate() {
        let total: f64 = class.parts.iter().map(|p| p.evidence * p.presence).sum();
        if total <= 0.0 {
            continue;
        }
        let kappa = opts.target_logit / total;
        for (f, (c, p)) in planted.iter().enumerate() {
            if c.class != class.class || seen[f] == 0 || mass[f] <= 0.0 {
                continue;
            }
            let w = kappa * p.evidence / (mass[f] / seen[f] as f64);
            let row = &mut fc[ci * fc_in + f * plane..ci * fc_in + (f + 1) * plane];
            for (slot, g) in row.iter_mut().zip(&gates[f]) {
                *slot = (w * g) as f32;
            }
        }
    }
    let network = Network::new(spec, params(fc))?;
    let filters = planted
        .iter()
        .enumerate()
        .map(|(f, (c, p))| PlantedFilter {
            object: c.class.clone(),
            part: p.name.clone(),
            filter: f,
        })
        .collect();
    Ok(PlantedNetwork { network, filters })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_crops_classify_correctly() {
        let layout = SynthConfig::three_class();
        let net = matched_filter_network(&layout, &PlantedOptions::default()).unwrap();
        assert_eq!(net.filters.len(), 10);
        let images = generate_synthetic(123, 30, &layout).unwrap();
        let crop = CropSpec::for_input(net.network.input_shape());
        let mut correct = 0;
        for (i, img) in images.iter().enumerate() {
            let (x, _) = crop_and_warp(img, 0, &crop).unwrap();
            let out = net.network.forward(&x, &Ablation::none(), &[]).unwrap();
            let best = (0..3).max_by(|&a, &b| out.scores[a].total_cmp(&out.scores[b])).unwrap();
            correct += usize::from(best == i % 3);
        }
        assert!(correct >= 28, "{correct}/30");
    }

    #[test]
    fn too_many_parts_is_a_config_error() {
        let opts = PlantedOptions { filters: 4, ..PlantedOptions::default() };
        assert!(matches!(
            matched_filter_network(&SynthConfig::three_class(), &opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn template_is_zero_mean_unit_norm() {
        let (g, spread) = template(Pattern::Blob, 11, (16.0, 16.0));
        assert!(spread > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!((g.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
