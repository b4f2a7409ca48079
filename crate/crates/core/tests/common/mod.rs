//! Independent oracles and random instance generators shared by the
//! integration tests. Nothing here calls the code paths it checks.

#![allow(dead_code)]

use std::sync::Arc;

use filterscope::bbox::{BBox, PartBox};
use filterscope::ga::CombinationFitness;
use filterscope::nn::{random_init, LayerKind, LayerParams, LayerSpec, Network, NetworkSpec};
use filterscope::stimulus::StimulusDetection;
use filterscope::tensor::{Shape3, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    (span >= kernel).then(|| (span - kernel) / stride + 1)
}

/// A random conv/relu/maxpool chain of at most four layers on an input of at
/// most 32x32, with every stride no larger than its kernel so receptive
/// fields have no holes. Weights are positive and biases zero, so on a zero
/// background a pixel reaches exactly the cells whose field covers it.
pub fn random_rf_net(rng: &mut ChaCha8Rng) -> Network {
    loop {
        let width = rng.random_range(6..=32);
        let height = rng.random_range(6..=32);
        let channels = rng.random_range(1..=2);
        let n_layers = rng.random_range(1..=4);
        let (mut w, mut h) = (width, height);
        let mut layers = Vec::new();
        let mut ok = true;
        for i in 0..n_layers {
            let kind = match rng.random_range(0..4) {
                0 | 1 => {
                    let kernel = rng.random_range(1..=5);
                    let stride = rng.random_range(1..=kernel.min(3));
                    let pad = rng.random_range(0..=kernel / 2);
                    LayerKind::Conv { out_channels: rng.random_range(1..=3), kernel, stride, pad }
                }
                2 => {
                    let kernel = rng.random_range(2..=3);
                    LayerKind::Maxpool { kernel, stride: rng.random_range(1..=kernel) }
                }
                _ => LayerKind::Relu,
            };
            let (k, s, p) = match kind {
                LayerKind::Conv { kernel, stride, pad, .. } => (kernel, stride, pad),
                LayerKind::Maxpool { kernel, stride } => (kernel, stride, 0),
                _ => (1, 1, 0),
            };
            match (out_size(w, k, s, p), out_size(h, k, s, p)) {
                (Some(a), Some(b)) => {
                    w = a;
                    h = b;
                }
                _ => {
                    ok = false;
                    break;
                }
            }
            layers.push(LayerSpec::new(format!("l{i}"), kind));
        }
        if !ok {
            continue;
        }
        let spec = NetworkSpec { input_shape: Shape3::new(channels, height, width), layers, class_names: vec![] };
        let counts = spec.param_counts().unwrap();
        let params = counts
            .iter()
            .map(|c| {
                c.map(|c| LayerParams {
                    weights: (0..c.weights).map(|_| rng.random_range(0.1f32..1.0)).collect(),
                    bias: vec![0.0; c.bias],
                })
            })
            .collect();
        return Network::new(spec, params).unwrap();
    }
}

/// Inclusive pixel bounds `(x0, y0, x1, y1)` and pixel count.
pub type Support = Option<((usize, usize, usize, usize), usize)>;

/// Input support of every cell of `layer`, found by lighting one pixel at a
/// time.
pub fn perturbation_support(net: &Network, layer: &str) -> Vec<Vec<Support>> {
    let input = net.input_shape();
    let out = net.output_shape(layer).unwrap();
    let mut support: Vec<Vec<Support>> = vec![vec![None; out.width]; out.height];
    let base = net
        .forward_to(&Tensor::zeros(input), &filterscope::nn::Ablation::none(), layer)
        .unwrap();
    assert!(base.data().iter().all(|&v| v == 0.0));
    for y in 0..input.height {
        for x in 0..input.width {
            let mut t = Tensor::zeros(input);
            for c in 0..input.channels {
                t.set(c, y, x, 1.0);
            }
            let o = net.forward_to(&t, &filterscope::nn::Ablation::none(), layer).unwrap();
            for r in 0..out.height {
                for c in 0..out.width {
                    if o.get(0, r, c) != 0.0 {
                        let e = &mut support[r][c];
                        *e = Some(match *e {
                            None => ((x, y, x, y), 1),
                            Some(((x0, y0, x1, y1), n)) => ((x0.min(x), y0.min(y), x1.max(x), y1.max(y)), n + 1),
                        });
                    }
                }
            }
        }
    }
    support
}

/// A random net with every layer kind, for ablation checks.
pub fn random_full_net(rng: &mut ChaCha8Rng) -> Network {
    let size = rng.random_range(8..=16);
    let c1 = rng.random_range(2..=6);
    let c2 = rng.random_range(2..=6);
    let classes = rng.random_range(2..=4);
    let mut layers = vec![
        LayerSpec::new("conv1", LayerKind::Conv { out_channels: c1, kernel: 3, stride: rng.random_range(1..=2), pad: 1 }),
        LayerSpec::new("relu1", LayerKind::Relu),
    ];
    if rng.random_bool(0.5) {
        layers.push(LayerSpec::new("norm1", LayerKind::Lrn { size: 3, alpha: 1e-2, beta: 0.75, k: 2.0 }));
    }
    layers.push(LayerSpec::new("pool1", LayerKind::Maxpool { kernel: 2, stride: 2 }));
    layers.push(LayerSpec::new("conv2", LayerKind::Conv { out_channels: c2, kernel: 3, stride: 1, pad: 1 }));
    layers.push(LayerSpec::new("relu2", LayerKind::Relu));
    layers.push(LayerSpec::new("fc", LayerKind::Fc { out_units: classes }));
    layers.push(LayerSpec::new("prob", LayerKind::Softmax));
    let spec = NetworkSpec {
        input_shape: Shape3::new(3, size, size),
        layers,
        class_names: (0..classes).map(|i| format!("c{i}")).collect(),
    };
    random_init(&spec, rng.random()).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape3) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = ix.max(0.0) * iy.max(0.0);
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// AP by enumerating prefixes of the ranked list: for every recall level
/// reached, the best precision of any prefix that reaches it, weighted by
/// the recall gained.
pub fn brute_force_ap(dets: &[(usize, BBox, f64)], gts: &[PartBox], threshold: f64) -> f64 {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].2.partial_cmp(&dets[a].2).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::new();
    for &i in &order {
        let (img, b, _) = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.image_id != *img || taken[g] {
                continue;
            }
            let v = oracle_iou(b, &gt.bbox);
            if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        tp.push(best.is_some());
    }
    let n = gts.len() as f64;
    let prefixes: Vec<(f64, f64)> = (1..=tp.len())
        .map(|k| {
            let hits = tp[..k].iter().filter(|&&t| t).count() as f64;
            (hits / n, hits / k as f64)
        })
        .collect();
    let mut levels: Vec<f64> = prefixes.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = prefixes.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(4.0..20.0), rng.random_range(4.0..20.0))
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, amount: f64) -> BBox {
    BBox::new(
        b.x + rng.random_range(-amount..amount),
        b.y + rng.random_range(-amount..amount),
        (b.w + rng.random_range(-amount..amount)).max(1.0),
        (b.h + rng.random_range(-amount..amount)).max(1.0),
    )
}

/// Detections near and away from ground truth, with coarse scores so that
/// ties occur.
pub fn random_ap_instance(rng: &mut ChaCha8Rng) -> (Vec<(usize, BBox, f64)>, Vec<PartBox>) {
    let n_images = rng.random_range(1..=5);
    let mut gts = Vec::new();
    for img in 0..n_images {
        for _ in 0..rng.random_range(0..=4) {
            gts.push(PartBox { image_id: img, part_class: "p".into(), bbox: random_box(rng) });
        }
    }
    if gts.is_empty() {
        gts.push(PartBox { image_id: 0, part_class: "p".into(), bbox: random_box(rng) });
    }
    let n_dets = rng.random_range(0..=100);
    let dets = (0..n_dets)
        .map(|_| {
            let score = (rng.random_range(0..20) as f64) / 4.0;
            if rng.random_bool(0.6) {
                let g = &gts[rng.random_range(0..gts.len())];
                (g.image_id, jitter(rng, &g.bbox, 4.0), score)
            } else {
                (rng.random_range(0..n_images), random_box(rng), score)
            }
        })
        .collect();
    (dets, gts)
}

/// Per-filter detection sets of varying quality for one part, ready for a
/// combination search.
pub fn random_ga_instance(rng: &mut ChaCha8Rng, n_filters: usize) -> CombinationFitness {
    let n_images = 20;
    let mut gts = Vec::new();
    for img in 0..n_images {
        for _ in 0..rng.random_range(1..=2) {
            gts.push(PartBox { image_id: img, part_class: "p".into(), bbox: random_box(rng) });
        }
    }
    let layer: Arc<str> = Arc::from("conv");
    let per_filter: Vec<Vec<StimulusDetection>> = (0..n_filters)
        .map(|f| {
            let hit_rate = rng.random_range(0.0..0.8);
            let noise = rng.random_range(0..30);
            let mut dets = Vec::new();
            for g in &gts {
                if rng.random_bool(hit_rate) {
                    dets.push(StimulusDetection {
                        image_id: g.image_id,
                        layer: layer.clone(),
                        filter: f,
                        bbox: jitter(rng, &g.bbox, 3.0),
                        score: rng.random_range(0.2f32..1.0),
                        regressed: true,
                    });
                }
            }
            for _ in 0..noise {
                dets.push(StimulusDetection {
                    image_id: rng.random_range(0..n_images),
                    layer: layer.clone(),
                    filter: f,
                    bbox: random_box(rng),
                    score: rng.random_range(0.0f32..0.9),
                    regressed: true,
                });
            }
            dets
        })
        .collect();
    CombinationFitness::new(&per_filter, gts, 0.3, 0.4).unwrap()
}

/// Best AP over every subset, through the reference (non-cached) path.
pub fn exhaustive_best(fitness: &CombinationFitness) -> f64 {
    let n = fitness.n_filters();
    (1u32..(1 << n))
        .map(|m| {
            let bits: Vec<bool> = (0..n).map(|j| m >> j & 1 == 1).collect();
            fitness.report(&bits).unwrap().ap
        })
        .fold(0.0, f64::max)
}
