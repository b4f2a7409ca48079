use std::collections::{BTreeMap, BTreeSet};

use super::{LayerKind, LayerParams, Network};
use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::tensor::{Shape3, Tensor};

/// Interventions applied during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablation {
    /// `(conv layer, filter)` pairs whose feature maps are forced to zero.
    pub zero_filters: BTreeSet<(String, usize)>,
    /// Input pixels set to zero in every channel before the first layer.
    pub blackout: Option<PixelMask>,
}

impl Ablation {
    pub fn none() -> Self {
        Ablation::default()
    }

    pub fn zero_filter(layer: impl Into<String>, filter: usize) -> Self {
        let mut a = Ablation::default();
        a.zero_filters.insert((layer.into(), filter));
        a
    }

    pub fn blackout(mask: PixelMask) -> Self {
        Ablation {
            blackout: Some(mask),
            ..Ablation::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.zero_filters.is_empty() && self.blackout.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Flattened output of the last layer.
    pub scores: Vec<f32>,
    /// Input of a final softmax, or `scores` when the net has none.
    pub logits: Vec<f32>,
    pub captured: BTreeMap<String, Tensor>,
}

impl Network {
    /// Runs the whole network.
    ///
    /// Capturing a conv layer that is directly followed by a ReLU returns the
    /// rectified map; any other layer is captured at its own output.
    pub fn forward(&self, input: &Tensor, ablation: &Ablation, capture: &[&str]) -> Result<ForwardOutput> {
        let x = self.prepare_input(input, ablation)?;
        let zero = self.zero_sets(ablation)?;
        self.run_to_end(0, x, &zero, capture)
    }

    /// Output of `layer` itself (before any following ReLU).
    pub fn forward_to(&self, input: &Tensor, ablation: &Ablation, layer: &str) -> Result<Tensor> {
        let end = self.layer_index(layer)?;
        let mut x = self.prepare_input(input, ablation)?;
        let zero = self.zero_sets(ablation)?;
        for i in 0..=end {
            x = self.apply_layer(i, &x, &zero[i])?;
        }
        Ok(x)
    }

    /// Continues a pass from the output of `after_layer`.
    pub fn forward_from(
        &self,
        after_layer: &str,
        activation: Tensor,
        ablation: &Ablation,
        capture: &[&str],
    ) -> Result<ForwardOutput> {
        let start = self.layer_index(after_layer)? + 1;
        if activation.shape() != self.shapes()[start - 1] {
            return Err(Error::shape(
                after_layer,
                format!(
                    "resumed activation has shape {}, layer produces {}",
                    activation.shape(),
                    self.shapes()[start - 1]
                ),
            ));
        }
        if ablation.blackout.is_some() {
            return Err(Error::Config("blackout cannot be applied to a resumed pass".into()));
        }
        let zero = self.zero_sets(ablation)?;
        self.run_to_end(start, activation, &zero, capture)
    }

    fn prepare_input(&self, input: &Tensor, ablation: &Ablation) -> Result<Tensor> {
        let want = self.input_shape();
        if input.shape() != want {
            let first = self.spec().layers.first().map_or("input", |l| l.name.as_str());
            return Err(Error::shape(
                first,
                format!("input has shape {}, network expects {want}", input.shape()),
            ));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite {
                layer: "input".into(),
            });
        }
        let mut x = input.clone();
        if let Some(mask) = &ablation.blackout {
            if mask.width() != want.width || mask.height() != want.height {
                return Err(Error::Config(format!(
                    "blackout mask is {}x{}, input is {}x{}",
                    mask.width(),
                    mask.height(),
                    want.width,
                    want.height
                )));
            }
            let plane = want.plane();
            for c in 0..want.channels {
                let ch = &mut x.data_mut()[c * plane..(c + 1) * plane];
                for (v, &m) in ch.iter_mut().zip(mask.bits()) {
                    if m {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(x)
    }

    fn zero_sets(&self, ablation: &Ablation) -> Result<Vec<Vec<usize>>> {
        let mut sets = vec![Vec::new(); self.spec().layers.len()];
        for (layer, filter) in &ablation.zero_filters {
            let idx = self.layer_index(layer)?;
            let count = self.filter_count(layer)?;
            if *filter >= count {
                return Err(Error::Config(format!(
                    "cannot ablate filter {filter} of `{layer}`: it has {count} filters"
                )));
            }
            sets[idx].push(*filter);
        }
        Ok(sets)
    }

    fn capture_points(&self, start: usize, capture: &[&str]) -> Result<BTreeMap<usize, Vec<String>>> {
        let layers = &self.spec().layers;
        let mut points: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for name in capture {
            let mut idx = self.layer_index(name)?;
            if matches!(layers[idx].kind, LayerKind::Conv { .. })
                && layers.get(idx + 1).is_some_and(|l| matches!(l.kind, LayerKind::Relu))
            {
                idx += 1;
            }
            if idx < start {
                return Err(Error::Config(format!(
                    "layer `{name}` precedes the resumed pass"
                )));
            }
            points.entry(idx).or_default().push((*name).to_string());
        }
        Ok(points)
    }

    fn run_to_end(
        &self,
        start: usize,
        mut x: Tensor,
        zero: &[Vec<usize>],
        capture: &[&str],
    ) -> Result<ForwardOutput> {
        let points = self.capture_points(start, capture)?;
        let mut captured = BTreeMap::new();
        let layers = &self.spec().layers;
        let mut logits = None;
        for i in start..layers.len() {
            if i + 1 == layers.len() && matches!(layers[i].kind, LayerKind::Softmax) {
                logits = Some(x.data().to_vec());
            }
            x = self.apply_layer(i, &x, &zero[i])?;
            if let Some(names) = points.get(&i) {
                for n in names {
                    captured.insert(n.clone(), x.clone());
                }
            }
        }
        let scores = x.into_vec();
        Ok(ForwardOutput {
            logits: logits.unwrap_or_else(|| scores.clone()),
            scores,
            captured,
        })
    }

    fn apply_layer(&self, index: usize, x: &Tensor, zero: &[usize]) -> Result<Tensor> {
        let layer = &self.spec().layers[index];
        let out_shape = self.shapes()[index];
        let mut y = match layer.kind {
            LayerKind::Conv {
                kernel, stride, pad, ..
            } => {
                let p = self.params_at(index).expect("validated conv params");
                conv2d(x, p, out_shape, kernel, stride, pad)
            }
            LayerKind::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::from_vec(out_shape, data)?
            }
            LayerKind::Maxpool { kernel, stride } => maxpool(x, out_shape, kernel, stride),
            LayerKind::Lrn { size, alpha, beta, k } => lrn(x, size, alpha, beta, k),
            LayerKind::Fc { .. } => {
                let p = self.params_at(index).expect("validated fc params");
                fully_connected(x, p, out_shape)
            }
            LayerKind::Softmax => softmax(x),
        };
        for &j in zero {
            y.channel_mut(j).fill(0.0);
        }
        if !y.is_finite() {
            return Err(Error::NonFinite {
                layer: layer.name.clone(),
            });
        }
        Ok(y)
    }
}

fn conv2d(x: &Tensor, p: &LayerParams, out: Shape3, k: usize, stride: usize, pad: usize) -> Tensor {
    let ins = x.shape();
    let (ih, iw) = (ins.height as isize, ins.width as isize);
    let xd = x.data();
    let mut y = Tensor::zeros(out);
    let yd = y.data_mut();
    let per_filter = ins.channels * k * k;
    for oc in 0..out.channels {
        let wf = &p.weights[oc * per_filter..(oc + 1) * per_filter];
        let bias = p.bias[oc] as f64;
        for oy in 0..out.height {
            let y0 = (oy * stride) as isize - pad as isize;
            let ky_lo = (-y0).max(0) as usize;
            let ky_hi = (ih - y0).clamp(0, k as isize) as usize;
            for ox in 0..out.width {
                let x0 = (ox * stride) as isize - pad as isize;
                let kx_lo = (-x0).max(0) as usize;
                let kx_hi = (iw - x0).clamp(0, k as isize) as usize;
                let mut acc = bias;
                for ic in 0..ins.channels {
                    let wc = &wf[ic * k * k..(ic + 1) * k * k];
                    let plane = &xd[ic * ins.plane()..(ic + 1) * ins.plane()];
                    for ky in ky_lo..ky_hi {
                        let row = (y0 + ky as isize) as usize * ins.width;
                        let wrow = &wc[ky * k..(ky + 1) * k];
                        for kx in kx_lo..kx_hi {
                            let xi = (x0 + kx as isize) as usize;
                            acc += wrow[kx] as f64 * plane[row + xi] as f64;
                        }
                    }
                }
                yd[(oc * out.height + oy) * out.width + ox] = acc as f32;
            }
        }
    }
    y
}

fn maxpool(x: &Tensor, out: Shape3, k: usize, stride: usize) -> Tensor {
    let mut y = Tensor::zeros(out);
    for c in 0..out.channels {
        for oy in 0..out.height {
            for ox in 0..out.width {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x.get(c, oy * stride + ky, ox * stride + kx));
                    }
                }
                y.set(c, oy, ox, m);
            }
        }
    }
    y
}

fn lrn(x: &Tensor, size: usize, alpha: f64, beta: f64, k: f64) -> Tensor {
    let s = x.shape();
    let half = size / 2;
    let mut y = Tensor::zeros(s);
    for c in 0..s.channels {
        let lo = c.saturating_sub(half);
        let hi = (c + half).min(s.channels - 1);
        for r in 0..s.height {
            for col in 0..s.width {
                let sq: f64 = (lo..=hi)
                    .map(|cc| {
                        let v = x.get(cc, r, col) as f64;
                        v * v
                    })
                    .sum();
                let denom = (k + alpha / size as f64 * sq).powf(beta);
                y.set(c, r, col, (x.get(c, r, col) as f64 / denom) as f32);
            }
        }
    }
    y
}

fn fully_connected(x: &Tensor, p: &LayerParams, out: Shape3) -> Tensor {
    let xd = x.data();
    let n_in = xd.len();
    let data = (0..out.channels)
        .map(|o| {
            let w = &p.weights[o * n_in..(o + 1) * n_in];
            let acc = w
                .iter()
                .zip(xd)
                .fold(p.bias[o] as f64, |acc, (&w, &v)| acc + w as f64 * v as f64);
            acc as f32
        })
        .collect();
    Tensor::from_vec(out, data).expect("fc output size")
}

fn softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = x.data().iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let data = exps.iter().map(|e| (e / sum) as f32).collect();
    Tensor::from_vec(x.shape(), data).expect("softmax output size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{random_init, LayerSpec, NetworkSpec};

    fn spec(input: Shape3, layers: Vec<LayerSpec>) -> NetworkSpec {
        NetworkSpec {
            input_shape: input,
            layers,
            class_names: vec![],
        }
    }

    fn conv(name: &str, out: usize, k: usize, s: usize, p: usize) -> LayerSpec {
        LayerSpec::new(
            name,
            LayerKind::Conv {
                out_channels: out,
                kernel: k,
                stride: s,
                pad: p,
            },
        )
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut net = Network::zeroed(spec(Shape3::new(1, 3, 3), vec![conv("c", 1, 1, 1, 0)])).unwrap();
        net.params_mut("c").unwrap().weights[0] = 1.0;
        let input = Tensor::from_vec(Shape3::new(1, 3, 3), (0..9).map(|v| v as f32 - 4.0).collect()).unwrap();
        let out = net.forward(&input, &Ablation::none(), &[]).unwrap();
        assert_eq!(out.scores, input.data());
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let mut net = Network::zeroed(spec(Shape3::new(1, 4, 4), vec![conv("c", 1, 3, 1, 0)])).unwrap();
        net.params_mut("c").unwrap().weights.fill(1.0);
        let out = net
            .forward(&Tensor::filled(Shape3::new(1, 4, 4), 1.0), &Ablation::none(), &["c"])
            .unwrap();
        assert_eq!(out.captured["c"].shape(), Shape3::new(1, 2, 2));
        assert_eq!(out.scores, vec![9.0; 4]);
    }

    #[test]
    fn padding_reads_zeros() {
        let mut net = Network::zeroed(spec(Shape3::new(1, 2, 2), vec![conv("c", 1, 3, 1, 1)])).unwrap();
        net.params_mut("c").unwrap().weights.fill(1.0);
        let out = net
            .forward(&Tensor::filled(Shape3::new(1, 2, 2), 1.0), &Ablation::none(), &[])
            .unwrap();
        assert_eq!(out.scores, vec![4.0; 4]);
    }

    #[test]
    fn relu_clamps_negatives_only() {
        let net = Network::zeroed(spec(Shape3::new(1, 1, 4), vec![LayerSpec::new("r", LayerKind::Relu)])).unwrap();
        let input = Tensor::from_vec(Shape3::new(1, 1, 4), vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let out = net.forward(&input, &Ablation::none(), &[]).unwrap();
        assert_eq!(out.scores, vec![0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn capture_of_conv_is_post_relu() {
        let mut net = Network::zeroed(spec(
            Shape3::new(1, 1, 2),
            vec![conv("c", 1, 1, 1, 0), LayerSpec::new("r", LayerKind::Relu)],
        ))
        .unwrap();
        net.params_mut("c").unwrap().weights[0] = -1.0;
        let input = Tensor::from_vec(Shape3::new(1, 1, 2), vec![1.0, -1.0]).unwrap();
        let out = net.forward(&input, &Ablation::none(), &["c"]).unwrap();
        assert_eq!(out.captured["c"].data(), &[0.0, 1.0]);
    }

    #[test]
    fn maxpool_and_lrn() {
        let net = Network::zeroed(spec(
            Shape3::new(1, 2, 4),
            vec![
                LayerSpec::new("p", LayerKind::Maxpool { kernel: 2, stride: 2 }),
                LayerSpec::new("n", LayerKind::Lrn { size: 1, alpha: 1.0, beta: 1.0, k: 1.0 }),
            ],
        ))
        .unwrap();
        let input = Tensor::from_vec(Shape3::new(1, 2, 4), vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.0, -3.0, -2.0]).unwrap();
        let out = net.forward(&input, &Ablation::none(), &["p"]).unwrap();
        assert_eq!(out.captured["p"].data(), &[2.0, 0.0]);
        // 2 / (1 + 4) and 0 / 1
        assert_eq!(out.scores, vec![0.4, 0.0]);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let s = NetworkSpec {
            input_shape: Shape3::new(2, 5, 5),
            layers: vec![
                conv("c", 3, 3, 1, 1),
                LayerSpec::new("r", LayerKind::Relu),
                LayerSpec::new("fc", LayerKind::Fc { out_units: 4 }),
                LayerSpec::new("prob", LayerKind::Softmax),
            ],
            class_names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        };
        let net = random_init(&s, 3).unwrap();
        let input = Tensor::from_vec(s.input_shape, (0..50).map(|v| (v as f32 * 0.37).sin()).collect()).unwrap();
        let out = net.forward(&input, &Ablation::none(), &[]).unwrap();
        let sum: f32 = out.scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(out.scores.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(out.logits.len(), 4);
        assert_ne!(out.logits, out.scores);
    }

    #[test]
    fn input_shape_mismatch_is_config_error() {
        let net = Network::zeroed(spec(Shape3::new(1, 4, 4), vec![conv("c1", 1, 3, 1, 0)])).unwrap();
        let err = net
            .forward(&Tensor::zeros(Shape3::new(1, 5, 4)), &Ablation::none(), &[])
            .unwrap_err();
        assert!(matches!(err, Error::Shape { ref layer, .. } if layer == "c1"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overflow_reports_layer() {
        let mut net = Network::zeroed(spec(Shape3::new(1, 1, 1), vec![conv("big", 1, 1, 1, 0)])).unwrap();
        net.params_mut("big").unwrap().weights[0] = f32::MAX;
        let err = net
            .forward(&Tensor::filled(Shape3::new(1, 1, 1), 4.0), &Ablation::none(), &[])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref layer } if layer == "big"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn unknown_capture_and_bad_filter_are_rejected() {
        let net = Network::zeroed(spec(Shape3::new(1, 4, 4), vec![conv("c", 2, 3, 1, 0)])).unwrap();
        let x = Tensor::zeros(Shape3::new(1, 4, 4));
        assert!(net.forward(&x, &Ablation::none(), &["nope"]).is_err());
        assert!(net.forward(&x, &Ablation::zero_filter("c", 2), &[]).is_err());
        let bad_mask = Ablation::blackout(PixelMask::new(3, 4));
        assert!(net.forward(&x, &bad_mask, &[]).is_err());
    }

    #[test]
    fn resumed_pass_matches_full_pass() {
        let s = spec(
            Shape3::new(2, 9, 9),
            vec![
                conv("c1", 3, 3, 1, 1),
                LayerSpec::new("r1", LayerKind::Relu),
                LayerSpec::new("p1", LayerKind::Maxpool { kernel: 2, stride: 2 }),
                conv("c2", 2, 3, 1, 0),
            ],
        );
        let net = random_init(&s, 11).unwrap();
        let x = Tensor::from_vec(s.input_shape, (0..162).map(|v| (v as f32 * 0.11).cos()).collect()).unwrap();
        let full = net.forward(&x, &Ablation::zero_filter("c1", 1), &["c2"]).unwrap();
        let mut mid = net.forward_to(&x, &Ablation::none(), "c1").unwrap();
        mid.channel_mut(1).fill(0.0);
        let resumed = net.forward_from("c1", mid, &Ablation::none(), &["c2"]).unwrap();
        assert_eq!(full, resumed);
    }
}
