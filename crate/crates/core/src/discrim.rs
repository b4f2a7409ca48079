//! How much the class score depends on a filter (zero-ablation) or on a part
//! (pixel blackout), and correlations between per-part statistics.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::nn::{Ablation, ForwardOutput, Network};
use crate::tensor::Tensor;

/// Which network output counts as the class score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Softmax,
    /// Input of the final softmax.
    Logits,
}

impl ScoreMode {
    fn score(self, out: &ForwardOutput, class: usize) -> Result<f64> {
        let v = match self {
            ScoreMode::Softmax => &out.scores,
            ScoreMode::Logits => &out.logits,
        };
        v.get(class).map(|&s| s as f64).ok_or_else(|| {
            Error::Config(format!("class index {class} out of range ({} outputs)", v.len()))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrimScore {
    /// `layer/filter` for filters, the part class for parts.
    pub target: String,
    pub delta: f64,
    pub per_image_deltas: Vec<f64>,
    pub sigma: f64,
    pub is_discriminative: bool,
}

impl DiscrimScore {
    fn new(target: String, per_image_deltas: Vec<f64>) -> Self {
        DiscrimScore {
            target,
            delta: mean(&per_image_deltas),
            per_image_deltas,
            sigma: 0.0,
            is_discriminative: false,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation. Values are summed in sorted order so the
/// result does not depend on the order of `xs`.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = mean(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - m) * (x - m)).collect();
    dev.sort_by(f64::total_cmp);
    (dev.iter().sum::<f64>() / dev.len() as f64).sqrt()
}

/// Sets `sigma` to the spread of deltas within the group and flags the
/// scores with `delta > 2 sigma`.
pub fn assign_sigma(scores: &mut [DiscrimScore]) {
    let deltas: Vec<f64> = scores.iter().map(|s| s.delta).collect();
    let sigma = population_std(&deltas);
    for s in scores {
        s.sigma = sigma;
        s.is_discriminative = s.delta > 2.0 * sigma;
    }
}

/// δ for every filter of a conv layer on images of one class, with sigma
/// taken over the layer.
pub fn layer_discrim(
    net: &Network,
    images: &[Tensor],
    class_index: usize,
    layer: &str,
    mode: ScoreMode,
) -> Result<Vec<DiscrimScore>> {
    if images.is_empty() {
        return Err(Error::Data("no images for filter discrimination".into()));
    }
    let n_filters = net.filter_count(layer)?;
    // Each image: base score, then the score with each filter's map zeroed.
    // The shared prefix up to `layer` is computed once.
    let per_image: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| -> Result<Vec<f64>> {
            let prefix = net.forward_to(img, &Ablation::none(), layer)?;
            let base = mode.score(&net.forward_from(layer, prefix.clone(), &Ablation::none(), &[])?, class_index)?;
            (0..n_filters)
                .map(|j| {
                    let mut t = prefix.clone();
                    t.channel_mut(j).fill(0.0);
                    let out = net.forward_from(layer, t, &Ablation::none(), &[])?;
                    Ok(base - mode.score(&out, class_index)?)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut scores: Vec<DiscrimScore> = (0..n_filters)
        .map(|j| {
            let d = per_image.iter().map(|row| row[j]).collect();
            DiscrimScore::new(format!("{layer}/{j}"), d)
        })
        .collect();
    assign_sigma(&mut scores);
    Ok(scores)
}

/// δ of a single filter; sigma still covers the whole layer.
pub fn filter_discrim(
    net: &Network,
    images: &[Tensor],
    class_index: usize,
    layer: &str,
    filter: usize,
    mode: ScoreMode,
) -> Result<DiscrimScore> {
    let mut all = layer_discrim(net, images, class_index, layer, mode)?;
    if filter >= all.len() {
        return Err(Error::Config(format!("filter {filter} out of range for `{layer}`")));
    }
    Ok(all.swap_remove(filter))
}

/// δ of a part by blacking out its pixels. Images whose mask is `None` do
/// not contain the part and are skipped; an empty mask contributes δ = 0.
/// Sigma is left at zero; use [`assign_sigma`] over a group of parts.
pub fn part_discrim(
    net: &Network,
    images: &[(Tensor, Option<PixelMask>)],
    class_index: usize,
    part_class: &str,
    mode: ScoreMode,
) -> Result<DiscrimScore> {
    let present: Vec<(&Tensor, &PixelMask)> = images
        .iter()
        .filter_map(|(t, m)| m.as_ref().map(|m| (t, m)))
        .collect();
    if present.is_empty() {
        return Err(Error::Data(format!("no image contains part `{part_class}`")));
    }
    let deltas = present
        .par_iter()
        .map(|(img, mask)| -> Result<f64> {
            if mask.is_empty() {
                return Ok(0.0);
            }
            let base = mode.score(&net.forward(img, &Ablation::none(), &[])?, class_index)?;
            let dark = net.forward(img, &Ablation::blackout((*mask).clone()), &[])?;
            Ok(base - mode.score(&dark, class_index)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DiscrimScore::new(part_class.to_string(), deltas))
}

/// Pearson correlation, computed in two passes around the means.
pub fn ppmcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "series lengths differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    pub ppmcc: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub correlations: Vec<Correlation>,
    /// Set when only two parts were available, so every correlation is ±1.
    pub small_sample: bool,
}

/// The three pairwise correlations among per-part AP, normalized size and δ.
pub fn correlate_emergence<K: Ord + std::fmt::Debug>(
    aps: &BTreeMap<K, f64>,
    sizes: &BTreeMap<K, f64>,
    deltas: &BTreeMap<K, f64>,
) -> Result<CorrelationReport> {
    if !aps.keys().eq(sizes.keys()) || !aps.keys().eq(deltas.keys()) {
        return Err(Error::Data("AP, size and delta tables cover different parts".into()));
    }
    let ap: Vec<f64> = aps.values().copied().collect();
    let size: Vec<f64> = sizes.values().copied().collect();
    let delta: Vec<f64> = deltas.values().copied().collect();
    let pair = |x: &str, xs: &[f64], y: &str, ys: &[f64]| -> Result<Correlation> {
        Ok(Correlation {
            x: x.into(),
            y: y.into(),
            ppmcc: ppmcc(xs, ys)?,
            n: xs.len(),
        })
    };
    Ok(CorrelationReport {
        correlations: vec![
            pair("ap", &ap, "normalized_size", &size)?,
            pair("delta", &delta, "normalized_size", &size)?,
            pair("delta", &delta, "ap", &ap)?,
        ],
        small_sample: ap.len() == 2,
    })
}

pub fn write_discrim_csv<W: Write>(mut out: W, scores: &[DiscrimScore]) -> std::io::Result<()> {
    writeln!(out, "target,delta,sigma,is_discriminative")?;
    for s in scores {
        writeln!(out, "{},{},{},{}", s.target, s.delta, s.sigma, s.is_discriminative)?;
    }
    Ok(())
}
