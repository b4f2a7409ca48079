//! Per-(filter, part) linear box regression from activation context.
//!
//! The feature vector of an activation is its receptive-field center, the
//! 3x3 neighbourhood of activation values and a constant one. Four weight
//! vectors map it to `(dx, dy, w, h)`: an offset from the field center and
//! the absolute box size. Each is fit by activation-weighted least squares.

use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, PartBox};
use crate::error::{Error, Result};
use crate::geometry::ReceptiveField;
use crate::stimulus::Activation;

pub const FEATURE_DIM: usize = 12;
pub const DEFAULT_MIN_PAIRS: usize = 20;
pub const DEFAULT_RIDGE: f64 = 1e-6;

pub type Features = [f64; FEATURE_DIM];

pub fn features(act: &Activation, center: (f64, f64)) -> Features {
    let mut f = [0.0; FEATURE_DIM];
    f[0] = center.0;
    f[1] = center.1;
    for (slot, v) in f[2..11].iter_mut().zip(act.neighborhood) {
        *slot = v as f64;
    }
    f[11] = 1.0;
    f
}

/// An activation located in some image, with its receptive-field center
/// (clamped into the image).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationSite {
    pub image_id: usize,
    pub activation: Activation,
    pub center: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingPair {
    pub features: Features,
    /// `(Gx - cx, Gy - cy, Gw, Gh)`.
    pub targets: [f64; 4],
    pub weight: f64,
}

/// Pairs each activation with the smallest-area ground-truth box of its
/// image that contains the activation's field center.
pub fn collect_pairs(sites: &[ActivationSite], gts: &[PartBox]) -> Vec<TrainingPair> {
    let mut by_image: std::collections::HashMap<usize, Vec<&PartBox>> = Default::default();
    for g in gts {
        by_image.entry(g.image_id).or_default().push(g);
    }
    sites
        .iter()
        .filter_map(|s| {
            let (cx, cy) = s.center;
            let candidates = by_image.get(&s.image_id)?;
            let gt = candidates
                .iter()
                .filter(|g| g.bbox.contains_point(cx, cy))
                .fold(None::<&PartBox>, |best, g| match best {
                    Some(b) if b.bbox.area() <= g.bbox.area() => Some(b),
                    _ => Some(g),
                })?;
            let (gx, gy) = gt.bbox.center();
            Some(TrainingPair {
                features: features(&s.activation, s.center),
                targets: [gx - cx, gy - cy, gt.bbox.w, gt.bbox.h],
                weight: s.activation.value as f64,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub min_pairs: usize,
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            min_pairs: DEFAULT_MIN_PAIRS,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Weight vectors for `dx, dy, dw, dh`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxModel {
    pub weights: [Features; 4],
    pub pairs: usize,
}

/// Weighted least squares for the four targets.
///
/// The damped system `(A + ridge I) dx = b - A x` is iterated from zero
/// (iterated Tikhonov). On well-determined directions it converges to the
/// exact weighted least-squares solution, so the result does not depend on
/// the overall scale of the pair weights; directions the data leaves
/// undetermined stay at zero.
pub fn fit(pairs: &[TrainingPair], opts: &FitOptions) -> Result<BoxModel> {
    if pairs.len() < opts.min_pairs.max(1) {
        return Err(Error::InsufficientData {
            count: pairs.len(),
            min: opts.min_pairs,
        });
    }
    let mut gram = [[0.0f64; FEATURE_DIM]; FEATURE_DIM];
    let mut rhs = [[0.0f64; FEATURE_DIM]; 4];
    for p in pairs {
        if !(p.weight.is_finite() && p.weight >= 0.0) || p.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("training pair with non-finite or negative weight".into()));
        }
        for i in 0..FEATURE_DIM {
            let wi = p.weight * p.features[i];
            for j in 0..=i {
                gram[i][j] += wi * p.features[j];
            }
            for t in 0..4 {
                rhs[t][i] += wi * p.targets[t];
            }
        }
    }
    for i in 0..FEATURE_DIM {
        for j in 0..i {
            gram[j][i] = gram[i][j];
        }
    }
    let mut damped = gram;
    for (i, row) in damped.iter_mut().enumerate() {
        row[i] += opts.ridge;
    }
    let chol = cholesky(&damped)
        .ok_or_else(|| Error::NonFinite { layer: "regression".into() })?;
    let mut weights = [[0.0; FEATURE_DIM]; 4];
    for t in 0..4 {
        weights[t] = refine(&gram, &rhs[t], &chol);
    }
    if weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite {
            layer: "regression".into(),
        });
    }
    Ok(BoxModel {
        weights,
        pairs: pairs.len(),
    })
}

type Mat = [[f64; FEATURE_DIM]; FEATURE_DIM];

fn cholesky(a: &Mat) -> Option<Mat> {
    let mut l = [[0.0; FEATURE_DIM]; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn solve_cholesky(l: &Mat, b: &Features) -> Features {
    let mut y = [0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = [0.0; FEATURE_DIM];
    for i in (0..FEATURE_DIM).rev() {
        let s: f64 = (i + 1..FEATURE_DIM).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}

fn refine(gram: &Mat, b: &Features, chol: &Mat) -> Features {
    const MAX_STEPS: usize = 200;
    let mut x = [0.0; FEATURE_DIM];
    for _ in 0..MAX_STEPS {
        let mut resid = *b;
        for i in 0..FEATURE_DIM {
            resid[i] -= (0..FEATURE_DIM).map(|j| gram[i][j] * x[j]).sum::<f64>();
        }
        let dx = solve_cholesky(chol, &resid);
        let step: f64 = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        if step <= 1e-15 * (1.0 + norm) {
            break;
        }
    }
    x
}

impl BoxModel {
    /// `(dx, dy, dw, dh)` for a feature vector.
    pub fn predict(&self, f: &Features) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(f).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Regressed box for an activation, clipped to a `width x height` image.
    pub fn apply(&self, act: &Activation, field: &ReceptiveField, width: usize, height: usize) -> BBox {
        let center = field.clamped_center;
        let [dx, dy, dw, dh] = self.predict(&features(act, center));
        BBox::from_center(center.0 + dx, center.1 + dy, dw.max(1.0), dh.max(1.0)).clip(width, height)
    }

    /// `sum_k a_k (t_k - w . f_k)^2` for target `t` (0..4).
    pub fn objective(weights: &Features, pairs: &[TrainingPair], t: usize) -> f64 {
        pairs
            .iter()
            .map(|p| {
                let pred: f64 = weights.iter().zip(&p.features).map(|(a, b)| a * b).sum();
                p.weight * (p.targets[t] - pred).powi(2)
            })
            .sum()
    }
}

/// A fitted regressor with its identity; the JSON form used by regressor
/// bank files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartRegressor {
    pub part_class: String,
    pub layer: String,
    pub filter: usize,
    pub w_x: Vec<f64>,
    pub w_y: Vec<f64>,
    pub w_w: Vec<f64>,
    pub w_h: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
}

impl PartRegressor {
    pub fn new(part_class: impl Into<String>, layer: impl Into<String>, filter: usize, model: &BoxModel) -> Self {
        PartRegressor {
            part_class: part_class.into(),
            layer: layer.into(),
            filter,
            w_x: model.weights[0].to_vec(),
            w_y: model.weights[1].to_vec(),
            w_w: model.weights[2].to_vec(),
            w_h: model.weights[3].to_vec(),
            k: model.pairs,
        }
    }

    pub fn model(&self) -> Result<BoxModel> {
        let conv = |v: &[f64], name: &str| -> Result<Features> {
            let arr: Features = v.try_into().map_err(|_| {
                Error::Format(format!(
                    "regressor {}/{}#{}: {name} has {} entries, expected {FEATURE_DIM}",
                    self.part_class,
                    self.layer,
                    self.filter,
                    v.len()
                ))
            })?;
            if arr.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("regressor {name} has non-finite weights")));
            }
            Ok(arr)
        };
        Ok(BoxModel {
            weights: [
                conv(&self.w_x, "w_x")?,
                conv(&self.w_y, "w_y")?,
                conv(&self.w_w, "w_w")?,
                conv(&self.w_h, "w_h")?,
            ],
            pairs: self.k,
        })
    }
}

pub fn parse_regressor_bank(text: &str) -> Result<Vec<PartRegressor>> {
    let bank: Vec<PartRegressor> = serde_json::from_str(text)?;
    for r in &bank {
        r.model()?;
    }
    Ok(bank)
}
