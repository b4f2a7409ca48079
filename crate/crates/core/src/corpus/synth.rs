//! Synthetic corpus: one object per image, drawn as a flat body with planted
//! part patterns at annotated positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, ObjectAnnotation, PartAnnotation, RgbImage};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::mask::PixelMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Bright in the middle, fading as `1 - r^2`.
    Blob,
    /// Outer ring of the ellipse.
    Ring,
    /// 2x2 checkerboard: opposite quadrants bright.
    Checker,
    /// Horizontal band through the middle.
    Bar,
}

/// Pattern intensity in [0, 1] at normalized ellipse coordinates, or `None`
/// outside the unit disc.
pub fn render_pattern(pattern: Pattern, u: f64, v: f64) -> Option<f64> {
    let r2 = u * u + v * v;
    if r2 > 1.0 {
        return None;
    }
    Some(match pattern {
        Pattern::Blob => 1.0 - r2,
        Pattern::Ring => {
            if r2 >= 0.25 {
                1.0
            } else {
                0.0
            }
        }
        Pattern::Checker => {
            if (u >= 0.0) == (v >= 0.0) {
                1.0
            } else {
                0.0
            }
        }
        Pattern::Bar => {
            if v.abs() < 0.35 {
                1.0
            } else {
                0.0
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartLayout {
    pub name: String,
    pub pattern: Pattern,
    /// RGB in [0, 1].
    pub color: [f64; 3],
    /// Center relative to the object box, each coordinate in [0, 1].
    pub rel_center: [f64; 2],
    /// Width and height relative to the object box.
    pub rel_size: [f64; 2],
    /// Uniform center jitter, as a fraction of the object size.
    #[serde(default)]
    pub jitter: f64,
    /// Blend weight of the pattern over the body color.
    #[serde(default = "one")]
    pub contrast: f64,
    /// Probability that an instance of the object shows this part.
    #[serde(default = "one")]
    pub presence: f64,
    /// How strongly the part votes for its class in a matched-filter network.
    #[serde(default = "one")]
    pub evidence: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectLayout {
    pub class: String,
    pub body_color: [f64; 3],
    pub parts: Vec<PartLayout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Nominal object side in pixels.
    pub object_size: f64,
    /// Relative spread of the object side (uniform, +-).
    pub object_size_jitter: f64,
    /// Per-pixel Gaussian noise, in [0, 1] intensity units.
    pub noise_std: f64,
    pub background: [f64; 3],
    pub classes: Vec<ObjectLayout>,
}

const ASPECT_JITTER: f64 = 0.1;

fn part(name: &str, pattern: Pattern, color: [f64; 3], center: [f64; 2], size: [f64; 2]) -> PartLayout {
    PartLayout {
        name: name.into(),
        pattern,
        color,
        rel_center: center,
        rel_size: size,
        jitter: 0.12,
        contrast: 1.0,
        presence: 1.0,
        evidence: 1.0,
    }
}

impl SynthConfig {
    /// Three object classes with three or four parts each. The car's plate
    /// carries no class evidence.
    pub fn three_class() -> Self {
        let mut plate = part("plate", Pattern::Bar, [0.95, 0.9, 0.15], [0.5, 0.62], [0.3, 0.2]);
        plate.evidence = 0.0;
        SynthConfig {
            width: 128,
            height: 128,
            object_size: 90.0,
            object_size_jitter: 0.1,
            noise_std: 0.03,
            background: [0.5, 0.5, 0.5],
            classes: vec![
                ObjectLayout {
                    class: "car".into(),
                    body_color: [0.35, 0.42, 0.62],
                    parts: vec![
                        part("wheel", Pattern::Ring, [0.05, 0.05, 0.05], [0.25, 0.83], [0.28, 0.28]),
                        part("window", Pattern::Checker, [0.8, 0.95, 1.0], [0.5, 0.25], [0.44, 0.28]),
                        part("light", Pattern::Blob, [1.0, 0.55, 0.0], [0.85, 0.45], [0.22, 0.22]),
                        plate,
                    ],
                },
                ObjectLayout {
                    class: "cow".into(),
                    body_color: [0.6, 0.48, 0.36],
                    parts: vec![
                        part("head", Pattern::Blob, [0.9, 0.2, 0.7], [0.2, 0.25], [0.32, 0.32]),
                        part("leg", Pattern::Bar, [0.97, 0.97, 0.97], [0.55, 0.85], [0.5, 0.22]),
                        part("spot", Pattern::Checker, [0.0, 0.0, 0.0], [0.7, 0.4], [0.3, 0.3]),
                    ],
                },
                ObjectLayout {
                    class: "bird".into(),
                    body_color: [0.38, 0.58, 0.4],
                    parts: vec![
                        part("beak", Pattern::Blob, [0.95, 0.1, 0.1], [0.85, 0.3], [0.22, 0.22]),
                        part("wing", Pattern::Ring, [0.2, 0.85, 0.95], [0.45, 0.55], [0.4, 0.34]),
                        part("tail", Pattern::Bar, [0.3, 0.1, 0.55], [0.15, 0.75], [0.34, 0.2]),
                    ],
                },
            ],
        }
    }

    /// Two classes whose parts grow together in size, contrast and class
    /// evidence, under heavier noise.
    pub fn monotone() -> Self {
        let graded = |name: &str, pattern, color, center, step: usize| {
            let s = [0.2, 0.28, 0.36, 0.44][step];
            let mut p = part(name, pattern, color, center, [s, s]);
            p.contrast = [0.2, 0.4, 0.65, 1.0][step];
            p.evidence = [0.1, 0.4, 0.7, 1.0][step];
            p
        };
        SynthConfig {
            width: 128,
            height: 128,
            object_size: 90.0,
            object_size_jitter: 0.1,
            noise_std: 0.12,
            background: [0.5, 0.5, 0.5],
            classes: vec![
                ObjectLayout {
                    class: "car".into(),
                    body_color: [0.35, 0.42, 0.62],
                    parts: vec![
                        graded("light", Pattern::Blob, [1.0, 0.6, 0.0], [0.84, 0.2], 0),
                        graded("mirror", Pattern::Checker, [0.05, 0.05, 0.05], [0.18, 0.2], 1),
                        graded("window", Pattern::Ring, [0.85, 0.95, 1.0], [0.24, 0.7], 2),
                        graded("door", Pattern::Bar, [0.95, 0.95, 0.2], [0.7, 0.7], 3),
                    ],
                },
                ObjectLayout {
                    class: "cow".into(),
                    body_color: [0.6, 0.48, 0.36],
                    parts: vec![
                        graded("ear", Pattern::Bar, [0.1, 0.05, 0.0], [0.84, 0.2], 0),
                        graded("eye", Pattern::Blob, [0.95, 0.95, 0.9], [0.18, 0.2], 1),
                        graded("spot", Pattern::Checker, [0.95, 0.3, 0.75], [0.24, 0.7], 2),
                        graded("head", Pattern::Ring, [0.95, 0.9, 0.6], [0.7, 0.7], 3),
                    ],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let span = self.object_size * (1.0 + self.object_size_jitter) * (1.0 + ASPECT_JITTER);
        if !(self.object_size > 0.0) || !(0.0..1.0).contains(&self.object_size_jitter) {
            return Err(Error::Config("object size must be positive with jitter in [0, 1)".into()));
        }
        if span > self.width.min(self.height) as f64 {
            return Err(Error::Config(format!(
                "objects up to {span:.1} px overflow the {}x{} image",
                self.width, self.height
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("layout has no object classes".into()));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        for class in &self.classes {
            for p in &class.parts {
                let ok = p.rel_center.iter().all(|&c| unit(c))
                    && p.rel_size.iter().all(|&s| s > 0.0 && s <= 1.0)
                    && p.color.iter().all(|&c| unit(c))
                    && unit(p.contrast)
                    && unit(p.presence)
                    && p.jitter >= 0.0
                    && p.evidence >= 0.0;
                if !ok {
                    return Err(Error::Config(format!(
                        "part `{}` of `{}` lies outside its object or has out-of-range values",
                        p.name, class.class
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates `n_images` images; image `i` shows class `i mod n_classes`.
pub fn generate_synthetic(seed: u64, n_images: usize, cfg: &SynthConfig) -> Result<Vec<AnnotatedImage>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(format!("noise: {e}")))?;
    (0..n_images)
        .map(|i| Ok(render_image(&cfg.classes[i % cfg.classes.len()], cfg, &noise, &mut rng)))
        .collect()
}

fn render_image(layout: &ObjectLayout, cfg: &SynthConfig, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> AnnotatedImage {
    let (w, h) = (cfg.width, cfg.height);
    let side = cfg.object_size * (1.0 + rng.random_range(-1.0..=1.0) * cfg.object_size_jitter);
    let ow = (side * (1.0 + rng.random_range(-ASPECT_JITTER..=ASPECT_JITTER))).round();
    let oh = (side * (1.0 + rng.random_range(-ASPECT_JITTER..=ASPECT_JITTER))).round();
    let ox = rng.random_range(0.0..=(w as f64 - ow)).floor();
    let oy = rng.random_range(0.0..=(h as f64 - oh)).floor();
    let object = BBox::new(ox, oy, ow, oh);

    let mut canvas = vec![cfg.background; w * h];
    for y in oy as usize..(oy + oh) as usize {
        for x in ox as usize..(ox + ow) as usize {
            canvas[y * w + x] = layout.body_color;
        }
    }

    let mut parts = Vec::new();
    for p in &layout.parts {
        // draw all random numbers up front so absent parts consume the same stream
        let present = rng.random::<f64>() < p.presence;
        let jx = rng.random_range(-1.0..=1.0) * p.jitter * ow;
        let jy = rng.random_range(-1.0..=1.0) * p.jitter * oh;
        let scale = 1.0 + rng.random_range(-0.1..=0.1);
        if !present {
            continue;
        }
        let cx = ox + p.rel_center[0] * ow + jx;
        let cy = oy + p.rel_center[1] * oh + jy;
        let (rx, ry) = (p.rel_size[0] * ow * scale / 2.0, p.rel_size[1] * oh * scale / 2.0);
        let mask = PixelMask::from_fn(w, h, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            object.contains_point(px, py) && {
                let (u, v) = ((px - cx) / rx, (py - cy) / ry);
                u * u + v * v <= 1.0
            }
        });
        let Some(bbox) = mask.bounding_box() else { continue };
        for y in bbox.y as usize..bbox.bottom() as usize {
            for x in bbox.x as usize..bbox.right() as usize {
                if !mask.get(x, y) {
                    continue;
                }
                let (u, v) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let a = p.contrast * render_pattern(p.pattern, u, v).unwrap_or(0.0);
                let body = layout.body_color;
                canvas[y * w + x] = [0, 1, 2].map(|c| body[c] + a * (p.color[c] - body[c]));
            }
        }
        parts.push(PartAnnotation {
            part_class: p.name.clone(),
            parent: 0,
            bbox,
            mask,
        });
    }

    let mut image = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = canvas[y * w + x].map(|v| {
                let n = if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
            });
            image.put_pixel(x, y, px);
        }
    }
    AnnotatedImage {
        image,
        objects: vec![ObjectAnnotation {
            class: layout.class.clone(),
            bbox: object,
        }],
        parts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_ppm, filter_catalog, CatalogRules};

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::three_class();
        let a = generate_synthetic(7, 6, &cfg).unwrap();
        let b = generate_synthetic(7, 6, &cfg).unwrap();
        let c = generate_synthetic(8, 6, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(encode_ppm(&a[3].image), encode_ppm(&b[3].image));
        assert!(generate_synthetic(7, 0, &cfg).unwrap().is_empty());
    }

    #[test]
    fn masks_stay_inside_objects() {
        for cfg in [SynthConfig::three_class(), SynthConfig::monotone()] {
            for img in generate_synthetic(3, 12, &cfg).unwrap() {
                img.validate().unwrap();
                let obj = img.objects[0].bbox;
                for p in &img.parts {
                    assert!(obj.contains_box(&p.bbox));
                    assert_eq!(p.mask.bounding_box(), Some(p.bbox));
                }
            }
        }
    }

    #[test]
    fn overflowing_layout_is_rejected() {
        let mut cfg = SynthConfig::three_class();
        cfg.object_size = 125.0;
        assert!(matches!(generate_synthetic(0, 1, &cfg), Err(Error::Config(_))));
        let mut cfg = SynthConfig::three_class();
        cfg.classes[0].parts[0].rel_center = [1.2, 0.5];
        assert!(generate_synthetic(0, 1, &cfg).is_err());
    }

    #[test]
    fn nothing_discarded_from_presets() {
        for cfg in [SynthConfig::three_class(), SynthConfig::monotone()] {
            let images = generate_synthetic(1, 90, &cfg).unwrap();
            let cat = filter_catalog(&images, &CatalogRules::default());
            assert!(cat.discarded.is_empty(), "{:?}", cat.discarded);
            let n_parts: usize = cfg.classes.iter().map(|c| c.parts.len()).sum();
            assert_eq!(cat.parts.len(), n_parts);
        }
    }

    #[test]
    fn pattern_shapes() {
        assert_eq!(render_pattern(Pattern::Blob, 0.0, 0.0), Some(1.0));
        assert_eq!(render_pattern(Pattern::Blob, 1.0, 0.5), None);
        assert_eq!(render_pattern(Pattern::Ring, 0.1, 0.1), Some(0.0));
        assert_eq!(render_pattern(Pattern::Ring, 0.8, 0.0), Some(1.0));
        assert_eq!(render_pattern(Pattern::Bar, 0.0, 0.5), Some(0.0));
    }
}
