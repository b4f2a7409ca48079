//! End-to-end part-detection analysis: crop objects, collect feature-map
//! maxima, regress boxes, score every filter and search filter combinations
//! for each (layer, part class).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, PartBox};
use crate::corpus::{
    crop_and_warp, filter_catalog, relabel, warp_mask, AnnotatedImage, CatalogRules, ContextPad, CropSpec,
    CropTransform, PartCatalog, PartKey,
};
use crate::discrim::{assign_sigma, correlate_emergence, layer_discrim, part_discrim, CorrelationReport, DiscrimScore, ScoreMode};
use crate::error::{Error, Result};
use crate::eval::{emergence, match_and_ap, EvalReport, DEFAULT_MATCH_IOU};
use crate::ga::{run_ga, top_filters, CombinationFitness, Fitness, GaConfig, GenerationStats};
use crate::geometry::{layer_geometry, LayerGeometry};
use crate::mask::PixelMask;
use crate::nn::{Ablation, LayerKind, Network};
use crate::regression::{collect_pairs, fit, ActivationSite, FitOptions, PartRegressor, DEFAULT_MIN_PAIRS, DEFAULT_RIDGE};
use crate::stimulus::{local_maxima, nms, Activation, StimulusDetection, DEFAULT_NMS_IOU};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Conv layers to analyse; empty means every conv layer.
    pub layers: Vec<String>,
    pub context_pad: ContextPad,
    pub catalog: CatalogRules,
    pub nms_iou: f64,
    pub match_iou: f64,
    pub min_activation: f32,
    pub regression: bool,
    pub min_pairs: usize,
    pub ridge: f64,
    pub ga: GaConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            layers: Vec::new(),
            context_pad: ContextPad::Fraction(0.10),
            catalog: CatalogRules::default(),
            nms_iou: DEFAULT_NMS_IOU,
            match_iou: DEFAULT_MATCH_IOU,
            min_activation: 0.0,
            regression: true,
            min_pairs: DEFAULT_MIN_PAIRS,
            ridge: DEFAULT_RIDGE,
            ga: GaConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nms_iou", self.nms_iou), ("match_iou", self.match_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        self.ga.validate()
    }

    /// The configured layers, or all conv layers of `net`.
    pub fn analysis_layers(&self, net: &Network) -> Result<Vec<String>> {
        if self.layers.is_empty() {
            return Ok(net
                .spec()
                .layers
                .iter()
                .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
                .map(|l| l.name.clone())
                .collect());
        }
        for l in &self.layers {
            net.filter_count(l)?;
        }
        Ok(self.layers.clone())
    }

    pub fn crop_spec(&self, net: &Network) -> CropSpec {
        CropSpec {
            context_pad: self.context_pad,
            ..CropSpec::for_input(net.input_shape())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropPart {
    pub part_class: String,
    /// Box in crop coordinates, clipped to the crop.
    pub bbox: BBox,
    pub mask: PixelMask,
}

/// One object warped to the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub image: usize,
    pub object: usize,
    pub class: String,
    pub input: Tensor,
    pub transform: CropTransform,
    pub parts: Vec<CropPart>,
}

impl Crop {
    /// Warped mask of `part_class`, or `None` when the object lacks it.
    pub fn part_mask(&self, part_class: &str) -> Option<PixelMask> {
        let mut found: Option<PixelMask> = None;
        for p in self.parts.iter().filter(|p| p.part_class == part_class) {
            let m = found.get_or_insert_with(|| PixelMask::new(p.mask.width(), p.mask.height()));
            for (i, &b) in p.mask.bits().iter().enumerate() {
                if b {
                    m.set(i % p.mask.width(), i / p.mask.width(), true);
                }
            }
        }
        found
    }
}

/// Crops every object whose class appears in `classes`, in image order.
pub fn build_crops(images: &[AnnotatedImage], classes: &[String], spec: &CropSpec) -> Result<Vec<Crop>> {
    let mut jobs = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for (o, obj) in img.objects.iter().enumerate() {
            if classes.contains(&obj.class) {
                jobs.push((i, o));
            }
        }
    }
    jobs.par_iter()
        .map(|&(i, o)| {
            let img = &images[i];
            let (input, transform) = crop_and_warp(img, o, spec)?;
            let parts = img
                .parts
                .iter()
                .filter(|p| p.parent == o)
                .map(|p| CropPart {
                    part_class: p.part_class.clone(),
                    bbox: transform.map_box(&p.bbox).clip(spec.width, spec.height),
                    mask: warp_mask(&p.mask, &transform, spec.width, spec.height),
                })
                .collect();
            Ok(Crop {
                image: i,
                object: o,
                class: img.objects[o].class.clone(),
                input,
                transform,
                parts,
            })
        })
        .collect()
}

/// Local maxima of every filter of one layer on every crop.
pub struct LayerMaxima {
    pub layer: String,
    pub geometry: LayerGeometry,
    /// `[filter][crop]`.
    pub maxima: Vec<Vec<Vec<Activation>>>,
}

pub fn extract_maxima(net: &Network, crops: &[Crop], layers: &[String], min_value: f32) -> Result<Vec<LayerMaxima>> {
    let names: Vec<&str> = layers.iter().map(String::as_str).collect();
    // [crop][layer][filter]
    let per_crop: Vec<Vec<Vec<Vec<Activation>>>> = crops
        .par_iter()
        .map(|crop| -> Result<_> {
            let out = net.forward(&crop.input, &Ablation::none(), &names)?;
            Ok(names
                .iter()
                .map(|l| {
                    let t = &out.captured[*l];
                    (0..t.shape().channels).map(|j| local_maxima(t.channel(j), min_value)).collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    layers
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let n_filters = net.filter_count(layer)?;
            let maxima = (0..n_filters)
                .map(|j| per_crop.iter().map(|c| c[li][j].clone()).collect())
                .collect();
            Ok(LayerMaxima {
                layer: layer.clone(),
                geometry: layer_geometry(net.spec(), layer)?,
                maxima,
            })
        })
        .collect()
}

/// Ground-truth boxes of `part_class` on the given crops, keyed by crop index.
pub fn part_boxes(crops: &[Crop], members: &[usize], part_class: &str) -> Vec<PartBox> {
    members
        .iter()
        .flat_map(|&c| {
            crops[c]
                .parts
                .iter()
                .filter(|p| p.part_class == part_class)
                .map(move |p| PartBox {
                    image_id: c,
                    part_class: p.part_class.clone(),
                    bbox: p.bbox,
                })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    pub filter: usize,
    pub ap: f64,
    pub max_recall: f64,
    pub n_detections: usize,
    pub regressed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub filters: Vec<usize>,
    pub ap: f64,
    pub max_recall: f64,
}

/// Results for one (layer, part class).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartResult {
    pub layer: String,
    pub object: String,
    pub part: String,
    pub n_gt: usize,
    pub filters: Vec<FilterScore>,
    pub best_filter: usize,
    pub best_ap: f64,
    pub ga: Combination,
    pub top_filters: Combination,
    pub emerged: bool,
    pub covered: bool,
}

impl PartResult {
    pub fn key(&self) -> PartKey {
        PartKey::new(&self.object, &self.part)
    }
}

/// Everything produced for one (layer, part class), including the
/// artifacts that are only written to disk.
pub struct PartAnalysis {
    pub result: PartResult,
    pub ga_report: EvalReport,
    pub ga_history: Vec<GenerationStats>,
    pub regressors: Vec<PartRegressor>,
}

/// Per-filter detections for one part: regressed when enough training pairs
/// exist, raw receptive-field boxes otherwise, then NMS within each crop.
pub fn filter_detections(
    maxima: &LayerMaxima,
    filter: usize,
    members: &[usize],
    gts: &[PartBox],
    part_class: &str,
    cfg: &PipelineConfig,
) -> (Vec<StimulusDetection>, Option<PartRegressor>) {
    let g = &maxima.geometry;
    let layer: std::sync::Arc<str> = maxima.layer.as_str().into();
    let model = if cfg.regression {
        let sites: Vec<ActivationSite> = members
            .iter()
            .flat_map(|&c| {
                maxima.maxima[filter][c].iter().map(move |a| ActivationSite {
                    image_id: c,
                    activation: *a,
                    center: g.field(a.c, a.r).clamped_center,
                })
            })
            .collect();
        let pairs = collect_pairs(&sites, gts);
        fit(&pairs, &FitOptions { min_pairs: cfg.min_pairs, ridge: cfg.ridge }).ok()
    } else {
        None
    };
    let mut dets = Vec::new();
    for &c in members {
        let raw: Vec<StimulusDetection> = maxima.maxima[filter][c]
            .iter()
            .map(|a| {
                let field = g.field(a.c, a.r);
                let bbox = match &model {
                    Some(m) => m.apply(a, &field, g.image_width, g.image_height),
                    None => field.clipped,
                };
                StimulusDetection {
                    image_id: c,
                    layer: layer.clone(),
                    filter,
                    bbox,
                    score: a.value,
                    regressed: model.is_some(),
                }
            })
            .collect();
        dets.extend(nms(&raw, cfg.nms_iou));
    }
    let reg = model.map(|m| PartRegressor::new(part_class, maxima.layer.as_str(), filter, &m));
    (dets, reg)
}

/// Every filter's detections and AP for one part, before any combination
/// search.
pub struct PartScores {
    pub gts: Vec<PartBox>,
    pub scores: Vec<FilterScore>,
    pub fitness: CombinationFitness,
    pub regressors: Vec<PartRegressor>,
}

/// `None` when no crop of the object class carries the part.
pub fn score_filters(maxima: &LayerMaxima, crops: &[Crop], key: &PartKey, cfg: &PipelineConfig) -> Result<Option<PartScores>> {
    let members: Vec<usize> = (0..crops.len()).filter(|&c| crops[c].class == key.object).collect();
    let gts = part_boxes(crops, &members, &key.part);
    if gts.is_empty() {
        return Ok(None);
    }
    let n_filters = maxima.maxima.len();
    let per_filter: Vec<(Vec<StimulusDetection>, Option<PartRegressor>)> = (0..n_filters)
        .into_par_iter()
        .map(|j| filter_detections(maxima, j, &members, &gts, &key.part, cfg))
        .collect();
    let mut scores = Vec::with_capacity(n_filters);
    for (j, (dets, reg)) in per_filter.iter().enumerate() {
        let r = match_and_ap(dets, &gts, cfg.match_iou)?;
        scores.push(FilterScore {
            filter: j,
            ap: r.ap,
            max_recall: r.max_recall,
            n_detections: r.n_detections,
            regressed: reg.is_some(),
        });
    }
    let (dets, regs): (Vec<_>, Vec<_>) = per_filter.into_iter().unzip();
    let fitness = CombinationFitness::new(&dets, gts.clone(), cfg.nms_iou, cfg.match_iou)?;
    Ok(Some(PartScores {
        gts,
        scores,
        fitness,
        regressors: regs.into_iter().flatten().collect(),
    }))
}

impl PartScores {
    pub fn best(&self) -> (usize, f64) {
        self.scores
            .iter()
            .fold((0, f64::NEG_INFINITY), |acc, s| if s.ap > acc.1 { (s.filter, s.ap) } else { acc })
    }

    /// The `n` filters with the highest individual AP, combined.
    pub fn top_filters(&self, n: usize) -> Result<Combination> {
        let aps: Vec<f64> = self.scores.iter().map(|s| s.ap).collect();
        let top = top_filters(&aps, n);
        let r = self.fitness.report(&top.bits)?;
        Ok(Combination {
            filters: top.selected(),
            ap: r.ap,
            max_recall: r.max_recall,
        })
    }
}

pub fn analyze_part(
    maxima: &LayerMaxima,
    crops: &[Crop],
    key: &PartKey,
    cfg: &PipelineConfig,
    ga_seed: u64,
) -> Result<Option<PartAnalysis>> {
    let Some(ps) = score_filters(maxima, crops, key, cfg)? else {
        return Ok(None);
    };
    let n_filters = ps.scores.len();
    let ga = run_ga(&GaConfig { seed: ga_seed, ..cfg.ga.clone() }, n_filters, &ps.fitness)?;
    let ga_report = ps.fitness.report(&ga.best.bits)?;
    debug_assert_eq!(ps.fitness.fitness(&ga.best.bits), ga_report.ap);
    let top = ps.top_filters(ga.best.count().max(1))?;
    let (best_filter, best_ap) = ps.best();
    let e = emergence(&ga_report);
    Ok(Some(PartAnalysis {
        result: PartResult {
            layer: maxima.layer.clone(),
            object: key.object.clone(),
            part: key.part.clone(),
            n_gt: ps.gts.len(),
            filters: ps.scores,
            best_filter,
            best_ap,
            ga: Combination {
                filters: ga.best.selected(),
                ap: ga_report.ap,
                max_recall: ga_report.max_recall,
            },
            top_filters: top,
            emerged: e.emerged_by_ap,
            covered: e.covered,
        },
        ga_report,
        ga_history: ga.history,
        regressors: ps.regressors,
    }))
}

/// Mean over parts of one layer (the summary row of the results table).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: String,
    pub n_parts: usize,
    pub map_best: f64,
    pub map_ga: f64,
    pub map_top_filters: f64,
    pub mean_ga_filters: f64,
    pub emerged: usize,
    pub covered: usize,
}

pub fn summarize(layer: &str, rows: &[PartResult]) -> LayerSummary {
    let rows: Vec<&PartResult> = rows.iter().filter(|r| r.layer == layer).collect();
    let n = rows.len();
    let mean = |f: &dyn Fn(&PartResult) -> f64| if n == 0 { 0.0 } else { rows.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
    LayerSummary {
        layer: layer.to_string(),
        n_parts: n,
        map_best: mean(&|r| r.best_ap),
        map_ga: mean(&|r| r.ga.ap),
        map_top_filters: mean(&|r| r.top_filters.ap),
        mean_ga_filters: mean(&|r| r.ga.filters.len() as f64),
        emerged: rows.iter().filter(|r| r.emerged).count(),
        covered: rows.iter().filter(|r| r.covered).count(),
    }
}

pub struct PipelineOutput {
    pub catalog: PartCatalog,
    pub layers: Vec<String>,
    pub analyses: Vec<PartAnalysis>,
    pub summaries: Vec<LayerSummary>,
    pub warnings: Vec<String>,
}

impl PipelineOutput {
    pub fn rows(&self) -> Vec<PartResult> {
        self.analyses.iter().map(|a| a.result.clone()).collect()
    }
}

/// Catalog, crops and feature-map maxima shared by every per-part analysis.
pub struct Prepared {
    pub catalog: PartCatalog,
    pub layers: Vec<String>,
    pub crops: Vec<Crop>,
    pub maxima: Vec<LayerMaxima>,
    pub warnings: Vec<String>,
}

pub fn prepare(images: &[AnnotatedImage], net: &Network, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let layers = cfg.analysis_layers(net)?;
    let catalog = filter_catalog(images, &cfg.catalog);
    let mut warnings = Vec::new();
    if catalog.parts.is_empty() {
        warnings.push("part catalog is empty; nothing to analyse".to_string());
    }
    let images = relabel(images, &cfg.catalog, &catalog);
    let crops = build_crops(&images, &catalog.object_classes(), &cfg.crop_spec(net))?;
    let maxima = extract_maxima(net, &crops, &layers, cfg.min_activation)?;
    Ok(Prepared {
        catalog,
        layers,
        crops,
        maxima,
        warnings,
    })
}

pub fn run_pipeline(images: &[AnnotatedImage], net: &Network, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let Prepared {
        catalog,
        layers,
        crops,
        maxima,
        mut warnings,
    } = prepare(images, net, cfg)?;
    let mut analyses = Vec::new();
    let mut row = 0u64;
    for lm in &maxima {
        for entry in &catalog.parts {
            let key = entry.key();
            match analyze_part(lm, &crops, &key, cfg, cfg.ga.seed.wrapping_add(row))? {
                Some(a) => analyses.push(a),
                None => warnings.push(format!("{key}: no ground truth survives cropping in {}", lm.layer)),
            }
            row += 1;
        }
    }
    let rows: Vec<PartResult> = analyses.iter().map(|a| a.result.clone()).collect();
    let summaries = layers.iter().map(|l| summarize(l, &rows)).collect();
    Ok(PipelineOutput {
        catalog,
        layers,
        analyses,
        summaries,
        warnings,
    })
}

/// Per-part values plotted against each other: normalized size, AP and δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergenceRow {
    pub object: String,
    pub part: String,
    pub normalized_size: f64,
    pub ap: f64,
    pub delta: f64,
}

pub struct DiscrimStudy {
    /// `(object class, layer, scores)`.
    pub filters: Vec<(String, String, Vec<DiscrimScore>)>,
    /// `(object class, scores)`, sigma over the parts of that class.
    pub parts: Vec<(String, Vec<DiscrimScore>)>,
    pub emergence: Vec<EmergenceRow>,
    pub correlation: CorrelationReport,
    pub warnings: Vec<String>,
}

/// Filter and part discriminativeness on the crops of every catalogued
/// object class, correlated with the per-part APs of a pipeline run.
pub fn run_discrim(
    images: &[AnnotatedImage],
    net: &Network,
    cfg: &PipelineConfig,
    catalog: &PartCatalog,
    aps: &BTreeMap<(String, String), f64>,
    layers: &[String],
    mode: ScoreMode,
) -> Result<DiscrimStudy> {
    if catalog.parts.is_empty() {
        return Err(Error::Data("no parts in the catalog; nothing to correlate".into()));
    }
    let images = relabel(images, &cfg.catalog, catalog);
    let crops = build_crops(&images, &catalog.object_classes(), &cfg.crop_spec(net))?;
    let class_names = &net.spec().class_names;
    let mut study = DiscrimStudy {
        filters: Vec::new(),
        parts: Vec::new(),
        emergence: Vec::new(),
        correlation: CorrelationReport { correlations: Vec::new(), small_sample: false },
        warnings: Vec::new(),
    };
    let (mut ap_map, mut size_map, mut delta_map) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for class in catalog.object_classes() {
        let class_index = class_names
            .iter()
            .position(|c| *c == class)
            .ok_or_else(|| Error::Config(format!("network has no output for object class `{class}`")))?;
        let members: Vec<&Crop> = crops.iter().filter(|c| c.class == class).collect();
        let inputs: Vec<Tensor> = members.iter().map(|c| c.input.clone()).collect();
        for layer in layers {
            let scores = layer_discrim(net, &inputs, class_index, layer, mode)?;
            study.filters.push((class.clone(), layer.clone(), scores));
        }
        let mut part_scores = Vec::new();
        for entry in catalog.parts.iter().filter(|e| e.object == class) {
            let with_masks: Vec<(Tensor, Option<PixelMask>)> =
                members.iter().map(|c| (c.input.clone(), c.part_mask(&entry.part))).collect();
            let d = part_discrim(net, &with_masks, class_index, &entry.part, mode)?;
            let key = (entry.object.clone(), entry.part.clone());
            match aps.get(&key) {
                Some(&ap) => {
                    study.emergence.push(EmergenceRow {
                        object: entry.object.clone(),
                        part: entry.part.clone(),
                        normalized_size: entry.normalized_size,
                        ap,
                        delta: d.delta,
                    });
                    ap_map.insert(key.clone(), ap);
                    size_map.insert(key.clone(), entry.normalized_size);
                    delta_map.insert(key, d.delta);
                }
                None => study.warnings.push(format!("{}: no AP in the pipeline results", entry.key())),
            }
            part_scores.push(d);
        }
        assign_sigma(&mut part_scores);
        study.parts.push((class, part_scores));
    }
    study.correlation = correlate_emergence(&ap_map, &size_map, &delta_map)?;
    if study.correlation.small_sample {
        study.warnings.push("only two parts: every correlation is +-1".into());
    }
    Ok(study)
}
