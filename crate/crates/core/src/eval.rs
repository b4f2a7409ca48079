//! Matching detections to ground truth and PASCAL-style average precision.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bbox::PartBox;
use crate::error::{Error, Result};
use crate::stimulus::Scored;

pub const DEFAULT_MATCH_IOU: f64 = 0.4;
/// A part has emerged when its AP is strictly above this.
pub const EMERGENCE_AP: f64 = 0.30;
/// A part is covered when recall, ignoring false positives, is strictly above this.
pub const COVERAGE_RECALL: f64 = 0.50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    TruePositive { gt: usize },
    FalsePositive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Detection indices by descending score, ties in input order.
    pub ranking: Vec<usize>,
    /// Outcome of each detection, indexed like the input.
    pub outcomes: Vec<Outcome>,
    pub covered: Vec<bool>,
}

/// Greedy matching in score order: each detection takes the unmatched
/// ground truth of its image with the highest IoU, if that IoU reaches
/// `iou_threshold`.
pub fn match_detections<D: Scored>(dets: &[D], gts: &[PartBox], iou_threshold: f64) -> MatchResult {
    let mut by_image: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push(i);
    }
    let mut ranking: Vec<usize> = (0..dets.len()).collect();
    ranking.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()));
    let mut covered = vec![false; gts.len()];
    let mut outcomes = vec![Outcome::FalsePositive; dets.len()];
    for &i in &ranking {
        let d = &dets[i];
        let Some(cands) = by_image.get(&d.image_id()) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &g in cands {
            if covered[g] {
                continue;
            }
            let iou = gts[g].bbox.iou_unchecked(d.bbox());
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            covered[g] = true;
            outcomes[i] = Outcome::TruePositive { gt: g };
        }
    }
    MatchResult {
        ranking,
        outcomes,
        covered,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpPoint {
    pub false_positives: usize,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub max_recall: f64,
    pub n_detections: usize,
    pub n_gt: usize,
    pub n_tp: usize,
    /// One point per ranked detection.
    pub pr_curve: Vec<PrPoint>,
    pub recall_fp: Vec<FpPoint>,
}

/// All-points interpolated AP from true-positive flags in rank order.
pub fn average_precision(tp_in_rank_order: &[bool], n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut precision = Vec::with_capacity(tp_in_rank_order.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in tp_in_rank_order.iter().enumerate() {
        tp += is_tp as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // precision envelope: best precision at this rank or any later one
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum = tp_in_rank_order
        .iter()
        .zip(&precision)
        .filter(|(is_tp, _)| **is_tp)
        .fold(0.0, |acc, (_, p)| acc + p);
    Ok(sum / n_gt as f64)
}

pub fn match_and_ap<D: Scored>(dets: &[D], gts: &[PartBox], iou_threshold: f64) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let m = match_detections(dets, gts, iou_threshold);
    let flags: Vec<bool> = m
        .ranking
        .iter()
        .map(|&i| matches!(m.outcomes[i], Outcome::TruePositive { .. }))
        .collect();
    let ap = average_precision(&flags, gts.len())?;
    let n_gt = gts.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pr_curve = Vec::with_capacity(flags.len());
    let mut recall_fp = Vec::with_capacity(flags.len());
    for (rank, &is_tp) in flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let recall = tp as f64 / n_gt;
        pr_curve.push(PrPoint {
            recall,
            precision: tp as f64 / (rank + 1) as f64,
        });
        recall_fp.push(FpPoint {
            false_positives: fp,
            recall,
        });
    }
    Ok(EvalReport {
        ap,
        max_recall: tp as f64 / n_gt,
        n_detections: dets.len(),
        n_gt: gts.len(),
        n_tp: tp,
        pr_curve,
        recall_fp,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emergence {
    pub emerged_by_ap: bool,
    pub covered: bool,
}

pub fn emergence(report: &EvalReport) -> Emergence {
    Emergence {
        emerged_by_ap: report.ap > EMERGENCE_AP,
        covered: report.max_recall > COVERAGE_RECALL,
    }
}

pub fn write_pr_csv<W: Write>(mut out: W, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "recall,precision")?;
    for p in &report.pr_curve {
        writeln!(out, "{},{}", p.recall, p.precision)?;
    }
    Ok(())
}

pub fn write_recall_fp_csv<W: Write>(mut out: W, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "false_positives,recall")?;
    for p in &report.recall_fp {
        writeln!(out, "{},{}", p.false_positives, p.recall)?;
    }
    Ok(())
}
