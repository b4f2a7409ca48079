//! Tables and files produced from pipeline results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PartCatalog;
use crate::error::{Error, Result};
use crate::ga::GenerationStats;
use crate::pipeline::{LayerSummary, PartResult, PipelineOutput};

pub const PIPELINE_FILE: &str = "pipeline.json";

/// The machine-readable result of a pipeline run, read back by later
/// commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub layers: Vec<String>,
    pub catalog: PartCatalog,
    pub rows: Vec<PartResult>,
    pub summaries: Vec<LayerSummary>,
    pub warnings: Vec<String>,
}

impl PipelineReport {
    pub fn from_output(out: &PipelineOutput) -> Self {
        PipelineReport {
            layers: out.layers.clone(),
            catalog: out.catalog.clone(),
            rows: out.rows(),
            summaries: out.summaries.clone(),
            warnings: out.warnings.clone(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PIPELINE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Data(format!("missing pipeline results {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Highest GA combination AP per part over all analysed layers.
    pub fn best_ap_per_part(&self) -> BTreeMap<(String, String), f64> {
        let mut best: BTreeMap<(String, String), f64> = BTreeMap::new();
        for r in &self.rows {
            let e = best.entry((r.object.clone(), r.part.clone())).or_insert(f64::NEG_INFINITY);
            *e = e.max(r.ga.ap);
        }
        best
    }
}

/// File-name stem for one (layer, part) pair.
pub fn row_stem(r: &PartResult) -> String {
    format!("{}_{}_{}", r.layer, r.object, r.part)
}

/// One line per (layer, part, method) with AP, max recall and filter count.
pub fn parts_csv(rows: &[PartResult]) -> String {
    let mut s = String::from("layer,object,part,method,ap,max_recall,n_filters\n");
    for r in rows {
        let best = &r.filters[r.best_filter];
        let lines = [
            ("best", r.best_ap, best.max_recall, 1),
            ("ga", r.ga.ap, r.ga.max_recall, r.ga.filters.len()),
            ("top_filters", r.top_filters.ap, r.top_filters.max_recall, r.top_filters.filters.len()),
        ];
        for (method, ap, recall, n) in lines {
            let _ = writeln!(s, "{},{},{},{method},{ap},{recall},{n}", r.layer, r.object, r.part);
        }
    }
    s
}

pub fn filters_csv(rows: &[PartResult]) -> String {
    let mut s = String::from("layer,object,part,filter,ap,max_recall,n_detections,regressed\n");
    for r in rows {
        for f in &r.filters {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.layer, r.object, r.part, f.filter, f.ap, f.max_recall, f.n_detections, f.regressed
            );
        }
    }
    s
}

pub fn summary_csv(summaries: &[LayerSummary]) -> String {
    let mut s = String::from("layer,n_parts,map_best,map_ga,map_top_filters,mean_ga_filters,emerged,covered\n");
    for l in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            l.layer, l.n_parts, l.map_best, l.map_ga, l.map_top_filters, l.mean_ga_filters, l.emerged, l.covered
        );
    }
    s
}

pub fn ga_log_csv(history: &[GenerationStats]) -> String {
    let mut s = String::from("generation,best_fitness,mean_fitness,bits_set_of_best\n");
    for g in history {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            g.generation, g.best_fitness, g.mean_fitness, g.bits_set_of_best
        );
    }
    s
}

/// Best chromosome as a bit string plus the selected filter indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChromosomeRecord {
    pub layer: String,
    pub object: String,
    pub part: String,
    pub n_filters: usize,
    pub bits: String,
    pub filters: Vec<usize>,
    pub fitness: f64,
}

impl ChromosomeRecord {
    pub fn new(r: &PartResult) -> Self {
        let n = r.filters.len();
        let bits = (0..n).map(|j| if r.ga.filters.contains(&j) { '1' } else { '0' }).collect();
        ChromosomeRecord {
            layer: r.layer.clone(),
            object: r.object.clone(),
            part: r.part.clone(),
            n_filters: n,
            bits,
            filters: r.ga.filters.clone(),
            fitness: r.ga.ap,
        }
    }
}

/// Filters that appear in the GA combinations of more than one part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedFilter {
    pub layer: String,
    pub filter: usize,
    pub parts: Vec<String>,
}

pub fn filter_sharing(rows: &[PartResult]) -> Vec<SharedFilter> {
    let mut users: BTreeMap<(String, usize), Vec<String>> = BTreeMap::new();
    for r in rows {
        for &j in &r.ga.filters {
            users.entry((r.layer.clone(), j)).or_default().push(r.key().to_string());
        }
    }
    users
        .into_iter()
        .filter(|(_, parts)| parts.len() > 1)
        .map(|((layer, filter), parts)| SharedFilter { layer, filter, parts })
        .collect()
}

pub fn sharing_csv(shared: &[SharedFilter]) -> String {
    let mut s = String::from("layer,filter,n_parts,parts\n");
    for f in shared {
        let _ = writeln!(s, "{},{},{},{}", f.layer, f.filter, f.parts.len(), f.parts.join(";"));
    }
    s
}

/// Plain-text results table: one row per part, and for each layer the best
/// single-filter AP, the GA combination AP and its size, with a mean row.
pub fn results_table(report: &PipelineReport) -> String {
    let mut parts: Vec<(String, String)> = Vec::new();
    for r in &report.rows {
        let k = (r.object.clone(), r.part.clone());
        if !parts.contains(&k) {
            parts.push(k);
        }
    }
    let mut s = String::new();
    let _ = write!(s, "{:<24}", "part");
    for l in &report.layers {
        let _ = write!(s, " | {:>8} {:>6} {:>4}", format!("{l} best"), "GA", "n");
    }
    s.push('\n');
    for (object, part) in &parts {
        let _ = write!(s, "{:<24}", format!("{object}/{part}"));
        for l in &report.layers {
            match report.rows.iter().find(|r| &r.layer == l && &r.object == object && &r.part == part) {
                Some(r) => {
                    let _ = write!(s, " | {:>8.1} {:>6.1} {:>4}", 100.0 * r.best_ap, 100.0 * r.ga.ap, r.ga.filters.len());
                }
                None => {
                    let _ = write!(s, " | {:>8} {:>6} {:>4}", "-", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    let _ = write!(s, "{:<24}", format!("mean ({} parts)", parts.len()));
    for l in &report.layers {
        match report.summaries.iter().find(|x| &x.layer == l) {
            Some(x) => {
                let _ = write!(s, " | {:>8.1} {:>6.1} {:>4.1}", 100.0 * x.map_best, 100.0 * x.map_ga, x.mean_ga_filters);
            }
            None => {
                let _ = write!(s, " | {:>8} {:>6} {:>4}", "-", "-", "-");
            }
        }
    }
    s.push('\n');
    for x in &report.summaries {
        let _ = writeln!(
            s,
            "{}: {} of {} parts emerge (AP), {} covered (recall)",
            x.layer, x.emerged, x.n_parts, x.covered
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Combination, FilterScore};

    fn row(layer: &str, part: &str, ga: Vec<usize>, ap: f64) -> PartResult {
        PartResult {
            layer: layer.into(),
            object: "car".into(),
            part: part.into(),
            n_gt: 3,
            filters: (0..4)
                .map(|j| FilterScore { filter: j, ap: j as f64 / 10.0, max_recall: 0.5, n_detections: 2, regressed: true })
                .collect(),
            best_filter: 3,
            best_ap: 0.3,
            ga: Combination { filters: ga, ap, max_recall: 0.75 },
            top_filters: Combination { filters: vec![3], ap: 0.3, max_recall: 0.5 },
            emerged: ap > 0.3,
            covered: true,
        }
    }

    #[test]
    fn parts_csv_has_three_methods_per_row() {
        let csv = parts_csv(&[row("conv1", "wheel", vec![1, 3], 0.5)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "conv1,car,wheel,best,0.3,0.5,1");
        assert_eq!(lines[2], "conv1,car,wheel,ga,0.5,0.75,2");
    }

    #[test]
    fn chromosome_bits_match_filters() {
        let c = ChromosomeRecord::new(&row("conv1", "wheel", vec![1, 3], 0.5));
        assert_eq!(c.bits, "0101");
        assert_eq!(c.filters, vec![1, 3]);
    }

    #[test]
    fn sharing_lists_filters_used_twice() {
        let rows = [row("conv1", "wheel", vec![1, 3], 0.5), row("conv1", "door", vec![3], 0.4), row("conv2", "door", vec![1], 0.4)];
        let shared = filter_sharing(&rows);
        assert_eq!(shared.len(), 1);
        assert_eq!(shared[0].filter, 3);
        assert_eq!(shared[0].parts, vec!["car/wheel".to_string(), "car/door".to_string()]);
    }

    #[test]
    fn best_ap_takes_max_over_layers() {
        let report = PipelineReport {
            layers: vec!["conv1".into(), "conv2".into()],
            catalog: PartCatalog::default(),
            rows: vec![row("conv1", "wheel", vec![1], 0.2), row("conv2", "wheel", vec![1], 0.6)],
            summaries: vec![],
            warnings: vec![],
        };
        assert_eq!(report.best_ap_per_part()[&("car".to_string(), "wheel".to_string())], 0.6);
        let table = results_table(&report);
        assert!(table.contains("car/wheel"));
        assert!(table.contains("mean (1 parts)"));
    }
}
