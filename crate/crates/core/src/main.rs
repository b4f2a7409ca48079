use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use filterscope::config::RunConfig;
use filterscope::corpus::{encode_ppm, generate_synthetic, load_corpus, save_corpus, filter_catalog, AnnotatedImage, PartKey};
use filterscope::discrim::write_discrim_csv;
use filterscope::eval::{write_pr_csv, write_recall_fp_csv};
use filterscope::manifest::{OutputDir, RunManifest};
use filterscope::nn::{load_weights, save_weights, Network, NetworkSpec};
use filterscope::pipeline::{analyze_part, prepare, run_discrim, run_pipeline, score_filters, PartAnalysis, Prepared};
use filterscope::planted::matched_filter_network;
use filterscope::report::{
    filter_sharing, filters_csv, ga_log_csv, parts_csv, results_table, row_stem, sharing_csv, summary_csv,
    ChromosomeRecord, PipelineReport, PIPELINE_FILE,
};
use filterscope::topk::{export_topk, index_csv};
use filterscope::{Error, Result};

/// Test whether CNN filters act as semantic part detectors.
#[derive(Parser)]
#[command(name = "filterscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pipeline.ga.generations=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; FS_WORKERS takes precedence. Never changes outputs.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and a matching planted network.
    GenSynth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "three_class|monotone")]
        preset: Option<String>,
        #[arg(long)]
        images: Option<usize>,
    },
    /// Score every filter and filter combination for every part and layer.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
    /// Run the combination search for one part of one layer.
    Ga {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        layer: Option<String>,
        /// `object/part`.
        #[arg(long)]
        part: Option<String>,
    },
    /// Combine the individually best filters of every part.
    Topfilters {
        #[command(flatten)]
        common: Common,
        /// Filters per combination; 0 uses the GA sizes of a pipeline run.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        pipeline_dir: Option<PathBuf>,
    },
    /// Filter and part discriminativeness, correlated with part APs.
    Discrim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pipeline_dir: Option<PathBuf>,
        #[arg(long, value_name = "softmax|logits")]
        mode: Option<String>,
    },
    /// Write top-k activation sheets for annotation.
    ExportTopk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        filters: Option<Vec<usize>>,
    },
    /// Render tables from a pipeline run.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pipeline_dir: Option<PathBuf>,
    },
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn path_str(p: &Path) -> String {
    json_str(&p.to_string_lossy())
}

/// Command-line flags become overrides, applied after `--set`.
fn build_config(common: &Common, mut extra: Vec<String>) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut overrides = common.overrides.clone();
    for (key, v) in [
        ("corpus", &common.corpus),
        ("network", &common.network),
        ("weights", &common.weights),
        ("out", &common.out),
    ] {
        if let Some(p) = v {
            overrides.push(format!("{key}={}", path_str(p)));
        }
    }
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.append(&mut extra);
    let cfg = base.with_overrides(&overrides)?.seeded();
    cfg.validate()?;
    Ok(cfg)
}

fn workers(flag: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var("FS_WORKERS") {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("FS_WORKERS must be a positive integer, got `{v}`"))),
        };
    }
    match flag {
        Some(0) => Err(Error::Config("--workers must be positive".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_network(cfg: &RunConfig) -> Result<Network> {
    let spec = NetworkSpec::load(&cfg.network)?;
    load_weights(&spec, &cfg.weights)
}

fn load_images(cfg: &RunConfig) -> Result<Vec<AnnotatedImage>> {
    if !cfg.corpus.is_dir() {
        return Err(Error::Data(format!("corpus directory {} does not exist", cfg.corpus.display())));
    }
    load_corpus(&cfg.corpus)
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn write_analysis(out: &mut OutputDir, a: &PartAnalysis) -> Result<()> {
    let stem = row_stem(&a.result);
    let mut pr = Vec::new();
    write_pr_csv(&mut pr, &a.ga_report).expect("in-memory write");
    out.write(&format!("curves/{stem}_pr.csv"), pr)?;
    let mut rf = Vec::new();
    write_recall_fp_csv(&mut rf, &a.ga_report).expect("in-memory write");
    out.write(&format!("curves/{stem}_recall_fp.csv"), rf)?;
    out.write(&format!("ga/{stem}_log.csv"), ga_log_csv(&a.ga_history))?;
    out.write_json(&format!("ga/{stem}_best.json"), &ChromosomeRecord::new(&a.result))
}

fn cmd_gen_synth(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("gen-synth", cfg))?;
    let layout = cfg.synth.layout();
    let images = generate_synthetic(cfg.seed, cfg.synth.images, &layout)?;
    let planted = matched_filter_network(&layout, &cfg.synth.planted)?;
    let corpus_dir = out.root().join("corpus");
    save_corpus(&corpus_dir, &images)?;
    for i in 0..images.len() {
        out.path(&format!("corpus/{i:05}.ppm"))?;
        out.path(&format!("corpus/{i:05}.json"))?;
    }
    out.write("network.json", planted.network.spec().to_json())?;
    let weights = out.path("weights.fsw")?;
    save_weights(&planted.network, &weights)?;
    out.write_json("planted.json", &planted.filters)?;
    out.write_json("layout.json", &layout)?;
    out.write_json("catalog.json", &filter_catalog(&images, &cfg.pipeline.catalog))?;
    out.finish()?;
    Ok(())
}

fn cmd_pipeline(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("pipeline", cfg))?;
    let images = load_images(cfg)?;
    let net = load_network(cfg)?;
    let result = run_pipeline(&images, &net, &cfg.pipeline)?;
    warn(&result.warnings);
    let report = PipelineReport::from_output(&result);
    out.write_json("catalog.json", &report.catalog)?;
    out.write_json(PIPELINE_FILE, &report)?;
    out.write("summary.csv", summary_csv(&report.summaries))?;
    out.write("parts.csv", parts_csv(&report.rows))?;
    out.write("filters.csv", filters_csv(&report.rows))?;
    out.write("sharing.csv", sharing_csv(&filter_sharing(&report.rows)))?;
    out.write("table.txt", results_table(&report))?;
    let regressors: Vec<_> = result.analyses.iter().flat_map(|a| a.regressors.iter().cloned()).collect();
    out.write_json("regressors.json", &regressors)?;
    for a in &result.analyses {
        write_analysis(&mut out, a)?;
    }
    out.finish()?;
    Ok(())
}

/// Row index of `key` in `layer`, the same index `pipeline` uses to seed the GA.
fn row_index(prep: &Prepared, layer: usize, key: &PartKey) -> Option<u64> {
    let p = prep.catalog.parts.iter().position(|e| e.key() == *key)?;
    Some((layer * prep.catalog.parts.len() + p) as u64)
}

fn cmd_ga(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("ga", cfg))?;
    let (object, part) = cfg
        .select
        .part
        .split_once('/')
        .ok_or_else(|| Error::Config(format!("select.part must be object/part, got `{}`", cfg.select.part)))?;
    let key = PartKey::new(object, part);
    let images = load_images(cfg)?;
    let net = load_network(cfg)?;
    let mut pcfg = cfg.pipeline.clone();
    if !cfg.select.layer.is_empty() {
        pcfg.layers = vec![cfg.select.layer.clone()];
    }
    let prep = prepare(&images, &net, &pcfg)?;
    warn(&prep.warnings);
    let layer = prep
        .layers
        .first()
        .ok_or_else(|| Error::Config("network has no conv layer".into()))?;
    let li = prep.layers.iter().position(|l| l == layer).unwrap_or(0);
    let row = row_index(&prep, li, &key)
        .ok_or_else(|| Error::Data(format!("part {key} is not in the catalog")))?;
    // Seeded as in a pipeline run restricted to the same layers.
    let analysis = analyze_part(&prep.maxima[li], &prep.crops, &key, &pcfg, pcfg.ga.seed.wrapping_add(row))?
        .ok_or_else(|| Error::Data(format!("{key}: no ground truth survives cropping")))?;
    write_analysis(&mut out, &analysis)?;
    out.write_json("result.json", &analysis.result)?;
    out.finish()?;
    Ok(())
}

fn cmd_topfilters(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("topfilters", cfg))?;
    let sizes = if cfg.select.n == 0 {
        Some(PipelineReport::load(&cfg.pipeline_dir)?)
    } else {
        None
    };
    let images = load_images(cfg)?;
    let net = load_network(cfg)?;
    let prep = prepare(&images, &net, &cfg.pipeline)?;
    warn(&prep.warnings);
    let mut csv = String::from("layer,object,part,n,filters,ap,max_recall\n");
    for lm in &prep.maxima {
        for entry in &prep.catalog.parts {
            let key = entry.key();
            let Some(ps) = score_filters(lm, &prep.crops, &key, &cfg.pipeline)? else {
                continue;
            };
            let n = match &sizes {
                None => cfg.select.n,
                Some(r) => r
                    .rows
                    .iter()
                    .find(|r| r.layer == lm.layer && r.key() == key)
                    .map(|r| r.ga.filters.len().max(1))
                    .ok_or_else(|| Error::Data(format!("{key} in {} missing from pipeline results", lm.layer)))?,
            };
            let c = ps.top_filters(n)?;
            let ids: Vec<String> = c.filters.iter().map(|j| j.to_string()).collect();
            csv.push_str(&format!(
                "{},{},{},{n},{},{},{}\n",
                lm.layer,
                key.object,
                key.part,
                ids.join(";"),
                c.ap,
                c.max_recall
            ));
        }
    }
    out.write("topfilters.csv", csv)?;
    out.finish()?;
    Ok(())
}

fn cmd_discrim(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("discrim", cfg))?;
    let report = PipelineReport::load(&cfg.pipeline_dir)?;
    let images = load_images(cfg)?;
    let net = load_network(cfg)?;
    let layers = if cfg.discrim.layers.is_empty() {
        report.layers.clone()
    } else {
        cfg.discrim.layers.clone()
    };
    let study = run_discrim(
        &images,
        &net,
        &cfg.pipeline,
        &report.catalog,
        &report.best_ap_per_part(),
        &layers,
        cfg.discrim.mode,
    )?;
    warn(&study.warnings);
    for (class, layer, scores) in &study.filters {
        let mut buf = Vec::new();
        write_discrim_csv(&mut buf, scores).expect("in-memory write");
        out.write(&format!("discrim/filters_{class}_{layer}.csv"), buf)?;
    }
    for (class, scores) in &study.parts {
        let mut buf = Vec::new();
        write_discrim_csv(&mut buf, scores).expect("in-memory write");
        out.write(&format!("discrim/parts_{class}.csv"), buf)?;
    }
    let mut csv = String::from("object,part,normalized_size,ap,delta\n");
    for r in &study.emergence {
        csv.push_str(&format!("{},{},{},{},{}\n", r.object, r.part, r.normalized_size, r.ap, r.delta));
    }
    out.write("emergence.csv", csv)?;
    out.write_json("correlation.json", &study.correlation)?;
    out.finish()?;
    Ok(())
}

fn cmd_export_topk(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("export-topk", cfg))?;
    let images = load_images(cfg)?;
    let net = load_network(cfg)?;
    let mut pcfg = cfg.pipeline.clone();
    if !cfg.topk.layer.is_empty() {
        pcfg.layers = vec![cfg.topk.layer.clone()];
    }
    let layer = pcfg
        .analysis_layers(&net)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("network has no conv layer".into()))?;
    pcfg.layers = vec![layer.clone()];
    // every object class, whether or not its parts survive the catalog rules
    let classes: Vec<String> = images
        .iter()
        .flat_map(|i| i.objects.iter().map(|o| o.class.clone()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() {
        warn(&["corpus has no objects; nothing to export".to_string()]);
    }
    let crops = filterscope::pipeline::build_crops(&images, &classes, &pcfg.crop_spec(&net))?;
    let filters: Vec<usize> = if cfg.topk.filters.is_empty() {
        (0..net.filter_count(&layer)?).collect()
    } else {
        cfg.topk.filters.clone()
    };
    let (sheets, warnings) = export_topk(&net, &crops, &layer, &filters, cfg.topk.k)?;
    warn(&warnings);
    for s in &sheets {
        out.write(&format!("topk/{}_f{}_{}.ppm", s.layer, s.filter, s.class), encode_ppm(&s.sheet))?;
    }
    out.write("topk/index.csv", index_csv(&sheets))?;
    out.finish()?;
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let mut out = OutputDir::create(&cfg.out, RunManifest::new("report", cfg))?;
    let report = PipelineReport::load(&cfg.pipeline_dir)?;
    warn(&report.warnings);
    let table = results_table(&report);
    print!("{table}");
    out.write("table.txt", table)?;
    out.write("summary.csv", summary_csv(&report.summaries))?;
    out.write("parts.csv", parts_csv(&report.rows))?;
    out.write("sharing.csv", sharing_csv(&filter_sharing(&report.rows)))?;
    out.finish()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (common, extra, cmd): (&Common, Vec<String>, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::GenSynth { common, preset, images } => {
            let mut extra = Vec::new();
            if let Some(p) = preset {
                extra.push(format!("synth.preset={}", json_str(p)));
            }
            if let Some(n) = images {
                extra.push(format!("synth.images={n}"));
            }
            (common, extra, cmd_gen_synth)
        }
        Command::Pipeline { common } => (common, Vec::new(), cmd_pipeline),
        Command::Ga { common, layer, part } => {
            let mut extra = Vec::new();
            if let Some(l) = layer {
                extra.push(format!("select.layer={}", json_str(l)));
            }
            if let Some(p) = part {
                extra.push(format!("select.part={}", json_str(p)));
            }
            (common, extra, cmd_ga)
        }
        Command::Topfilters { common, n, pipeline_dir } => {
            let mut extra: Vec<String> = n.iter().map(|n| format!("select.n={n}")).collect();
            if let Some(d) = pipeline_dir {
                extra.push(format!("pipeline_dir={}", path_str(d)));
            }
            (common, extra, cmd_topfilters)
        }
        Command::Discrim { common, pipeline_dir, mode } => {
            let mut extra = Vec::new();
            if let Some(d) = pipeline_dir {
                extra.push(format!("pipeline_dir={}", path_str(d)));
            }
            if let Some(m) = mode {
                extra.push(format!("discrim.mode={}", json_str(m)));
            }
            (common, extra, cmd_discrim)
        }
        Command::ExportTopk { common, layer, k, filters } => {
            let mut extra = Vec::new();
            if let Some(l) = layer {
                extra.push(format!("topk.layer={}", json_str(l)));
            }
            if let Some(k) = k {
                extra.push(format!("topk.k={k}"));
            }
            if let Some(f) = filters {
                extra.push(format!("topk.filters={}", serde_json::to_string(f)?));
            }
            (common, extra, cmd_export_topk)
        }
        Command::Report { common, pipeline_dir } => {
            let extra = pipeline_dir.iter().map(|d| format!("pipeline_dir={}", path_str(d))).collect();
            (common, extra, cmd_report)
        }
    };
    let cfg = build_config(common, extra)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers(common.workers)?)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| cmd(&cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
