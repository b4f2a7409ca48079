//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use filterscope::bbox::BBox;
use filterscope::corpus::{generate_synthetic, SynthConfig};
use filterscope::discrim::{part_discrim, ScoreMode};
use filterscope::eval::match_and_ap;
use filterscope::ga::{initial_population, run_ga, GaConfig, ScoredBox};
use filterscope::geometry::receptive_field;
use filterscope::mask::PixelMask;
use filterscope::nn::Ablation;
use filterscope::pipeline::{build_crops, run_discrim, run_pipeline, PipelineConfig};
use filterscope::planted::{matched_filter_network, PlantedOptions};
use filterscope::regression::{features, fit, FitOptions, TrainingPair, FEATURE_DIM};
use filterscope::report::PipelineReport;
use filterscope::stimulus::Activation;
use filterscope::tensor::Tensor;
use rand::Rng;

use common::*;

const AP_TOL: f64 = 1e-9;
const WEIGHT_TOL: f64 = 1e-6;
const MIN_MEAN_IOU: f64 = 0.99;
const GA_RATIO: f64 = 0.95;
const INIT_MEAN: f64 = 5.12;
const INIT_TOL: f64 = 0.5;
const EMERGE_AP: f64 = 0.30;
const EMERGE_RECALL: f64 = 0.50;
const CONTROL_AP: f64 = 0.10;
const DELTA_WIN_RATE: f64 = 0.95;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// 1: analytic receptive fields equal the support found by perturbation.
fn receptive_fields() -> Outcome {
    let mut rng = rng(101);
    let mut mismatches = 0;
    let mut cells = 0;
    for _ in 0..50 {
        let net = random_rf_net(&mut rng);
        let layer = net.spec().layers[rng.random_range(0..net.spec().layers.len())].name.clone();
        let support = perturbation_support(&net, &layer);
        let input = net.input_shape();
        for (r, row) in support.iter().enumerate() {
            for (c, s) in row.iter().enumerate() {
                cells += 1;
                let rf = receptive_field(net.spec(), &layer, c, r).unwrap();
                let b = rf.clipped;
                let expected = (b.w > 0.0).then(|| {
                    let (x0, y0) = (b.x as usize, b.y as usize);
                    let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
                    ((x0, y0, x1, y1), (b.w * b.h) as usize)
                });
                let inside_field = b.w == 0.0
                    || (b.x as i64 >= rf.x0
                        && b.y as i64 >= rf.y0
                        && (b.x + b.w) as i64 <= rf.x0 + rf.width as i64
                        && (b.y + b.h) as i64 <= rf.y0 + rf.height as i64
                        && b.x + b.w <= input.width as f64
                        && b.y + b.h <= input.height as f64);
                if *s != expected || !inside_field {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{cells} cells over 50 nets, {mismatches} mismatches"))
}

/// 2: AP equals the prefix-enumeration oracle.
fn ap_oracle() -> Outcome {
    let mut rng = rng(202);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (dets, gts) = random_ap_instance(&mut rng);
        let boxes: Vec<ScoredBox> = dets
            .iter()
            .map(|&(image_id, bbox, score)| ScoredBox { image_id, bbox, score })
            .collect();
        let ap = match_and_ap(&boxes, &gts, 0.4).unwrap().ap;
        worst = worst.max((ap - brute_force_ap(&dets, &gts, 0.4)).abs());
    }
    outcome(worst <= AP_TOL, format!("200 instances, max |diff| = {worst:.2e} (tol {AP_TOL:.0e})"))
}

/// 3: noiseless linear pairs give back the generating weights and boxes.
fn regression_recovery() -> Outcome {
    let mut rng = rng(303);
    let (w, h) = (64usize, 64usize);
    let mut truth = [[0.0; FEATURE_DIM]; 4];
    for (t, row) in truth.iter_mut().enumerate() {
        for v in &mut row[2..11] {
            *v = rng.random_range(-1.5..1.5);
        }
        row[11] = if t < 2 { rng.random_range(-3.0..3.0) } else { rng.random_range(10.0..16.0) };
    }
    let mut pairs = Vec::new();
    let mut sites = Vec::new();
    for _ in 0..300 {
        let neighborhood: [f32; 9] = std::array::from_fn(|_| rng.random_range(0.0f32..1.0));
        let act = Activation { c: 0, r: 0, value: neighborhood[4] + 0.1, neighborhood };
        let center = (rng.random_range(16.0..48.0), rng.random_range(16.0..48.0));
        let f = features(&act, center);
        let t: [f64; 4] = std::array::from_fn(|k| truth[k].iter().zip(&f).map(|(a, b)| a * b).sum());
        pairs.push(TrainingPair { features: f, targets: t, weight: act.value as f64 });
        sites.push((act, center, t));
    }
    let model = fit(&pairs, &FitOptions::default()).unwrap();
    let mut max_err = 0.0f64;
    for t in 0..4 {
        for j in 0..FEATURE_DIM {
            max_err = max_err.max((model.weights[t][j] - truth[t][j]).abs());
        }
    }
    let mut iou_sum = 0.0;
    for (act, center, t) in &sites {
        let field = filterscope::geometry::ReceptiveField {
            x0: 0,
            y0: 0,
            width: 1,
            height: 1,
            center: *center,
            clamped_center: *center,
            clipped: BBox::new(0.0, 0.0, 1.0, 1.0),
        };
        let got = model.apply(act, &field, w, h);
        let want = BBox::from_center(center.0 + t[0], center.1 + t[1], t[2], t[3]).clip(w, h);
        iou_sum += filterscope::bbox::iou(&got, &want).unwrap();
    }
    let mean_iou = iou_sum / sites.len() as f64;
    outcome(
        max_err < WEIGHT_TOL && mean_iou >= MIN_MEAN_IOU,
        format!("max weight error {max_err:.2e} (tol {WEIGHT_TOL:.0e}), mean IoU {mean_iou:.6} (min {MIN_MEAN_IOU})"),
    )
}

/// 4: the GA gets within 5% of the exhaustive optimum.
fn ga_vs_exhaustive() -> Outcome {
    let mut rng = rng(404);
    let mut good = 0;
    let mut monotone = true;
    for seed in 0..20u64 {
        let fitness = random_ga_instance(&mut rng, 10);
        let optimum = exhaustive_best(&fitness);
        let ga = run_ga(&GaConfig { seed, ..GaConfig::default() }, 10, &fitness).unwrap();
        let best = fitness.report(&ga.best.bits).unwrap().ap;
        if best >= GA_RATIO * optimum {
            good += 1;
        }
        monotone &= ga.history.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness);
    }
    outcome(good >= 19 && monotone, format!("{good}/20 within {GA_RATIO} of optimum, histories monotone: {monotone}"))
}

/// 5: mean bits set in the initial population.
fn ga_initialization() -> Outcome {
    let mut means = Vec::new();
    for seed in 0..10u64 {
        let cfg = GaConfig { seed, ..GaConfig::default() };
        let mut r = rng(seed);
        let pop = initial_population(256, &cfg, &mut r);
        let bits: usize = pop.iter().map(|c| c.iter().filter(|&&b| b).count()).sum();
        means.push(bits as f64 / pop.len() as f64);
    }
    let pass = means.iter().all(|m| (m - INIT_MEAN).abs() <= INIT_TOL);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(pass, format!("per-seed means in [{lo:.3}, {hi:.3}], target {INIT_MEAN} +- {INIT_TOL}"))
}

/// 6: ablation flags equal explicitly modified networks and inputs.
fn ablation_equivalence() -> Outcome {
    let mut rng = rng(606);
    let mut failures = 0;
    for _ in 0..100 {
        let net = random_full_net(&mut rng);
        let input = random_tensor(&mut rng, net.input_shape());
        let layer = if rng.random_bool(0.5) { "conv1" } else { "conv2" };
        let filter = rng.random_range(0..net.filter_count(layer).unwrap());
        let a = net.forward(&input, &Ablation::zero_filter(layer, filter), &[]).unwrap();
        let b = net
            .with_filter_zeroed(layer, filter)
            .unwrap()
            .forward(&input, &Ablation::none(), &[])
            .unwrap();
        let s = input.shape();
        let mask = PixelMask::from_fn(s.width, s.height, |_, _| rng.random_bool(0.3));
        let c = net.forward(&input, &Ablation::blackout(mask.clone()), &[]).unwrap();
        let mut dark = input.clone();
        for ch in 0..s.channels {
            for y in 0..s.height {
                for x in 0..s.width {
                    if mask.get(x, y) {
                        dark.set(ch, y, x, 0.0);
                    }
                }
            }
        }
        let d = net.forward(&dark, &Ablation::none(), &[]).unwrap();
        let same = |p: &[f32], q: &[f32]| p.iter().zip(q).all(|(x, y)| x.to_bits() == y.to_bits());
        if !(same(&a.scores, &b.scores) && same(&a.logits, &b.logits) && same(&c.scores, &d.scores) && same(&c.logits, &d.logits)) {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("100 triples, {failures} mismatches"))
}

/// 7: planted filter emerges for its part, a non-matching filter does not.
fn synthetic_emergence() -> Outcome {
    let layout = SynthConfig::three_class();
    let images = generate_synthetic(7, 500, &layout).unwrap();
    let planted = matched_filter_network(&layout, &PlantedOptions::default()).unwrap();
    let cfg = PipelineConfig { layers: vec!["conv1".into()], ..PipelineConfig::default() };
    let out = run_pipeline(&images, &planted.network, &cfg).unwrap();
    let (object, part, control_part) = ("bird", "tail", "beak");
    let filter = planted.filter_for(object, part).unwrap();
    let control = planted.filter_for(object, control_part).unwrap();
    let row = out
        .analyses
        .iter()
        .map(|a| &a.result)
        .find(|r| r.object == object && r.part == part)
        .unwrap();
    let f = &row.filters[filter];
    let c = &row.filters[control];
    let rival = row
        .filters
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != filter)
        .map(|(_, s)| s.ap)
        .fold(0.0, f64::max);
    let selected = row.ga.filters.contains(&filter);
    let pass = f.ap > EMERGE_AP && f.max_recall > EMERGE_RECALL && selected && c.ap < CONTROL_AP;
    let others: Vec<String> = out
        .analyses
        .iter()
        .map(|a| &a.result)
        .filter_map(|r| planted.filter_for(&r.object, &r.part).map(|j| format!("{}/{}={:.2}", r.object, r.part, r.filters[j].ap)))
        .collect();
    outcome(
        pass,
        format!(
            "{object}/{part}: filter {filter} AP {:.3} recall {:.3}, GA {:?}; best other filter AP {:.3}; control filter {control} AP {:.3}; all planted [{}]",
            f.ap,
            f.max_recall,
            row.ga.filters,
            rival,
            c.ap,
            others.join(" ")
        ),
    )
}

/// 8: blacking out a discriminative part hurts more than a decoy, and the
/// three correlations are positive on the monotone corpus.
fn part_discriminativeness() -> Outcome {
    let layout = SynthConfig::three_class();
    let planted = matched_filter_network(&layout, &PlantedOptions::default()).unwrap();
    let net = &planted.network;
    let cfg = PipelineConfig::default();
    let car = net.spec().class_names.iter().position(|c| c == "car").unwrap();
    let mut wins = 0;
    let runs = 20;
    for seed in 0..runs {
        let images = generate_synthetic(1000 + seed, 90, &layout).unwrap();
        let crops = build_crops(&images, &["car".to_string()], &cfg.crop_spec(net)).unwrap();
        let delta = |part: &str| {
            let inputs: Vec<(Tensor, Option<PixelMask>)> = crops.iter().map(|c| (c.input.clone(), c.part_mask(part))).collect();
            part_discrim(net, &inputs, car, part, ScoreMode::Softmax).unwrap().delta
        };
        if delta("wheel") > delta("plate") {
            wins += 1;
        }
    }
    let rate = wins as f64 / runs as f64;

    let mono = SynthConfig::monotone();
    let mono_net = matched_filter_network(&mono, &PlantedOptions::default()).unwrap();
    let images = generate_synthetic(8, 300, &mono).unwrap();
    let pcfg = PipelineConfig { layers: vec!["conv1".into()], ..PipelineConfig::default() };
    let out = run_pipeline(&images, &mono_net.network, &pcfg).unwrap();
    let report = PipelineReport::from_output(&out);
    let study = run_discrim(
        &images,
        &mono_net.network,
        &pcfg,
        &report.catalog,
        &report.best_ap_per_part(),
        &[],
        ScoreMode::Softmax,
    )
    .unwrap();
    let r: Vec<f64> = study.correlation.correlations.iter().map(|c| c.ppmcc).collect();
    let positive = r.len() == 3 && r.iter().all(|&v| v > 0.0);
    outcome(
        rate >= DELTA_WIN_RATE && positive,
        format!(
            "wheel beats plate in {wins}/{runs} runs (need {DELTA_WIN_RATE}); PPMCC ap~size {:.3}, delta~size {:.3}, delta~ap {:.3}",
            r[0], r[1], r[2]
        ),
    )
}

fn run_cli(args: &[&str], workers: &str, cwd: &Path) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_filterscope"))
        .args(args)
        .env("FS_WORKERS", workers)
        .current_dir(cwd)
        .status()
        .unwrap();
    status.success()
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// 9: full runs are byte-identical whatever the worker count.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let mut ok = run_cli(&["gen-synth", "--out", "syn", "--images", "200", "--seed", "3"], "2", cwd);
    let common = ["--corpus", "../syn/corpus", "--network", "../syn/network.json", "--weights", "../syn/weights.fsw", "--seed", "3"];
    // Each worker count runs in its own directory with the same relative
    // paths, so the two manifests must agree too.
    for workers in ["1", "4"] {
        let wd = cwd.join(format!("w{workers}"));
        std::fs::create_dir(&wd).unwrap();
        let steps: [&[&str]; 3] = [
            &["pipeline", "--out", "run"],
            &["discrim", "--pipeline-dir", "run", "--out", "run/discrim"],
            &["export-topk", "--k", "5", "--out", "run/topk"],
        ];
        for step in steps {
            let mut args = step.to_vec();
            args.extend(common);
            ok &= run_cli(&args, workers, &wd);
        }
    }
    if !ok {
        return outcome(false, "a command failed".into());
    }
    let a = collect_files(&cwd.join("w1/run"));
    let b = collect_files(&cwd.join("w4/run"));
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let pass = !a.is_empty() && a.len() == b.len() && differing.is_empty();
    outcome(pass, format!("{} files compared, {} differ {:?}", a.len(), differing.len(), &differing[..differing.len().min(3)]))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("receptive-field oracle", receptive_fields, Duration::from_secs(30)),
        ("AP oracle", ap_oracle, Duration::from_secs(10)),
        ("regression recovery", regression_recovery, Duration::from_secs(5)),
        ("GA vs exhaustive", ga_vs_exhaustive, Duration::from_secs(120)),
        ("GA initialization statistic", ga_initialization, Duration::from_secs(5)),
        ("ablation equivalence", ablation_equivalence, Duration::from_secs(30)),
        ("end-to-end synthetic emergence", synthetic_emergence, Duration::from_secs(300)),
        ("part-discriminativeness sanity", part_discriminativeness, Duration::from_secs(300)),
        ("determinism across worker counts", determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let elapsed = t.elapsed();
        let pass = o.pass && elapsed < *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} [{name}] {} ({:.1}s of {}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
