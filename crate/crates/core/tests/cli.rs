use std::path::Path;
use std::process::{Command, Output};

use filterscope::corpus::decode_ppm;
use filterscope::manifest::RunManifest;

const FAST_GA: [&str; 4] = ["--set", "pipeline.ga.population=10", "--set", "pipeline.ga.generations=3"];

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filterscope"))
        .args(args)
        .env("FS_WORKERS", "1")
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn with_inputs<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(["--corpus", "syn/corpus", "--network", "syn/network.json", "--weights", "syn/weights.fsw"]);
    v.extend(FAST_GA);
    v
}

fn synth(dir: &Path, images: &str) {
    let o = cli(&["gen-synth", "--images", images, "--seed", "2", "--out", "syn"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_writes_its_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "40");
    let o = cli(&with_inputs(&["pipeline", "--out", "run", "--set", "pipeline.layers=[\"conv1\"]"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    for f in ["manifest.json", "pipeline.json", "parts.csv", "summary.csv", "table.txt", "regressors.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let manifest = RunManifest::read(&run).unwrap();
    assert_eq!(manifest.command, "pipeline");
    assert!(manifest.outputs.iter().any(|p| p == "pipeline.json"));

    let o = cli(&with_inputs(&["report", "--pipeline-dir", "run", "--out", "rep"]), dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["pipeline", "--set", "no_such_key=1"],
        vec!["pipeline", "--set", "pipeline.ga.population=3"],
        vec!["export-topk", "--k", "0"],
    ] {
        let o = cli(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_filterscope"))
        .args(["pipeline"])
        .env("FS_WORKERS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3_after_writing_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["pipeline", "--corpus", "nowhere", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert!(dir.path().join("run/manifest.json").is_file());
}

#[test]
fn discrim_without_pipeline_results_fails() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "12");
    let o = cli(&with_inputs(&["discrim", "--pipeline-dir", "absent", "--out", "d"]), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_catalog_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "12");
    let o = cli(&with_inputs(&["pipeline", "--out", "run", "--set", "pipeline.catalog.min_count=1000"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning:"));
}

#[test]
fn top_one_export_has_a_single_panel() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "12");
    let o = cli(&with_inputs(&["export-topk", "--k", "1", "--filters", "0", "--out", "top"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sheet = std::fs::read(dir.path().join("top/topk/conv1_f0_car.ppm")).unwrap();
    let img = decode_ppm(&sheet).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
    let index = std::fs::read_to_string(dir.path().join("top/topk/index.csv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 3);
}
