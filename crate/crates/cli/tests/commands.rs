use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use eglass_cli::{config_hash, parse_config, RunManifest, MANIFEST_NAME};
use eglass_core::bench::{ExperimentConfig, Preset};
use eglass_core::exploration::SolutionRecord;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn preset_file(p: Preset) -> PathBuf {
    configs_dir().join(format!("{}.json", p.name()))
}

fn eglass(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_eglass"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

fn check_manifest(dir: &Path, command: &str) -> RunManifest {
    let m = manifest(dir);
    assert_eq!(m.command, command);
    assert!(m.hash_matches());
    assert_eq!(m.seeds, m.config.seeds());
    for f in &m.files {
        let bytes = fs::read(dir.join(&f.name)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes, "{}", f.name);
        assert_eq!(eglass_cli::manifest::sha256_hex(&bytes), f.sha256, "{}", f.name);
    }
    m
}

#[test]
fn shipped_configs_equal_presets() {
    for p in Preset::ALL {
        let text = fs::read_to_string(preset_file(p)).unwrap();
        assert_eq!(parse_config(&text).unwrap(), ExperimentConfig::preset(p), "{}", p.name());
    }
}

#[test]
fn invert_then_explore_sr() {
    let tmp = tempfile::tempdir().unwrap();
    let inv = tmp.path().join("inv");
    let (code, err) = eglass(&["invert", "--config", s(&preset_file(Preset::Sr)), "--out", s(&inv)]);
    assert_eq!(code, 0, "{err}");
    let m = check_manifest(&inv, "invert");
    let names: Vec<_> = m.files.iter().map(|f| f.name.as_str()).collect();
    assert!(names.contains(&"z0.json") && names.contains(&"trace.jsonl"));
    let z0: Vec<f64> = serde_json::from_str(&fs::read_to_string(inv.join("z0.json")).unwrap()).unwrap();
    assert_eq!(z0.len(), 16);
    assert!(fs::read_to_string(inv.join("trace.jsonl")).unwrap().lines().count() > 1);

    let exp = tmp.path().join("exp");
    let (code, err) = eglass(&[
        "explore",
        "--config",
        s(&preset_file(Preset::Sr)),
        "--z0",
        s(&inv.join("z0.json")),
        "--n",
        "10",
        "--out",
        s(&exp),
    ]);
    assert_eq!(code, 0, "{err}");
    check_manifest(&exp, "explore");
    let recs: Vec<SolutionRecord> = fs::read_to_string(exp.join("solutions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r.feasible));
    assert_eq!(fs::read_to_string(exp.join("summary.csv")).unwrap().lines().count(), 11);

    let empty = tmp.path().join("empty");
    let (code, err) = eglass(&[
        "explore",
        "--config",
        s(&preset_file(Preset::Sr)),
        "--z0",
        s(&inv.join("z0.json")),
        "--n",
        "0",
        "--out",
        s(&empty),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(fs::read_to_string(empty.join("solutions.jsonl")).unwrap().is_empty());
    assert_eq!(fs::read_to_string(empty.join("summary.csv")).unwrap().lines().count(), 1);
}

#[test]
fn missing_field_exits_1_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::to_value(ExperimentConfig::preset(Preset::Sr)).unwrap();
    v.as_object_mut().unwrap().remove("inversion");
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let (code, err) = eglass(&["invert", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code, 1);
    assert!(err.contains("inversion") && err.contains("line"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_field_and_bad_version_are_rejected() {
    let mut v: serde_json::Value = serde_json::to_value(ExperimentConfig::preset(Preset::Cs)).unwrap();
    v["problem"]["extra"] = serde_json::json!(1);
    let err = parse_config(&v.to_string()).unwrap_err();
    assert!(err.contains("extra"), "{err}");
    let mut v: serde_json::Value = serde_json::to_value(ExperimentConfig::preset(Preset::Cs)).unwrap();
    v["version"] = serde_json::json!(99);
    assert!(parse_config(&v.to_string()).unwrap_err().contains("version"));
}

#[test]
fn unwritable_out_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, b"x").unwrap();
    let (code, err) = eglass(&[
        "invert",
        "--config",
        s(&preset_file(Preset::Sr)),
        "--out",
        s(&file.join("sub")),
    ]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn mismatched_z0_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let z0 = tmp.path().join("z0.json");
    fs::write(&z0, "[0.0, 1.0, 2.0]").unwrap();
    let (code, err) = eglass(&[
        "explore",
        "--config",
        s(&preset_file(Preset::Sr)),
        "--z0",
        s(&z0),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("expected 16, found 3"), "{err}");
}

#[test]
fn budget_exhaustion_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::preset(Preset::Sr);
    c.inversion.max_iters = 3;
    let cfg = tmp.path().join("short.json");
    fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let out = tmp.path().join("o");
    let (code, err) = eglass(&["invert", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 2, "{err}");
    assert_eq!(manifest(&out).exit_code, 2);
}

#[test]
fn divergence_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::preset(Preset::Sr);
    c.problem.noise_sigma = 1e4;
    let cfg = tmp.path().join("noisy.json");
    fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let (code, err) = eglass(&["invert", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code, 1);
    assert!(err.contains("diverged"), "{err}");
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let (code, err) = eglass(&[
        "spectra",
        "--config",
        s(&preset_file(Preset::Cs)),
        "--out",
        s(&out),
        "--seed",
        "42",
    ]);
    assert_eq!(code, 0, "{err}");
    let m = check_manifest(&out, "spectra");
    let expected = ExperimentConfig::preset(Preset::Cs).with_seed(42);
    assert_eq!(m.config, expected);
    assert_eq!(m.config_hash, config_hash(&expected));
    assert_eq!(m.seeds.truth_seed, 42);
    assert_eq!(m.seeds.proj_seed, Some(46));
}

#[test]
fn spectra_outputs_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("r{i}"))).collect();
    for r in &runs {
        let (code, err) = eglass(&["spectra", "--config", s(&preset_file(Preset::Sr)), "--out", s(r)]);
        assert_eq!(code, 0, "{err}");
    }
    let m = check_manifest(&runs[0], "spectra");
    for name in ["anisotropy_y.csv", "anisotropy_x.csv", "coupling.csv"] {
        let rows = fs::read_to_string(runs[0].join(name)).unwrap().lines().count() - 1;
        assert_eq!(rows, 16, "{name}");
    }
    for f in &m.files {
        assert_eq!(
            fs::read(runs[0].join(&f.name)).unwrap(),
            fs::read(runs[1].join(&f.name)).unwrap(),
            "{}",
            f.name
        );
    }
    let a = manifest(&runs[0]);
    let b = manifest(&runs[1]);
    assert_eq!(a.files, b.files);
    assert_eq!(a.config_hash, b.config_hash);
}

#[test]
fn bench_writes_two_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let (code, err) = eglass(&["bench", "--config", s(&preset_file(Preset::Sr)), "--out", s(&out), "--threads", "1"]);
    assert_eq!(code, 0, "{err}");
    check_manifest(&out, "bench");
    for (name, method) in [("bench_eglass.json", "eglass"), ("bench_baseline.json", "multi_restart")] {
        let r: eglass_core::bench::BenchReport = serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap();
        assert!(r.method.contains(method), "{}", r.method);
    }
    let t: eglass_core::bench::TimingReport = serde_json::from_str(&fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert_eq!(t.eglass.feasible_count, 10);
    assert!(out.join("correlation.csv").exists() && out.join("contrast.csv").exists());
}

#[test]
fn bench_refuses_multiple_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err) = eglass(&[
        "bench",
        "--config",
        s(&preset_file(Preset::Sr)),
        "--out",
        s(&tmp.path().join("b")),
        "--threads",
        "4",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("--threads 1"), "{err}");
}

#[test]
fn documented_examples_equal_presets() {
    let doc = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.md")).unwrap();
    let full: Vec<ExperimentConfig> = doc
        .split("```json\n")
        .skip(1)
        .filter_map(|b| b.split("```").next())
        .filter(|b| b.trim_start().starts_with('{'))
        .map(|b| parse_config(b).unwrap())
        .collect();
    assert_eq!(full, vec![ExperimentConfig::preset(Preset::Sr), ExperimentConfig::preset(Preset::Cs)]);
}
