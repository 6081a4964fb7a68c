use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emtransfer"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .last()
        .unwrap_or_default()
        .to_string()
}

const SYNTH: &str = r#"{
  "samples_per_domain": 10,
  "domains": [
    {"name": "a", "image_size": 16, "cell_diameter_mean": 8.0, "cell_diameter_std": 0.5, "membrane_thickness": 2.0, "seed": 1},
    {"name": "b", "image_size": 16, "cell_diameter_mean": 8.0, "cell_diameter_std": 0.5, "membrane_thickness": 2.0, "noise_sigma": 14.0, "seed": 2},
    {"name": "c", "image_size": 16, "cell_diameter_mean": 12.0, "cell_diameter_std": 0.5, "membrane_thickness": 2.0, "gamma": 1.4, "stripe_prob": 0.5, "seed": 3}
  ]
}"#;

const PRETRAIN: &str = r#"{
  "model": {"depth": 1, "base_channels": 2, "input_size": 16},
  "train": {"steps": 15, "learning_rate": 0.01, "seed": 4}
}"#;

const ADAPT: &str = r#"{
  "training_steps": 6,
  "iterations": 2,
  "uncertainty": {"k_passes": 2},
  "train": {"learning_rate": 0.01}
}"#;

const GRID: &str = r#"{
  "data_dir": "data",
  "models_dir": "models",
  "out_dir": "grid",
  "targets": ["a"],
  "matrix": "m.csv",
  "modes": ["scratch", "active-min-mmd"],
  "samplers": ["random", "median-unc"],
  "sample_sizes": [1, 2],
  "seeds": [1, 2],
  "adapt": {"training_steps": 4, "iterations": 2, "uncertainty": {"k_passes": 2}}
}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("synth.json"), SYNTH).unwrap();
    fs::write(p.join("pretrain.json"), PRETRAIN).unwrap();
    fs::write(p.join("adapt.json"), ADAPT).unwrap();
    fs::write(p.join("grid.json"), GRID).unwrap();
    fs::write(p.join("families.csv"), "domain,family\na,x\nb,x\nc,y\n").unwrap();
    dir
}

/// Every command of the pipeline, in dependency order.
const PIPELINE: &[&[&str]] = &[
    &["synth-gen", "--config", "synth.json", "--out", "data"],
    &[
        "pretrain",
        "--data",
        "data",
        "--config",
        "pretrain.json",
        "--out",
        "models",
    ],
    &[
        "embed",
        "--data",
        "data",
        "--domain",
        "a",
        "--model",
        "models/a",
        "--out",
        "emb/a.bin",
    ],
    &[
        "mmd-matrix",
        "--data",
        "data",
        "--models",
        "models",
        "--out",
        "m.csv",
        "--sample-cap",
        "6",
    ],
    &[
        "cluster",
        "--matrix",
        "m.csv",
        "--k",
        "2",
        "--reference",
        "families.csv",
        "--out",
        "clu",
    ],
    &[
        "audit-uncertainty",
        "--data",
        "data",
        "--domain",
        "c",
        "--model",
        "models/a",
        "--out",
        "audit",
        "--k-passes",
        "3",
        "--heatmaps",
        "2",
    ],
    &[
        "evaluate",
        "--data",
        "data",
        "--domain",
        "a",
        "--model",
        "models/a",
        "--out",
        "eval/a.json",
    ],
    &[
        "adapt",
        "--data",
        "data",
        "--models",
        "models",
        "--target",
        "a",
        "--mode",
        "active-min-mmd",
        "-A",
        "3",
        "--seeds",
        "1,2",
        "--config",
        "adapt.json",
        "--out",
        "adapt",
    ],
    &["grid", "--config", "grid.json"],
];

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    files.into_iter().map(|f| (f.clone(), fs::read(&f).unwrap())).collect()
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let dir = setup();
    let p = dir.path();
    for args in PIPELINE {
        ok(p, args);
    }
    let first = snapshot(p);
    for name in [
        "data/artifacts.csv",
        "data/a/train",
        "models/a.weights",
        "models/pretrain.json",
        "emb/a.bin.json",
        "m.csv",
        "m.csv.json",
        "clu/cluster.json",
        "clu/dendrogram.txt",
        "audit/uncertainty.csv",
        "audit/audit.json",
        "eval/a.json",
        "adapt/records.json",
        "adapt/results.csv",
        "adapt/table.csv",
        "grid/table.csv",
        "grid/efficacy.csv",
        "grid/grid.manifest.json",
    ] {
        assert!(p.join(name).exists(), "{name} missing");
    }
    for args in PIPELINE {
        ok(p, args);
    }
    let second = snapshot(p);
    assert_eq!(first.len(), second.len());
    for ((fa, a), (_, b)) in first.iter().zip(&second) {
        assert!(a == b, "{} changed on rerun", fa.display());
    }
    let table = fs::read_to_string(p.join("adapt/table.csv")).unwrap();
    assert!(table.starts_with("target,learning_type,transfer_domain,source,S3\n"));
    let efficacy = fs::read_to_string(p.join("grid/efficacy.csv")).unwrap();
    assert!(efficacy.starts_with("sampling_algorithm,strategy,efficacy\n"));
    let records: serde_json::Value = serde_json::from_slice(&fs::read(p.join("adapt/records.json")).unwrap()).unwrap();
    for r in records.as_array().unwrap() {
        assert_eq!(r["annotations_used"], 3);
        assert_eq!(r["steps_used"], 6);
    }
}

#[test]
fn ods_prints_nearest_and_farthest() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("m.csv"), "domain,a,b,c\na,0,0.2,0.9\nb,0.3,0,0.4\nc,0.7,0.1,0\n").unwrap();
    assert_eq!(ok(p, &["ods", "--matrix", "m.csv", "--target", "a"]).trim(), "b");
    assert_eq!(
        ok(p, &["ods", "--matrix", "m.csv", "--target", "a", "--farthest"]).trim(),
        "c"
    );
    assert_eq!(
        ok(p, &["ods", "--matrix", "m.csv", "--target", "c", "--candidates", "a,b"]).trim(),
        "b"
    );
    let out = run_in(p, &["ods", "--matrix", "m.csv", "--target", "a", "--candidates", "a,b"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error: kind=TargetIsCandidate msg="));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["ods", "--matrix", "m.csv", "--target", "a", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(stderr_line(&out).starts_with("error: kind=Usage msg="));
    assert_eq!(run_in(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_3() {
    let dir = setup();
    let p = dir.path();
    fs::write(
        p.join("bad.json"),
        r#"{"domains": [{"name": "x", "stripe_prob": 2.0}], "samples_per_domain": 3}"#,
    )
    .unwrap();
    let out = run_in(p, &["synth-gen", "--config", "bad.json", "--out", "d"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error: kind=InvalidSpec"));
    fs::write(p.join("broken.json"), "{").unwrap();
    let out = run_in(p, &["synth-gen", "--config", "broken.json", "--out", "d"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run_in(p, &["grid", "--config", "grid.json"]);
    assert_eq!(out.status.code(), Some(3), "data dir does not exist yet");
    ok(p, PIPELINE[0]);
    ok(p, PIPELINE[1]);
    let out = run_in(
        p,
        &[
            "adapt", "--data", "data", "--models", "models", "--target", "a", "-A", "8", "-B", "2", "-T", "4", "--out",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error: kind=InsufficientTrainingBudget"));
    let out = run_in(
        p,
        &[
            "adapt", "--data", "data", "--models", "models", "--target", "a", "--mode", "lazy", "--out", "x",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = setup();
    let p = dir.path();
    ok(p, PIPELINE[0]);
    let out = run_in(
        p,
        &[
            "evaluate",
            "--data",
            "data",
            "--domain",
            "a",
            "--model",
            "nowhere/a",
            "--out",
            "e.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error: kind=") && !line.contains('\n'));
    ok(p, PIPELINE[1]);
    // the train split of a holds 8 images
    let out = run_in(
        p,
        &[
            "adapt",
            "--data",
            "data",
            "--models",
            "models",
            "--target",
            "a",
            "-A",
            "9",
            "-B",
            "20",
            "--config",
            "adapt.json",
            "--out",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error: kind=PoolExhausted"));
}

#[test]
fn inputs_are_not_modified() {
    let dir = setup();
    let p = dir.path();
    ok(p, PIPELINE[0]);
    ok(p, PIPELINE[1]);
    let before = snapshot(&p.join("data"));
    for args in &PIPELINE[2..] {
        ok(p, args);
    }
    assert_eq!(before, snapshot(&p.join("data")));
}

#[test]
fn threads_flag() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("m.csv"), "domain,a,b\na,0,1\nb,1,0\n").unwrap();
    assert_eq!(
        ok(p, &["--threads", "1", "ods", "--matrix", "m.csv", "--target", "a"]).trim(),
        "b"
    );
    let out = run_in(p, &["--threads", "0", "ods", "--matrix", "m.csv", "--target", "a"]);
    assert_eq!(out.status.code(), Some(3));
}
