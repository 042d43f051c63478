use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use shapepose_core::mesh::load_mesh;
use shapepose_core::Checkpoint;

fn shapepose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapepose"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = shapepose(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure(args: &[&str]) -> Value {
    let out = shapepose(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "one error line expected, got {stderr:?}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string());
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Small dataset plus a config file for a few cheap training steps.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&[
            "gen-data",
            "--subjects",
            "3",
            "--poses",
            "3",
            "--seed",
            "4",
            "--out",
            s(&data),
        ]);
        let cfg = dir.path().join("tiny.json");
        fs::write(
            &cfg,
            r#"{"model": {"channels": [4, 4, 8, 8], "latent_shape_dim": 4, "latent_pose_dim": 12},
                "steps": 4, "batch_size": 2, "checkpoint_every": 2, "seed": 3}"#,
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn index(&self) -> PathBuf {
        self.path("data/index.json")
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let (index, cfg) = (self.index(), self.path("tiny.json"));
        let mut args = vec!["train", "--manifest", s(&cfg), "--data", s(&index), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

#[test]
fn version_names_the_config_schema() {
    let v = ok(&["--version"]);
    assert!(v.starts_with(&format!("shapepose {}", shapepose_core::TOOL_VERSION)));
    assert!(v.contains(&format!("config schema {}", shapepose_core::CONFIG_SCHEMA_VERSION)));
}

#[test]
fn gen_data_writes_dataset_factors_and_manifest() {
    let fx = Fixture::new();
    let index = read_json(&fx.index());
    assert_eq!(index["subjects"].as_array().unwrap().len(), 3);
    let factors = read_json(&fx.path("data/factors.json"));
    assert_eq!(factors["subjects"][0]["poses"].as_array().unwrap().len(), 3);
    let m = read_json(&fx.path("data/gen-data.manifest.json"));
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["tool_version"], shapepose_core::TOOL_VERSION);
    assert_eq!(m["seeds"]["data"], 4);
}

#[test]
fn hierarchy_is_cached_beside_the_index() {
    let fx = Fixture::new();
    let out = ok(&["build-hierarchy", "--data", s(&fx.index())]);
    assert!(out.contains("levels ["));
    let cached: Vec<_> = fs::read_dir(fx.path("data/cache"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(cached
        .iter()
        .any(|n| n.starts_with("hierarchy-") && n.ends_with(".bin")));
    assert!(cached.contains(&"build-hierarchy.manifest.json".to_string()));
}

#[test]
fn identical_manifests_give_identical_metrics() {
    let fx = Fixture::new();
    let a = fx.train("a", &[]);
    let b = fx.train("b", &[]);
    let metrics = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&metrics).lines().count(), 5);
    // rerunning from the manifest the first run wrote reproduces it as well
    let c = fx.path("c");
    ok(&["train", "--manifest", s(&a.join("train.manifest.json")), "--out", s(&c)]);
    assert_eq!(metrics, fs::read(c.join("metrics.csv")).unwrap());
    let m = read_json(&a.join("train.manifest.json"));
    assert_eq!(m["train_config"]["steps"], 4);
    assert_eq!(m["dataset_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn resume_reproduces_the_run() {
    let fx = Fixture::new();
    let a = fx.train("a", &[]);
    let b = fx.path("b");
    fs::create_dir_all(&b).unwrap();
    fs::copy(a.join("ckpt-000002.bin"), b.join("ckpt-000002.bin")).unwrap();
    let full = fs::read_to_string(a.join("metrics.csv")).unwrap();
    // interrupted after step 3, one row past the checkpoint
    let partial: String = full.lines().take(4).map(|l| format!("{l}\n")).collect();
    fs::write(b.join("metrics.csv"), partial).unwrap();
    ok(&[
        "train",
        "--data",
        s(&fx.index()),
        "--resume",
        s(&b.join("ckpt-000002.bin")),
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read_to_string(b.join("metrics.csv")).unwrap(), full);
    let (ca, cb) = (
        Checkpoint::load(&a.join("model.bin")).unwrap(),
        Checkpoint::load(&b.join("model.bin")).unwrap(),
    );
    assert_eq!(ca.params, cb.params);
}

#[test]
fn flags_override_the_config_file() {
    let fx = Fixture::new();
    let out = fx.train("short", &["--steps", "2"]);
    let rows = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    let m = read_json(&out.join("train.manifest.json"));
    assert_eq!(m["train_config"]["steps"], 2);
    assert_eq!(m["train_config"]["batch_size"], 2);
}

#[test]
fn global_config_supplies_any_flag() {
    let fx = Fixture::new();
    let cfg = fx.path("gen.json");
    let out = fx.path("other");
    fs::write(&cfg, format!(r#"{{"subjects": 2, "poses": 2, "out": {:?}}}"#, s(&out))).unwrap();
    ok(&["gen-data", "--config", s(&cfg), "--poses", "3"]);
    let factors = read_json(&out.join("factors.json"));
    assert_eq!(factors["subjects"].as_array().unwrap().len(), 2);
    assert_eq!(factors["subjects"][0]["poses"].as_array().unwrap().len(), 3);
}

#[test]
fn baseline_objective_is_selectable() {
    let fx = Fixture::new();
    let out = fx.train("base", &["--objective", "reconstruction", "--steps", "1"]);
    let m = read_json(&out.join("train.manifest.json"));
    assert_eq!(m["train_config"]["objective"], "reconstruction");
    assert_eq!(m["train_config"]["model"]["branches"], "single");
}

#[test]
fn model_commands_produce_their_outputs() {
    let fx = Fixture::new();
    let run = fx.train("run", &[]);
    let ckpt = run.join("model.bin");
    let (a, b) = (fx.path("data/s000_000.ply"), fx.path("data/s001_001.ply"));
    let template = load_mesh(&fx.path("data/template.ply"), None).unwrap();

    let t = fx.path("out/transfer.ply");
    ok(&[
        "transfer",
        "--ckpt",
        s(&ckpt),
        "--shape",
        s(&a),
        "--pose",
        s(&b),
        "--out",
        s(&t),
    ]);
    load_mesh(&t, Some(template.topology())).unwrap();
    assert!(fx.path("out/transfer.manifest.json").exists());

    let r = fx.path("out/retrieve.json");
    ok(&[
        "retrieve",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&fx.index()),
        "--query",
        s(&a),
        "--code",
        "shape",
        "--k",
        "3",
        "--out",
        s(&r),
    ]);
    let res = read_json(&r);
    let n = res["neighbors"].as_array().unwrap();
    assert_eq!(n.len(), 3);
    assert_eq!(n[0]["mesh_id"], 0);
    assert_eq!(n[0]["distance"], 0.0);

    let frames = fx.path("out/frames");
    ok(&[
        "interpolate",
        "--ckpt",
        s(&ckpt),
        "--source",
        s(&a),
        "--target",
        s(&b),
        "--steps",
        "3",
        "--out",
        s(&frames),
    ]);
    for k in 0..3 {
        load_mesh(&frames.join(format!("frame_{k:03}.ply")), Some(template.topology())).unwrap();
    }

    let report = fx.path("out/bench.json");
    ok(&[
        "bench",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&fx.index()),
        "--transfer-cases",
        "4",
        "--interpolations",
        "2",
        "--queries-per-subject",
        "1",
        "--out",
        s(&report),
    ]);
    let rep = read_json(&report);
    for code in ["shape_code", "pose_code"] {
        for err in ["e_shape", "e_pose"] {
            assert!(rep["retrieval"][code][err].is_number(), "{code}.{err}");
        }
    }
    assert_eq!(rep["pose_transfer"]["per_pair"].as_array().unwrap().len(), 4);
}

#[test]
fn arap_deform_writes_a_mesh() {
    let fx = Fixture::new();
    let out = fx.path("arap/d.ply");
    let (src, tgt) = (fx.path("data/s000_000.ply"), fx.path("data/s000_001.ply"));
    let summary = ok(&[
        "arap-deform",
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--anchors",
        "0.05",
        "--iters",
        "1",
        "--seed",
        "0",
        "--out",
        s(&out),
    ]);
    assert!(summary.contains("mean distance from target"));
    let src_mesh = load_mesh(&src, None).unwrap();
    load_mesh(&out, Some(src_mesh.topology())).unwrap();
}

#[test]
fn failures_are_single_json_lines() {
    let fx = Fixture::new();
    let e = failure(&[
        "transfer",
        "--ckpt",
        "/nonexistent/m.bin",
        "--shape",
        "a.ply",
        "--pose",
        "b.ply",
        "--out",
        s(&fx.path("t.ply")),
    ]);
    assert_eq!(e["error"], "checkpoint");
    let e = failure(&["gen-data"]);
    assert_eq!(e["error"], "usage");
    assert!(e["message"].as_str().unwrap().contains("--out"));
    failure(&["train", "--ablation", "partial", "--out", "x"]);
    failure(&["gen-data", "--subjects", "1", "--out", s(&fx.path("one"))]);
    let bad = fx.path("bad.json");
    fs::write(&bad, "[1, 2]").unwrap();
    assert_eq!(failure(&["gen-data", "--config", s(&bad)])["error"], "usage");
}

#[test]
fn inputs_are_not_modified() {
    let fx = Fixture::new();
    let before = fs::read(fx.index()).unwrap();
    let a = fx.path("data/s000_000.ply");
    let bytes = fs::read(&a).unwrap();
    let run = fx.train("run", &["--steps", "1"]);
    ok(&[
        "transfer",
        "--ckpt",
        s(&run.join("model.bin")),
        "--shape",
        s(&a),
        "--pose",
        s(&a),
        "--out",
        s(&fx.path("t.ply")),
    ]);
    assert_eq!(fs::read(fx.index()).unwrap(), before);
    assert_eq!(fs::read(&a).unwrap(), bytes);
}
