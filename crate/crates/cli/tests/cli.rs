use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use fmpx::data::{write_ppm, RgbImage, FOUR_COLORS};
use serde_json::Value;

fn fmpx() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fmpx"));
    c.env("FMPX_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("FMPX_") && k != "FMPX_LOG" {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    fmpx().args(args).output().expect("spawn fmpx")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "fmpx {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
    ckpt: PathBuf,
}

/// Four solid-colour classes of five images, plus one single-fold training
/// run shared by the tests that need a checkpoint.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        for (c, rgb) in FOUR_COLORS.iter().enumerate() {
            let cd = data.join(format!("c{c}"));
            std::fs::create_dir_all(&cd).unwrap();
            for j in 0..5u8 {
                let img = RgbImage::from_fn(40, 36, |x, _| [rgb[0], rgb[1].saturating_add(j), (x * 2) as u8]);
                write_ppm(&img, cd.join(format!("{j}.ppm"))).unwrap();
            }
        }
        let run_dir = dir.path().join("run");
        ok(&["train", "--data", s(&data), "--out", s(&run_dir), "--fold", "1", "--epochs", "1", "--batch-size", "8"]);
        let ckpt = run_dir.join("fold1.fmpx");
        Fixture {
            data,
            run: run_dir,
            ckpt,
            _dir: dir,
        }
    })
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["train", "--help"]);
    let h = String::from_utf8(out.stdout).unwrap();
    for want in ["[default: 0.0001]", "[default: 32]", "[default: 100]", "[default: 5]", "FMPX_SEED"] {
        assert!(h.contains(want), "missing {want}");
    }
    let h = String::from_utf8(ok(&["bench", "--help"]).stdout).unwrap();
    assert!(h.contains("[default: 100]"));
    let h = String::from_utf8(ok(&["gradcam", "--help"]).stdout).unwrap();
    assert!(h.contains("[default: 0.4]"));
}

#[test]
fn single_fold_run_records_resolved_defaults() {
    let f = fixture();
    let man = read_json(&f.run.join("manifest.json"));
    let t = &man["config"]["train"];
    assert_eq!(t["lr"], 1e-4);
    assert_eq!(t["batch_size"], 8);
    assert_eq!(t["epochs"], 1);
    assert_eq!(man["config"]["data"]["folds"], 5);
    assert_eq!(man["config"]["model"]["num_classes"], 4);
    assert!(f.ckpt.is_file());
    assert!(f.run.join("fold1.fmpx.json").is_file());
    assert!(f.run.join("fold1_metrics.json").is_file());
    assert_eq!(std::fs::read_to_string(f.run.join("fold1.jsonl")).unwrap().lines().count(), 1);
    assert!(!f.run.join("fold2.fmpx").exists());
}

#[test]
fn five_folds_write_five_checkpoints_and_metrics() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cv");
    ok(&["train", "--data", s(&f.data), "--folds", "5", "--seed", "7", "--epochs", "1", "--batch-size", "16", "--out", s(&out)]);
    for k in 1..=5 {
        assert!(out.join(format!("fold{k}.fmpx")).is_file());
        let m = read_json(&out.join(format!("fold{k}_metrics.json")));
        assert!(m["metrics"]["accuracy"].is_number());
    }
    let summary = read_json(&out.join("cv_summary.json"));
    assert!(summary["accuracy"].as_str().unwrap().contains("%(±"));
    let man = read_json(&out.join("manifest.json"));
    assert_eq!(man["seeds"]["train"], 7);
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"lr": 0.001, "epochs": 1, "seed": 3}, "data": {"fold": 2}}"#).unwrap();
    let out = dir.path().join("o");
    let st = fmpx()
        .args(["train", "--data", s(&f.data), "--config", s(&cfg), "--lr", "0.002", "--out", s(&out), "--batch-size", "16"])
        .env("FMPX_SEED", "11")
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let man = read_json(&out.join("manifest.json"));
    let t = &man["config"]["train"];
    assert_eq!(t["lr"], 0.002);
    assert_eq!(t["epochs"], 1);
    assert_eq!(t["seed"], 11);
    assert_eq!(t["aux_weights"], serde_json::json!([1.0, 1.0]));
    assert!(out.join("fold2.fmpx").is_file());

    // the manifest itself is accepted as a config
    let again = dir.path().join("again");
    ok(&["train", "--data", s(&f.data), "--config", s(&out.join("manifest.json")), "--out", s(&again)]);
    let a = std::fs::read(out.join("fold2.fmpx")).unwrap();
    let b = std::fs::read(again.join("fold2.fmpx")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn baseline_flags_reach_baseline_topology() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    ok(&[
        "train", "--data", s(&f.data), "--no-ablgfm", "--no-aux", "--no-dropblock", "--activation", "relu",
        "--stage5", "1024", "--fold", "1", "--epochs", "1", "--batch-size", "16", "--out", s(&out),
    ]);
    let man = read_json(&out.join("manifest.json"));
    let want = serde_json::to_value(fmpx::ModelConfig::baseline()).unwrap();
    assert_eq!(man["config"]["model"], want);
}

#[test]
fn classify_gives_normalised_probabilities() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let img = f.data.join("c2/3.ppm");
    ok(&["classify", "--image", s(&img), "--ckpt", s(&f.ckpt), "--out", s(&out)]);
    let v = read_json(&out);
    let p: Vec<f64> = v["results"][0]["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(p.len(), 4);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(v["results"][0]["top"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("c.manifest.json").is_file());

    ok(&["classify", "--image", s(&f.data.join("c1")), "--ckpt", s(&f.ckpt), "--out", s(&out), "--top-k", "2"]);
    let v = read_json(&out);
    assert_eq!(v["results"].as_array().unwrap().len(), 5);
    assert_eq!(v["results"][0]["top"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_writes_reports() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(dir.path())]);
    for name in ["metrics.json", "metrics.csv", "confusion.csv", "roc.csv", "manifest.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let m = read_json(&dir.path().join("metrics.json"));
    assert_eq!(m["metrics"]["confusion"]["classes"], serde_json::json!(["c0", "c1", "c2", "c3"]));
}

#[test]
fn bench_reports_integer_fps() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    let stdout = ok(&["bench", "--ckpt", s(&f.ckpt), "--n", "5", "--warmup", "1", "--out", s(&out)]).stdout;
    let shown: Value = serde_json::from_slice(&stdout).unwrap();
    assert!(shown["fps"].as_u64().unwrap() >= 1);
    assert!(shown["p50_ms"].as_f64().unwrap() > 0.0);
    let full = read_json(&out);
    assert_eq!(full["samples"].as_array().unwrap().len(), 5);
    assert_eq!(full["intra_op_parallel"], false);
    let man = read_json(&dir.path().join("b.manifest.json"));
    assert_eq!(man["config"]["n"], 5);
}

#[test]
fn gradcam_writes_images() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["gradcam", "--ckpt", s(&f.ckpt), "--image", s(&f.data.join("c0/1.ppm")), "--out", s(dir.path()), "--csv"]);
    for name in ["heatmap.ppm", "overlay.ppm"] {
        let img = fmpx::data::read_image(dir.path().join(name)).unwrap();
        assert_eq!((img.width(), img.height()), (224, 224));
    }
    let csv = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 224);
    let info = read_json(&dir.path().join("cam.json"));
    assert_eq!(info["target_layer"], "ablgfm");
}

#[test]
fn augment_expands_with_provenance() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("aug");
    ok(&["augment", "--data", s(&f.data), "--targets", "5,8,6,12", "--seed", "4", "--out", s(&out)]);
    let counts: Vec<usize> = (0..4).map(|c| std::fs::read_dir(out.join(format!("c{c}"))).unwrap().count()).collect();
    assert_eq!(counts, vec![5, 8, 6, 12]);
    let prov = std::fs::read_to_string(out.join("provenance.jsonl")).unwrap();
    assert_eq!(prov.lines().count(), 3 + 1 + 7);
    for line in prov.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["strategies"].as_array().unwrap().len(), 6);
    }
}

#[test]
fn score_ranks_every_table_row() {
    let table = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/reference_models.csv");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ranked.csv");
    let stdout = String::from_utf8(ok(&["score", "--in", s(&table), "--out", s(&out)]).stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "rank,name,accuracy,fps,recall,specificity,score");
    assert_eq!(lines.len(), 21);
    assert!(stdout.contains("Fast-MpoxNet"));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), stdout);
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap().lines().last().unwrap_or_default().to_string()
}

#[test]
fn errors_are_one_line_with_distinct_exit_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();

    let missing = dir.path().join("nope.fmpx");
    std::fs::write(crate_sidecar(&missing), r#"{"model": {}}"#).unwrap();
    let out = run(&["classify", "--image", s(&f.data.join("c0/0.ppm")), "--ckpt", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(line.starts_with("error: kind=io msg="), "{line}");
    assert!(line.contains("nope.fmpx"));

    let bad = dir.path().join("bad.fmpx");
    std::fs::write(&bad, b"JUNKJUNKJUNK").unwrap();
    std::fs::copy(crate_sidecar(&f.ckpt), crate_sidecar(&bad)).unwrap();
    let out = run(&["classify", "--image", s(&f.data.join("c0/0.ppm")), "--ckpt", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error: kind=checkpoint"), "{}", stderr_line(&out));

    let out = run(&["train", "--data", s(&f.data), "--activation", "tanh"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["score", "--in", s(&dir.path().join("missing.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("missing.csv"));
    let out = run(&["train", "--data", s(&dir.path().join("no-such-dir")), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn crate_sidecar(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
