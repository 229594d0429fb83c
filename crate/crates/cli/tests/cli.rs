use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn multifruit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multifruit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = multifruit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for dir in [&a, &b] {
        ok(&["synth", "--out", p(dir), "--per-class", "6", "--seed", "11", "--size", "32", "--corrupt-frac", "0.5"]);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 6 * 2 + 3);
    assert!(fa == fb);
    let c = t.path().join("c");
    ok(&["synth", "--out", p(&c), "--per-class", "6", "--seed", "12", "--size", "32", "--corrupt-frac", "0.5"]);
    assert!(files(&c) != fa);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(multifruit(&["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(multifruit(&["train"]).status.code(), Some(1));
    assert_eq!(multifruit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(multifruit(&["--help"]).status.code(), Some(0));
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("nope.jsonl");
    let out = multifruit(&["split", "--manifest", p(&missing), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[io-error]:") && err.trim_end().lines().count() == 1, "{err}");

    let bad = t.path().join("bad.jsonl");
    fs::write(&bad, "{not json\n").unwrap();
    let out = multifruit(&["split", "--manifest", p(&bad), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, r#"{"learning_rate": 0.1}"#).unwrap();
    let out = multifruit(&["train", "--manifest", p(&bad), "--config", p(&cfg), "--out", p(&t.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid-argument"));
}

fn build_dataset(root: &Path) -> PathBuf {
    let raw = root.join("raw");
    let sil = root.join("sil");
    ok(&["synth", "--out", p(&raw), "--per-class", "10", "--seed", "3", "--size", "32", "--corrupt-frac", "0.2"]);
    let msg = ok(&["preprocess", "--in", p(&raw), "--out", p(&sil)]);
    assert!(msg.contains("accepted 16 of 20"), "{msg}");
    let report = fs::read_to_string(sil.join("refinement.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 20);
    let manifest = sil.join("manifest.jsonl");
    ok(&["split", "--manifest", p(&manifest), "--seed", "5", "--ratios", "0.5,0.25,0.25"]);
    manifest
}

fn train_model(root: &Path, manifest: &Path, arch: &str) -> PathBuf {
    let cfg = root.join(format!("{arch}.json"));
    fs::write(
        &cfg,
        format!(r#"{{"arch":"{arch}","epochs":2,"image_size":32,"batch_size":4,"seed":9,"precision":"f64"}}"#),
    )
    .unwrap();
    let ckpt = root.join(format!("{arch}.ckpt"));
    let logs = root.join(format!("{arch}.log.jsonl"));
    let out = ok(&["train", "--manifest", p(manifest), "--config", p(&cfg), "--out", p(&ckpt), "--logs", p(&logs)]);
    assert!(out.contains("epoch   2/2"), "{out}");
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(&logs).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 2);
    assert_eq!(lines[0]["config_hash"].as_str().unwrap().len(), 64);
    ckpt
}

#[test]
fn pipeline_eval_predict_compare() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let manifest = build_dataset(root);
    let multi = train_model(root, &manifest, "multi");
    let single = train_model(root, &manifest, "single");

    let mut reports = Vec::new();
    for (name, ckpt) in [("multi", &multi), ("single", &single)] {
        let json = root.join(format!("{name}.eval.json"));
        let stdout = ok(&["eval", "--manifest", p(&manifest), "--ckpt", p(ckpt), "--split", "test", "--json", p(&json)]);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(v, serde_json::from_str::<serde_json::Value>(&stdout).unwrap());
        assert_eq!(v["arch"], name);
        assert_eq!(v["backbone"], "mobilenet_lite");
        assert_eq!(v["split"], "test");
        assert_eq!(v["averaging"], "macro");
        assert_eq!(v["config"]["image_size"], 32);
        let cm: Vec<Vec<u64>> = serde_json::from_value(v["confusion"].clone()).unwrap();
        let n: u64 = cm.iter().flatten().sum();
        assert_eq!(v["n"], n);
        let acc = (cm[0][0] + cm[1][1]) as f64 / n as f64;
        assert!((v["accuracy"].as_f64().unwrap() - acc).abs() < 1e-12);
        for k in ["precision", "recall", "f1"] {
            let x = v[k].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&x), "{k} = {x}");
        }
        reports.push(json);
    }

    let table = root.join("compare.json");
    let text = ok(&["compare", "--results", p(&reports[0]), p(&reports[1]), "--tolerance", "0.01", "--json", p(&table)]);
    assert!(text.contains("multi_ge_single"));
    let c: serde_json::Value = serde_json::from_str(&fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(c["rows"].as_array().unwrap().len(), 2);
    assert_eq!(c["tolerance"], 0.01);
    assert_eq!(multifruit(&["compare", "--results", p(&reports[0])]).status.code(), Some(3));

    // A silhouette written by preprocess and one extracted on the fly agree.
    let first: serde_json::Value = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|r| r["label"] == "defective")
        .unwrap();
    let base = manifest.parent().unwrap();
    let rgb = base.join(first["rgb"].as_str().unwrap());
    let sil = base.join(first["sil"].as_str().unwrap());
    let auto: serde_json::Value = serde_json::from_str(&ok(&["predict", "--ckpt", p(&multi), "--rgb", p(&rgb)])).unwrap();
    let file: serde_json::Value =
        serde_json::from_str(&ok(&["predict", "--ckpt", p(&multi), "--rgb", p(&rgb), "--sil", p(&sil)])).unwrap();
    assert_eq!(auto["silhouette"], "auto");
    assert_eq!(file["silhouette"], "file");
    assert_eq!(auto["probabilities"], file["probabilities"]);
    assert_eq!(auto["label"], file["label"]);
    let probs = &auto["probabilities"];
    let s = probs["healthy"].as_f64().unwrap() + probs["defective"].as_f64().unwrap();
    assert!((s - 1.0).abs() < 1e-12);

    let rgb_only: serde_json::Value =
        serde_json::from_str(&ok(&["predict", "--ckpt", p(&single), "--rgb", p(&rgb)])).unwrap();
    assert_eq!(rgb_only["silhouette"], "none");
}
