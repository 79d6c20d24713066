use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn oarseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oarseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small network and short schedules; `n_cases` phantom cases.
fn quick_config(dir: &Path, n_cases: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "pipeline": {
            "train": {
                "hidden_sizes": [16, 8],
                "pretrain_epochs": 2,
                "finetune_epochs": 6,
                "batch_size": 32
            }
        },
        "phantom": { "n_cases": n_cases }
    });
    let p = dir.join(format!("quick{n_cases}.json"));
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn leftovers(dir: &Path) -> Vec<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(".partial"))
        .collect()
}

#[test]
fn phantom_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), 3);
    let data = tmp.path().join("data");
    ok(&oarseg(&["phantom", "--config", s(&cfg), "--out", s(&data)]));
    let m: Value = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["cases"].as_array().unwrap().len(), 3);
    assert_eq!(m["n_raters"], 3);
    assert_eq!(m["organs"].as_array().unwrap().len(), 4);
    assert!(data.join("case_02/chiasm.rater3.lbl").exists());
    assert!(data.join("case_00/image.json").exists());
}

#[test]
fn loocv_default_suite_has_eight_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), 8);
    let out = tmp.path().join("run");
    ok(&oarseg(&[
        "loocv", "--config", s(&cfg), "--organ", "chiasm", "--set", "aefv", "--out", s(&out),
    ]));
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ["organ", "set", "metric", "mean", "sd", "min", "max"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert!(rows.iter().any(|r| &r[2] == "dsc" && &r[0] == "chiasm" && &r[1] == "aefv"));
    let folds = fs::read_dir(out.join("runs/chiasm")).unwrap().count();
    assert_eq!(folds, 8);
    for f in ["model.sdae.json", "mask_pre.lbl", "mask_post.lbl", "report.json"] {
        assert!(out.join("runs/chiasm/case_07").join(f).exists(), "{f}");
    }
    let saved: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["set"], "aefv");
    assert_eq!(saved["organ"], "chiasm");
    assert!(leftovers(tmp.path()).is_empty());
}

#[test]
fn jobs_do_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), 3);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        ok(&oarseg(&[
            "loocv", "--config", s(&cfg), "--organ", "gland", "--set", "textural", "--jobs", jobs,
            "--out", s(dir),
        ]));
    }
    for case in ["case_00", "case_01", "case_02"] {
        for f in ["model.sdae.json", "mask_post.lbl", "report.json"] {
            let p = Path::new("runs/gland").join(case).join(f);
            assert_eq!(fs::read(a.join(&p)).unwrap(), fs::read(b.join(&p)).unwrap(), "{p:?}");
        }
    }
    assert_eq!(
        fs::read(a.join("summary.csv")).unwrap(),
        fs::read(b.join("summary.csv")).unwrap()
    );
}

#[test]
fn train_segment_and_width_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), 3);
    let data = tmp.path().join("data");
    ok(&oarseg(&["phantom", "--config", s(&cfg), "--out", s(&data)]));

    let model = tmp.path().join("model");
    ok(&oarseg(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--organ", "gland", "--set", "classical",
        "--exclude", "case_02", "--out", s(&model),
    ]));
    let m: Value = serde_json::from_slice(&fs::read(model.join("model.sdae.json")).unwrap()).unwrap();
    assert_eq!(m["feature_set"], "classical");
    assert_eq!(m["layer_sizes"][0], 137);

    let seg = tmp.path().join("seg");
    let image = data.join("case_02/image.vol");
    ok(&oarseg(&["segment", "--model", s(&model), "--image", s(&image), "--out", s(&seg)]));
    assert!(seg.join("mask_post.lbl").exists());
    assert!(seg.join("proba.csv").exists());

    // a matrix of the model's own width is accepted
    let fm = tmp.path().join("classical.bin");
    ok(&oarseg(&[
        "features", "--model", s(&model), "--image", s(&image), "--set", "classical", "--out", s(&fm),
    ]));
    let seg2 = tmp.path().join("seg2");
    ok(&oarseg(&["segment", "--model", s(&model), "--features", s(&fm), "--out", s(&seg2)]));

    let wide = tmp.path().join("aefv.bin");
    ok(&oarseg(&[
        "features", "--data", s(&data), "--case", "case_02", "--organ", "gland", "--set", "aefv",
        "--out", s(&wide),
    ]));
    let seg3 = tmp.path().join("seg3");
    let out = oarseg(&["segment", "--model", s(&model), "--features", s(&wide), "--out", s(&seg3)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("width"), "{}", stderr(&out));
    assert!(!seg3.exists());
    assert!(leftovers(tmp.path()).is_empty());
}

#[test]
fn evaluate_identity_and_majority_vote() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path(), 2);
    let data = tmp.path().join("data");
    ok(&oarseg(&["phantom", "--config", s(&cfg), "--out", s(&data)]));
    let reference = data.join("case_00/stalk.lbl");

    let report = tmp.path().join("r.json");
    ok(&oarseg(&[
        "evaluate", "--auto", s(&reference), "--ref", s(&reference), "--out", s(&report),
    ]));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["dsc"], 1.0);
    assert_eq!(r["hausdorff_mm"], 0.0);
    assert_eq!(r["rvd_percent"], 0.0);

    let raters: Vec<PathBuf> = (1..=3).map(|k| data.join(format!("case_00/stalk.rater{k}.lbl"))).collect();
    let out = oarseg(&[
        "evaluate", "--auto", s(&reference), "--ref", s(&raters[0]), "--ref", s(&raters[1]),
        "--ref", s(&raters[2]), "--organ", "stalk",
    ]);
    ok(&out);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let dsc = r["dsc"].as_f64().unwrap();
    assert!(dsc > 0.5 && dsc <= 1.0, "{dsc}");
    assert_eq!(r["organ_id"], "stalk");
}

#[test]
fn failures_exit_nonzero_and_leave_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"sett": "aefv"}"#).unwrap();
    let out_dir = tmp.path().join("x");
    let out = oarseg(&["phantom", "--config", s(&bad), "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("sett"), "{}", stderr(&out));
    assert!(!out_dir.exists());

    let cfg = quick_config(tmp.path(), 3);
    let out = oarseg(&["loocv", "--config", s(&cfg), "--organ", "liver", "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("liver"), "{}", stderr(&out));
    assert!(!out_dir.exists());
    assert!(leftovers(tmp.path()).is_empty());

    let out = oarseg(&["loocv", "--config", s(&cfg), "--set", "wavelet", "--out", s(&out_dir)]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "set": "classical",
            "organ": "nerve",
            "pipeline": { "train": { "hidden_sizes": [6], "pretrain_epochs": 1, "finetune_epochs": 2, "seed": 5 } },
            "phantom": { "n_cases": 2 }
        })
        .to_string(),
    )
    .unwrap();
    let model = tmp.path().join("m");
    ok(&oarseg(&[
        "train", "--config", s(&cfg), "--set", "textural", "--seed", "11", "--out", s(&model),
    ]));
    let m: Value = serde_json::from_slice(&fs::read(model.join("model.sdae.json")).unwrap()).unwrap();
    assert_eq!(m["feature_set"], "textural");
    assert_eq!(m["organ_id"], "nerve");
    assert_eq!(m["seed"], 11);
    let saved: Value = serde_json::from_slice(&fs::read(model.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["pipeline"]["train"]["seed"], 11);
    assert_eq!(saved["phantom"]["seed"], 11);
}
