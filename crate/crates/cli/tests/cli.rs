use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lite_vsr::config::RunConfig;
use lite_vsr::train::{import_dataset, Dataset, Split};

fn repo(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(path)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lite-vsr")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key}= in {text}"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// The smoke config with `patch` merged into its `train` section.
fn smoke_with(dir: &Path, train: &str) -> String {
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(repo("configs/smoke.json")).unwrap()).unwrap();
    let patch: serde_json::Value = serde_json::from_str(train).unwrap();
    for (k, v) in patch.as_object().unwrap() {
        doc["train"][k] = v.clone();
    }
    write_config(dir, "patched.json", &doc.to_string())
}

#[test]
fn analyze_regenerates_component_table() {
    let out = cli(&["analyze", "--config", repo("tables/table5.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("| Model | Variant | FLOPs (GMACs) | Params (M) |"));
    assert!(text.contains("| ResNet-18 |  | 8.29 | 11.17 |"));
    assert!(text.contains("TCN (FasterNet block)"));
}

#[test]
fn every_shipped_preset_analyzes() {
    for dir in ["tables", "configs"] {
        for entry in fs::read_dir(repo(dir)).unwrap() {
            let path = entry.unwrap().path();
            let out = cli(&["analyze", "--config", path.to_str().unwrap(), "--out", "csv"]);
            assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
        }
    }
}

#[test]
fn empty_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.json", r#"{"version": 1, "tables": {"title": "Nothing", "rows": []}}"#);
    let out = cli(&["analyze", "--config", &cfg, "--out", "csv"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "model,variant,params_millions,flops_gigamacs,convention\n");
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo("tables/table3.json");
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        let out = cli(&["analyze", "--config", config.to_str().unwrap(), "--out", path.to_str().unwrap()]);
        assert!(out.status.success());
        assert_eq!(value(&stdout(&out), "rows"), "6");
        files.push(fs::read(path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn invalid_config_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"version": 1, "train": {"batch": 4}}"#);
    let out = cli(&["analyze", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train.batch"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "bad2.json", r#"{"version": 1, "tables": {"rows": [{"model": "m", "spec": {"ratio": 2.0}}]}}"#);
    let out = cli(&["analyze", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tables.rows[0].spec"), "{}", stderr(&out));

    let out = cli(&["analyze", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn smoke_training_then_eval_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let smoke = repo("configs/smoke.json");
    let out = cli(&["train", "--config", smoke.to_str().unwrap(), "--ckpt-dir", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let checkpoints: Vec<_> = fs::read_dir(&ckpt)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    assert_eq!(checkpoints.len(), 1);
    let log = fs::read_to_string(ckpt.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let eval = cli(&["eval", "--config", smoke.to_str().unwrap(), "--ckpt-dir", ckpt.to_str().unwrap()]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let acc: f64 = value(&stdout(&eval), "acc").parse().unwrap();
    let recorded: f64 = value(&text, "best_val_acc").parse().unwrap();
    assert_eq!(acc, recorded);

    // Same checkpoint against a wider model.
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&smoke).unwrap()).unwrap();
    doc["model"]["frontend_width"] = 8.into();
    doc["model"]["hidden_width"] = 64.into();
    let wide = write_config(dir.path(), "wide.json", &doc.to_string());
    let out = cli(&["eval", "--config", &wide, "--checkpoint", checkpoints[0].to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("frontend."), "{}", stderr(&out));
}

#[test]
fn same_seed_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_with(dir.path(), r#"{"epochs": 2}"#);
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let ckpt = dir.path().join(name);
        let out = cli(&["train", "--config", &cfg, "--seed", "7", "--ckpt-dir", ckpt.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        let results: Vec<String> = stdout(&out).lines().filter(|l| !l.starts_with("log=") && !l.starts_with("checkpoint=")).map(String::from).collect();
        logs.push((results, fs::read(ckpt.join("train_log.csv")).unwrap()));
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn unwritable_checkpoint_dir_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let smoke = repo("configs/smoke.json");
    let out = cli(&["train", "--config", smoke.to_str().unwrap(), "--ckpt-dir", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_with(dir.path(), r#"{"epochs": 3, "lr_init": 1e30}"#);
    let out = cli(&["train", "--config", &cfg, "--ckpt-dir", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite") || stderr(&out).contains("NaN") || stderr(&out).contains("inf"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_at_high_precision() {
    let out = cli(&["gradcheck", "--tolerance", "1e-4"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(value(&text, "failed"), "0");
    for block in ["ghost-2d", "dfc", "ghostv2", "partial-faster", "mstcn-block-ghost", "dctcn-block-ghost", "resnet-block-ghost"] {
        assert!(text.contains(&format!("block={block} status=pass")), "{block}");
    }
}

#[test]
fn impossible_tolerance_fails_gradcheck() {
    let out = cli(&["--precision", "standard", "gradcheck", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stdout(&out).contains("status=fail"));
}

#[test]
fn gen_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let smoke = repo("configs/smoke.json");
    let out = cli(&["gen-data", "--config", smoke.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = RunConfig::load(&smoke).unwrap();
    for (split, name) in [(Split::Train, "train"), (Split::Val, "val")] {
        let imported = import_dataset(dir.path(), name).unwrap();
        assert_eq!(imported, Dataset::generate(&cfg.data, split).unwrap());
    }
}

#[test]
fn schema_matches_shipped_defaults() {
    let out = cli(&["schema"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), fs::read_to_string(repo("configs/schema.json")).unwrap());
}
