//! Drives the `aben` binary end to end on synthetic scenes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn aben(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aben")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("scenes");
    let o = aben(&["synth", "--out", out.to_str().unwrap(), "--count", &count.to_string()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("scenes.jsonl")
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let text = r#"{"data": {"input": "scenes/scenes.jsonl"},
            "model": {"channels": 4, "hidden": 8, "layers": 1, "context": 2, "embedding_dim": 6},
            "training": {"epochs": 3, "batch_size": 4, "max_len": 8},
            "inference": {"max_len": 8},
            "output_dir": "run"}"#;
    fs::write(&path, text).unwrap();
    path
}

fn epsilons(log: &Path) -> Vec<f64> {
    fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epsilon"].as_f64().unwrap())
        .collect()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&aben(&[])), 1);
    assert_eq!(code(&aben(&["prepare-data", "--bogus"])), 1);
    assert_eq!(code(&aben(&["train", "--config", "c.json", "--mode", "beam"])), 1);
    assert_eq!(code(&aben(&["--help"])), 0);
}

#[test]
fn prepare_data_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth(dir.path(), 10);
    let out = dir.path().join("prep");
    let ok = aben(&["prepare-data", "--input", records.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("8/1/1"), "{}", stdout(&ok));
    assert!(out.join("train.jsonl").exists() && out.join("manifest.json").exists());

    let mut text = fs::read_to_string(&records).unwrap();
    let mut bad: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    bad["target"] = serde_json::json!([0, 0, 5000, 10]);
    text.push_str(&format!("{bad}\n"));
    fs::write(&records, text).unwrap();
    let rejected = dir.path().join("rejected");
    let o = aben(&["prepare-data", "--input", records.to_str().unwrap(), "--out", rejected.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(rejected.join("validation_report.json")).unwrap()).unwrap();
    assert_eq!(report["rejected"].as_array().unwrap().len(), 1);

    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&aben(&["prepare-data", "--input", missing.to_str().unwrap(), "--out", out.to_str().unwrap()])), 3);
    assert_eq!(code(&aben(&["prepare-data", "--input", records.to_str().unwrap(), "--out", out.to_str().unwrap(), "--ratios", "0.5,0.5"])), 1);
}

#[test]
fn train_evaluate_generate() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 20);
    let config = write_config(dir.path());
    let cfg = config.to_str().unwrap();
    let run = dir.path().join("run");

    let o = aben(&["train", "--config", cfg, "--mode", "ss", "--epochs", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(epsilons(&run.join("train_log.jsonl")), [1.0, 0.75, 0.5, 0.25]);
    let copied: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(copied["training"]["mode"], "ss");
    assert_eq!(copied["training"]["epochs"], 4);
    assert!(run.join("manifest.json").exists());
    let first_log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();

    let again = dir.path().join("again");
    assert_eq!(code(&aben(&["train", "--config", cfg, "--mode", "ss", "--epochs", "4", "--out", again.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(again.join("train_log.jsonl")).unwrap(), first_log);

    let tf = dir.path().join("tf");
    assert_eq!(code(&aben(&["train", "--config", cfg, "--mode", "tf", "--out", tf.to_str().unwrap()])), 0);
    assert!(epsilons(&tf.join("train_log.jsonl")).iter().all(|&e| e == 1.0));

    let best = run.join("checkpoints/best");
    let eval_dir = dir.path().join("eval");
    let o = aben(&["evaluate", "--checkpoint", best.to_str().unwrap(), "--split", "test", "--runs", "1", "--out", eval_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let header = stdout(&o).lines().next().unwrap().to_owned();
    let columns: Vec<&str> = header.split('|').skip(1).map(str::trim).collect();
    assert_eq!(columns, ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE", "METEOR", "CIDEr"]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    for name in columns {
        assert_eq!(metrics[name]["std"], 0.0);
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("manifest.json")).unwrap()).unwrap();
    let raw = manifest["raw_scores"][0]["bleu"][0].as_f64().unwrap();
    assert!((metrics["BLEU-1"]["mean"].as_f64().unwrap() - 100.0 * raw).abs() < 1e-9);

    let pair = aben(&[
        "evaluate",
        "--checkpoint",
        best.to_str().unwrap(),
        run.join("checkpoints/last").to_str().unwrap(),
        "--out",
        dir.path().join("eval2").to_str().unwrap(),
    ]);
    assert_eq!(code(&pair), 0);

    let missing = dir.path().join("nowhere");
    assert_eq!(code(&aben(&["evaluate", "--checkpoint", missing.to_str().unwrap()])), 3);

    let scenes = dir.path().join("scenes/scenes.jsonl");
    let o = aben(&["generate", "--checkpoint", best.to_str().unwrap(), "--scene", scenes.to_str().unwrap(), "--index", "2"]);
    assert_eq!(code(&o), 0);
    let sentence = stdout(&o).trim().to_owned();

    let att = dir.path().join("attention");
    let o = aben(&[
        "inspect-attention",
        "--checkpoint",
        best.to_str().unwrap(),
        "--scene",
        scenes.to_str().unwrap(),
        "--index",
        "2",
        "--out",
        att.to_str().unwrap(),
        "--max-len",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(att.join("result.json")).unwrap()).unwrap();
    let steps = result["steps"].as_u64().unwrap() as usize;
    let pngs = fs::read_dir(&att).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("step_")).count();
    assert_eq!(pngs, steps);
    assert_eq!(fs::read_to_string(att.join("linguistic_attention.csv")).unwrap().lines().count(), 1 + 2 * steps);
    assert!(att.join("manifest.json").exists());
    if result["truncated"] == true {
        assert_eq!(result["status"], 1);
        assert!(sentence.starts_with(result["sentence"].as_str().unwrap()));
    } else {
        assert_eq!(result["status"], 0);
    }
    assert_eq!(code(&aben(&["generate", "--checkpoint", best.to_str().unwrap(), "--scene", scenes.to_str().unwrap(), "--index", "99"])), 2);
}

#[test]
fn several_seeds_get_separate_runs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 12);
    let config = write_config(dir.path());
    let o = aben(&["train", "--config", config.to_str().unwrap(), "--epochs", "1", "--seed", "1,2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["seed_1", "seed_2"] {
        assert!(dir.path().join("run").join(s).join("checkpoints/last/weights.bin").exists());
    }
}
