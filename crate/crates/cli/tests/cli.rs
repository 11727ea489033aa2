#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::write_pipeline_fixture;

fn occode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occode")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = occode(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_pipeline_fixture(dir.path());
    let cfg = s(&fx.config);
    let out = |name: &str| fx.out_dir.join(name);

    let summary = ok(&["prepare", "--config", cfg]);
    assert!(summary.contains("dropped=3"), "{summary}");
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["dropped"]["malformed_code"], 1);
    assert_eq!(prov["dropped"]["unknown_code"], 1);
    assert_eq!(prov["dropped"]["empty_text"], 1);
    assert_eq!(prov["kept"], 200);
    let train_csv = std::fs::read_to_string(out("train.csv")).unwrap();
    assert!(train_csv.starts_with("occ_text,hisco_1,hisco_2,hisco_3,hisco_4,hisco_5,lang,source,synthetic\n"));
    assert!(!train_csv.contains("Farmer"), "texts are lowercased");

    let log = ok(&["train", "--config", cfg, "--epochs", "3"]);
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.starts_with("epoch=") && l.contains(" saved=")));
    assert_eq!(std::fs::read_to_string(out("train_log.txt")).unwrap(), log);

    let table = ok(&["calibrate", "--config", cfg]);
    assert!(table.starts_with("Language"));
    for f in ["thresholds.json", "thresholds.txt", "language_info.json", "language_info.txt", "prediction_matrix.csv"] {
        assert!(out(f).exists(), "{f}");
    }

    let pred = ok(&["predict", "--config", cfg, "--input", s(&fx.inputs), "--fallback-top1"]);
    let calib: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out("thresholds.json")).unwrap()).unwrap();
    let f1_thr = calib["f1"]["All"]["threshold"].as_f64().unwrap();
    assert_eq!(pred.trim(), format!("threshold={f1_thr} rows={}", fx.input_rows));
    let csv = std::fs::read_to_string(out("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,text,lang,hisco_codes,probs"));
    assert!(lines.all(|l| !l.contains(",,")), "fallback gives every row a code");

    ok(&["evaluate", "--config", cfg]);
    for f in ["metrics.json", "per_code.csv", "trend.json", "ses_report.txt"] {
        assert!(out(f).exists(), "{f}");
    }

    ok(&["embed", "--config", cfg, "--pca"]);
    let emb = std::fs::read_to_string(out("embeddings.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap().split(',').count(), 2 + 64 + 2);

    ok(&["verify-draw", "--config", cfg, "--input", s(&fx.inputs), "--n", "50"]);
    assert_eq!(std::fs::read_to_string(out("review.csv")).unwrap().lines().count(), 51);

    ok(&["finetune", "--config", cfg, "--data", s(&out("val.csv")), "--epochs", "2"]);
    assert!(out("finetuned.occn").exists());
    assert_eq!(std::fs::read_to_string(out("finetune_log.txt")).unwrap().lines().count(), 2);
}

#[test]
fn prepare_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_pipeline_fixture(dir.path());
    let files = ["train.csv", "val.csv", "test.csv", "provenance.json"];
    ok(&["prepare", "--config", s(&fx.config)]);
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(fx.out_dir.join(f)).unwrap()).collect();
    ok(&["prepare", "--config", s(&fx.config)]);
    let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(fx.out_dir.join(f)).unwrap()).collect();
    assert_eq!(first, second);

    ok(&["prepare", "--config", s(&fx.config), "--seed", "6"]);
    assert_ne!(std::fs::read(fx.out_dir.join("train.csv")).unwrap(), first[0]);
}

#[test]
fn calibrating_a_matrix_puts_recall_at_the_lowest_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(
        &m,
        "lang,targets,61110,64100,22610\n\
         da,61110,0.9,0.2,0.05\n\
         da,61110;64100,0.7,0.4,0.1\n\
         en,22610,0.3,0.1,0.6\n\
         en,64100,0.2,0.8,0.3\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    ok(&["calibrate", "--predictions", s(&m), "--out-dir", s(&out_dir)]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("thresholds.json")).unwrap()).unwrap();
    for lang in ["All", "da", "en"] {
        assert_eq!(v["recall"][lang]["threshold"], 0.01, "{lang}");
    }
    let text = std::fs::read_to_string(out_dir.join("thresholds.txt")).unwrap();
    assert!(text.lines().any(|l| l.contains("Recall") && l.trim_end().ends_with("0.01")));
}

#[test]
fn explicit_threshold_overrides_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_pipeline_fixture(dir.path());
    let cfg = s(&fx.config);
    ok(&["prepare", "--config", cfg]);
    ok(&["train", "--config", cfg, "--epochs", "1"]);
    let pred = ok(&["predict", "--config", cfg, "--input", s(&fx.inputs), "--threshold", "0.45"]);
    assert!(pred.starts_with("threshold=0.45 "), "{pred}");
    // Without a calibration file the default is 0.5.
    let pred = ok(&["predict", "--config", cfg, "--input", s(&fx.inputs)]);
    assert!(pred.starts_with("threshold=0.5 "), "{pred}");
}

fn category(out: &Output) -> (i32, String) {
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_pipeline_fixture(dir.path());

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    let (code, err) = category(&occode(&["prepare", "--config", s(&bad_cfg)]));
    assert_eq!(code, 2);
    assert!(err.starts_with("error category=config "), "{err}");

    let (code, _) = category(&occode(&["prepare", "--data", "/nonexistent.csv", "--label-space", s(&fx.labels)]));
    assert_eq!(code, 2);

    let (code, _) = category(&occode(&["predict", "--no-such-flag"]));
    assert_eq!(code, 2);

    let garbage = dir.path().join("garbage.occn");
    std::fs::write(&garbage, b"OCCN not really").unwrap();
    let (code, err) = category(&occode(&["embed", "--checkpoint", s(&garbage), "--data", s(&fx.raw)]));
    assert_eq!(code, 3, "{err}");
    assert!(err.starts_with("error category=data "));

    // An incomplete review: exit 5, and no score file left behind.
    let review = dir.path().join("review.csv");
    std::fs::write(
        &review,
        "id,text,lang,pred_codes,probs,verdict\na,farmer,en,61110,0.9,correct\nb,smith,en,61110,0.8,\n",
    )
    .unwrap();
    let score = dir.path().join("score.json");
    let (code, err) = category(&occode(&["verify-score", "--review", s(&review), "--output", s(&score)]));
    assert_eq!(code, 5);
    assert!(err.contains("category=annotation") && err.contains('b'), "{err}");
    assert!(!score.exists());
}

#[test]
fn failed_runs_remove_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_pipeline_fixture(dir.path());
    let cfg = s(&fx.config);
    ok(&["prepare", "--config", cfg]);
    // A learning rate this large overflows within the first epoch.
    let out = occode(&["train", "--config", cfg, "--epochs", "2", "--learning-rate", "1e30"]);
    let (code, err) = category(&out);
    assert_eq!(code, 4, "{err}");
    assert!(!fx.out_dir.join("model.occn").exists());
    assert!(!fx.out_dir.join("train_log.txt").exists());
}

#[test]
fn help_lists_every_flag() {
    let help = ok(&["predict", "--help"]);
    for flag in [
        "--checkpoint",
        "--input",
        "--threshold",
        "--calibration",
        "--fallback-top1",
        "--transliteration",
        "--output",
        "--config",
        "--out-dir",
        "--seed",
    ] {
        assert!(help.contains(flag), "{flag}");
    }
    let top = ok(&["--help"]);
    for cmd in
        ["prepare", "train", "calibrate", "predict", "evaluate", "embed", "finetune", "verify-draw", "verify-score"]
    {
        assert!(top.contains(cmd), "{cmd}");
    }
}
