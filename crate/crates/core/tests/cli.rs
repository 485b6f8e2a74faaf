use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use epiconv::checkpoint::load_checkpoint;

const EPOCHS: usize = 3;

fn epiconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epiconv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Trained {
    _dir: tempfile::TempDir,
    out: PathBuf,
    stdout: String,
}

fn trained() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let epochs = EPOCHS.to_string();
        let o = epiconv(&[
            "train",
            "--synthetic",
            "--synthetic-per-class",
            "40",
            "--job",
            "binary",
            "--epochs",
            &epochs,
            "--seed",
            "3",
            "--batch-size",
            "16",
            "--out",
            path_str(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        Trained {
            _dir: dir,
            out,
            stdout: String::from_utf8(o.stdout).unwrap(),
        }
    })
}

#[test]
fn loss_log_matches_checkpointed_epoch() {
    let t = trained();
    let losses = fs::read_to_string(t.out.join("losses.csv")).unwrap();
    let mut lines = losses.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss"));
    let rows: Vec<(usize, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 3);
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), EPOCHS);
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        (1..=EPOCHS).collect::<Vec<_>>()
    );
    let mut best = rows[0];
    for &r in &rows[1..] {
        if r.1 < best.1 {
            best = r;
        }
    }
    let ckpt = load_checkpoint(t.out.join("model.ckpt")).unwrap();
    let meta = ckpt.training.expect("training metadata");
    assert_eq!(meta.best_epoch, best.0);
    assert_eq!(meta.best_val_loss, best.1);
    assert!(t.stdout.contains(&format!("best epoch {}", best.0)));
}

#[test]
fn eval_on_test_split_reproduces_training_report() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let o = epiconv(&[
        "eval",
        "--model",
        path_str(&t.out.join("model.ckpt")),
        "--data",
        path_str(&t.out.join("test_split.csv")),
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.txt", "report.json"] {
        assert_eq!(
            fs::read_to_string(dir.path().join(f)).unwrap(),
            fs::read_to_string(t.out.join(f)).unwrap(),
            "{f}"
        );
    }
    let text = fs::read_to_string(t.out.join("report.txt")).unwrap();
    assert!(t.stdout.ends_with(&text));
}

#[test]
fn report_json_lists_classes_then_average() {
    let t = trained();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.out.join("report.json")).unwrap()).unwrap();
    let rows = json.as_array().unwrap();
    let classes: Vec<&str> = rows.iter().map(|r| r["class"].as_str().unwrap()).collect();
    assert_eq!(classes, ["healthy", "seizure", "average"]);
    for r in rows {
        for k in ["specificity", "sensitivity", "f1"] {
            let v = r[k].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{k} = {v}");
        }
    }
    let support: u64 = rows[..2]
        .iter()
        .map(|r| r["support"].as_u64().unwrap())
        .sum();
    assert_eq!(rows[2]["support"].as_u64().unwrap(), support);
}

#[test]
fn eval_rejects_a_mismatched_job() {
    let t = trained();
    let o = epiconv(&[
        "eval",
        "--model",
        path_str(&t.out.join("model.ckpt")),
        "--data",
        path_str(&t.out.join("test_split.csv")),
        "--job",
        "multi",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("binary"));
}

#[test]
fn eval_of_a_single_row_has_support_one() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let full = fs::read_to_string(t.out.join("test_split.csv")).unwrap();
    let one: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
    let data = dir.path().join("one.csv");
    fs::write(&data, one).unwrap();
    let o = epiconv(&[
        "eval",
        "--model",
        path_str(&t.out.join("model.ckpt")),
        "--data",
        path_str(&data),
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().last().unwrap()["support"], 1);
}

fn unlabeled_from_test_split(t: &Trained, rows: usize) -> String {
    let full = fs::read_to_string(t.out.join("test_split.csv")).unwrap();
    full.lines()
        .take(rows + 1)
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.pop();
            format!("{}\n", f.join(","))
        })
        .collect()
}

#[test]
fn predict_emits_one_line_per_row_with_normalised_probabilities() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(&input, unlabeled_from_test_split(t, 3)).unwrap();
    let o = epiconv(&[
        "predict",
        "--model",
        path_str(&t.out.join("model.ckpt")),
        "--input",
        path_str(&input),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 4, "{line}");
        assert!(["healthy", "seizure"].contains(&f[1]));
        let probs: Vec<f64> = f[2..].iter().map(|v| v.parse().unwrap()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let argmax = if probs[1] > probs[0] {
            "seizure"
        } else {
            "healthy"
        };
        assert_eq!(f[1], argmax);
    }
}

#[test]
fn predict_reports_the_malformed_line() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let mut body = unlabeled_from_test_split(t, 2);
    let short: Vec<String> = std::iter::once("bad".to_string())
        .chain((0..177).map(|i| i.to_string()))
        .collect();
    body.push_str(&short.join(","));
    body.push('\n');
    let input = dir.path().join("in.csv");
    fs::write(&input, body).unwrap();
    let o = epiconv(&[
        "predict",
        "--model",
        path_str(&t.out.join("model.ckpt")),
        "--input",
        path_str(&input),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn train_with_missing_data_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = epiconv(&[
        "train",
        "--data",
        path_str(&dir.path().join("absent.csv")),
        "--epochs",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert!(!o.status.success());
    assert!(!out.join("model.ckpt").exists());
    assert!(!out.join("losses.csv").exists());
}

#[test]
fn five_class_lenet_run_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    let o = epiconv(&[
        "train",
        "--synthetic",
        "--synthetic-per-class",
        "30",
        "--job",
        "multi",
        "--arch",
        "lenet",
        "--epochs",
        "1",
        "--seed",
        "1",
        "--out",
        path_str(&synth),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // The written test split is itself a valid training input.
    let csv = synth.join("test_split.csv");
    let mut rows = fs::read_to_string(&csv).unwrap();
    let extra = rows.clone();
    for _ in 0..5 {
        rows.extend(extra.lines().skip(1).map(|l| format!("{l}\n")));
    }
    let data = dir.path().join("data.csv");
    fs::write(&data, rows).unwrap();
    let out = dir.path().join("run");
    let o = epiconv(&[
        "train",
        "--data",
        path_str(&data),
        "--job",
        "multi",
        "--arch",
        "lenet",
        "--epochs",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let classes: Vec<&str> = json
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["class"].as_str().unwrap())
        .collect();
    assert_eq!(classes, ["Z", "O", "N", "D", "S", "average"]);
}
