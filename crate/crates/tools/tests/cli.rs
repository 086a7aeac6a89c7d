//! End-to-end tests of the `quadtrack` binary: exit codes, usage handling,
//! deterministic gradcheck output, and offline scoring.

use std::path::Path;
use std::process::{Command, Output};

use quadtrack_core::BoundingBox;
use quadtrack_core::Tensor;
use quadtrack_tools::dataset::write_boxes;
use quadtrack_tools::pnm;
use quadtrack_tools::testutil::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quadtrack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn quadtrack")
}

fn write_sequence(dir: &Path, n: usize) -> Vec<BoundingBox> {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut boxes = Vec::new();
    for i in 0..n {
        let f = Tensor::from_fn([1, 3, 64, 64], |_, c, y, x| {
            ((c * 7 + y * 3 + x * 5 + i) % 19) as f32 / 19.0
        });
        pnm::write_p6(&dir.join("img").join(format!("{:04}.ppm", i + 1)), &f).unwrap();
        boxes.push(BoundingBox::new(10.0 + i as f64, 12.0, 16.0, 14.0).unwrap());
    }
    let gt: String = boxes
        .iter()
        .map(|b| format!("{},{},{},{}\n", b.x + 1.0, b.y + 1.0, b.w, b.h))
        .collect();
    std::fs::write(dir.join("groundtruth_rect.txt"), gt).unwrap();
    boxes
}

#[test]
fn no_args_is_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn gradcheck_is_deterministic_and_passes() {
    let a = run(&["gradcheck", "--seed", "7"]);
    let b = run(&["gradcheck", "--seed", "7"]);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stdout)
    );
    assert_eq!(
        a.stdout, b.stdout,
        "gradcheck table must be identical for one seed"
    );
    let table = String::from_utf8_lossy(&a.stdout);
    assert!(table.contains("PASS") && !table.contains("FAIL"), "{table}");
}

#[test]
fn gradcheck_impossible_tolerance_exits_numeric_failure() {
    let out = run(&["gradcheck", "--seed", "7", "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn missing_data_is_data_error() {
    let tmp = TempDir::new("cli-missing");
    let cfg = tmp.path().join("t.cfg");
    std::fs::write(&cfg, "epochs = 1\n").unwrap();
    let out = run(&[
        "train",
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("m.qdnt").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_model_file_is_data_error() {
    let tmp = TempDir::new("cli-badmodel");
    let model = tmp.path().join("m.qdnt");
    std::fs::write(&model, b"not a model").unwrap();
    let seq = tmp.path().join("seq");
    write_sequence(&seq, 2);
    let out = run(&[
        "track",
        "--model",
        model.to_str().unwrap(),
        "--seq",
        seq.to_str().unwrap(),
        "--out",
        tmp.path().join("b.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn offline_eval_of_oracle_predictions_scores_one() {
    let tmp = TempDir::new("cli-offline");
    let seq = tmp.path().join("seq");
    let boxes = write_sequence(&seq, 3);
    let pred = tmp.path().join("pred.txt");
    write_boxes(&pred, &boxes).unwrap();
    let report = tmp.path().join("rep.txt");
    let out = run(&[
        "eval",
        "--protocol",
        "ope",
        "--data",
        seq.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("precision_at_20: 1.000000"), "{text}");
    assert!(text.contains("success_at_0_5: 1.000000"), "{text}");
}

#[test]
fn offline_eval_requires_ope() {
    let tmp = TempDir::new("cli-offline2");
    let seq = tmp.path().join("seq");
    let boxes = write_sequence(&seq, 2);
    let pred = tmp.path().join("pred.txt");
    write_boxes(&pred, &boxes).unwrap();
    let out = run(&[
        "eval",
        "--protocol",
        "sre",
        "--data",
        seq.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
        "--out",
        tmp.path().join("r.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_without_model_or_pred_is_usage_error() {
    let tmp = TempDir::new("cli-nomodel");
    let seq = tmp.path().join("seq");
    write_sequence(&seq, 2);
    let out = run(&[
        "eval",
        "--protocol",
        "ope",
        "--data",
        seq.to_str().unwrap(),
        "--out",
        tmp.path().join("r.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
