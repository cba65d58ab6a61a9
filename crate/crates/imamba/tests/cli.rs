//! The `imamba` binary end to end: outputs, files and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use imamba::core::config::ModelConfig;
use imamba::core::Tensor;
use imamba::{imtn, weights};

fn imamba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imamba")).args(args).env("IM_THREADS", "1").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn analyze_reports_totals_in_json() {
    let o = imamba(&["analyze", "--preset", "T", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let expected = imamba::core::analyzer::count_params(&ModelConfig::preset("T").unwrap()).unwrap();
    assert_eq!(doc["total_params"], expected);
    assert_eq!(doc["enumerated_params"], expected);
    assert_eq!(doc["resolution"], 224);
}

#[test]
fn analyze_text_states_the_enumeration() {
    let o = imamba(&["analyze", "--preset", "T-plain-ss2d", "--resolution", "64"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("(matches)"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&imamba(&["analyze", "--preset", "XL"])), 2);
    assert_eq!(code(&imamba(&["analyze", "--resolution", "100"])), 2);
    assert_eq!(code(&imamba(&["no-such-verb"])), 2);
    assert_eq!(code(&imamba(&["scan-check", "--trials", "many"])), 2);
}

#[test]
fn scan_check_passes_and_fails_on_request() {
    let o = imamba(&["scan-check", "--trials", "50"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).trim_end().ends_with("PASS"));
    let o = imamba(&["scan-check", "--trials", "50", "--perturb", "1e-3"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).trim_end().ends_with("FAIL"));
}

#[test]
fn scan_check_warns_when_nothing_ran() {
    let o = imamba(&["scan-check", "--trials", "0"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("warning: 0 trials"));
}

#[test]
fn gradcheck_passes() {
    let o = imamba(&["gradcheck", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["passed"], true);
    assert!(doc["entries"].as_array().unwrap().len() > 20);
}

#[test]
fn forward_writes_logits_that_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.imtn");
    let output = dir.path().join("logits.imtn");
    let x = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i * 31 % 113) as f32 / 56.0) - 1.0).unwrap();
    imtn::write(&input, &x).unwrap();
    let o = imamba(&[
        "forward",
        "--preset",
        "toy",
        "--seed",
        "4",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("stage 3 [2, 128, 1, 1]"), "{text}");
    assert!(text.contains("sample 1: class"));
    let model = imamba::core::model::Model::<f32>::new(ModelConfig::toy(4), 4).unwrap();
    assert_eq!(imtn::read(&output).unwrap(), model.forward(&x).unwrap());
}

#[test]
fn missing_input_file_exits_with_one() {
    let o = imamba(&["forward", "--input", "/nonexistent/x.imtn"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/x.imtn"));
}

#[test]
fn train_toy_prints_csv_and_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = imamba(&["train-toy", "--epochs", "2", "--samples", "64", "--batch-size", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,acc");
    assert_eq!(lines.len(), 3);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1].parse::<f64>().unwrap().is_finite());
        assert!((0.0..=1.0).contains(&fields[2].parse::<f64>().unwrap()));
    }
    let cfg = weights::read_config(out.join("config.json")).unwrap();
    assert_eq!(cfg, ModelConfig::preset("toy").unwrap());
    for epoch in 1..=2 {
        let path = imamba::cli::checkpoint_path(&out, epoch);
        weights::load_weights(&path, &cfg).unwrap();
    }
    assert!(!imamba::cli::checkpoint_path(&out, 3).exists());

    // the last checkpoint loads back into the forward verb
    let last = imamba::cli::checkpoint_path(&out, 2);
    let o = imamba(&["forward", "--config", out.join("config.json").to_str().unwrap(), "--weights", last.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
}

#[test]
fn checkpoints_refuse_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = imamba(&["train-toy", "--epochs", "1", "--samples", "8", "--batch-size", "8", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let ckpt = imamba::cli::checkpoint_path(&out, 1);
    let o = imamba(&["forward", "--preset", "toy-no-globalmixer", "--weights", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

fn pgm_count(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count()
}

#[test]
fn dump_features_writes_images_and_cosines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("features");
    let o = imamba(&["dump-features", "--stage", "1", "--block", "0", "--batch", "2", "--sample", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(pgm_count(&out), 32);
    let csv = std::fs::read_to_string(out.join("cosine.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("channel_a,channel_b,cosine"));
    assert_eq!(lines.count(), 32 * 31 / 2);
    let o = imamba(&["dump-features", "--stage", "9", "--out", out.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}

#[test]
fn bench_orders_requested_variants() {
    let o = imamba(&["bench", "--preset", "toy", "--preset", "toy-no-globalmixer", "--resolution", "32", "--repeats", "1"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("ordering (fastest first): "));
    assert!(last.contains("toy-no-globalmixer") && last.contains(" < "));
}
