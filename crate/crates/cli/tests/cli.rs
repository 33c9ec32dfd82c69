//! End-to-end checks of the command-line surface: exit codes, artifacts
//! and run-to-run reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn teprompt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teprompt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_run_args<'a>(out_dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--out",
        out_dir,
        "--seed",
        "7",
        "--num-train",
        "150",
        "--num-test",
        "30",
        "--epochs",
        "2",
        "--learning-rate",
        "1e-3",
        "--batch-size",
        "16",
        "--d-h",
        "16",
        "--layers",
        "1",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn prepare_writes_split_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_str = out.to_str().unwrap();

    let result = teprompt(&{
        let mut a = vec!["prepare"];
        a.extend(small_run_args(out_str, &[]));
        a
    });
    assert_success(&result);

    for file in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"] {
        assert!(out.join("corpus").join(file).exists(), "{file} missing");
    }
    assert!(out.join("resolved_config.toml").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("corpus/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["train"]["total"], 150);
    assert_eq!(manifest["test"]["total"], 30);

    // Re-running over the same inputs reproduces the manifest bytes.
    let before = std::fs::read(out.join("corpus/manifest.json")).unwrap();
    let rerun = teprompt(&{
        let mut a = vec!["prepare"];
        a.extend(small_run_args(out_str, &[]));
        a
    });
    assert_success(&rerun);
    let after = std::fs::read(out.join("corpus/manifest.json")).unwrap();
    assert_eq!(before, after);
}

fn run_pipeline(out: &Path) {
    let out_str = out.to_str().unwrap();
    let prepare = teprompt(&{
        let mut a = vec!["prepare"];
        a.extend(small_run_args(out_str, &[]));
        a
    });
    assert_success(&prepare);
    let train = teprompt(&{
        let mut a = vec!["train"];
        a.extend(small_run_args(out_str, &[]));
        a
    });
    assert_success(&train);
}

#[test]
fn train_then_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_pipeline(&out);

    assert!(out.join("checkpoint/model.json").exists());
    assert!(out.join("training_log.jsonl").exists());
    assert!(out.join("answer_spaces.txt").exists());

    let header = String::from_utf8_lossy(
        &teprompt(&{
            let mut a = vec!["train"];
            a.extend(small_run_args(out.to_str().unwrap(), &[]));
            a
        })
        .stdout,
    )
    .to_string();
    assert!(header.contains("beta 0.3"), "{header}");
    assert!(header.contains("gamma 0.4"), "{header}");

    let eval = teprompt(&["evaluate", "--out", out.to_str().unwrap()]);
    assert_success(&eval);
    let report_path = out.join("evaluation/report.json");
    assert!(report_path.exists());
    // The emitted report parses back through the report schema.
    let report: teprompt_core::eval::EvaluationReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.test_size, 30);
}

#[test]
fn rerun_from_resolved_config_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    run_pipeline(&out_a);

    // Replay from the resolved config into a different directory.
    let resolved = std::fs::read_to_string(out_a.join("resolved_config.toml")).unwrap();
    let out_b = dir.path().join("b");
    let replayed = resolved.replace(
        &format!("output_dir = \"{}\"", out_a.display()),
        &format!("output_dir = \"{}\"", out_b.display()),
    );
    assert_ne!(resolved, replayed, "output_dir must be rewritten");
    let config_path = dir.path().join("replay.toml");
    std::fs::write(&config_path, replayed).unwrap();

    let prepare = teprompt(&["prepare", "--config", config_path.to_str().unwrap()]);
    assert_success(&prepare);
    let train = teprompt(&["train", "--config", config_path.to_str().unwrap()]);
    assert_success(&train);

    for file in [
        "corpus/train.jsonl",
        "corpus/test.jsonl",
        "training_log.jsonl",
        "checkpoint/backbone.weights",
        "checkpoint/fusion.weights",
    ] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn inspect_prints_head_tables_and_dumps_states() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_pipeline(&out);
    let out_str = out.to_str().unwrap();

    let inspect = teprompt(&[
        "inspect",
        "--out",
        out_str,
        "--arg1",
        "the committee approved the plan",
        "--arg2",
        "as a direct consequence the suppliers cut the budget",
    ]);
    assert_success(&inspect);
    let text = String::from_utf8_lossy(&inspect.stdout).to_string();
    assert!(text.contains("relation head (16 answers)"), "{text}");
    assert!(text.contains("sense-aggregated relation probabilities"), "{text}");
    assert!(text.contains("predicted sense:"), "{text}");
    let states = out.join("inspect/states.csv");
    assert!(states.exists());
    let csv = std::fs::read_to_string(&states).unwrap();
    assert!(csv.starts_with("dim,raw_mask_state,fused_state"));

    // Same input twice produces identical output.
    let again = teprompt(&[
        "inspect",
        "--out",
        out_str,
        "--arg1",
        "the committee approved the plan",
        "--arg2",
        "as a direct consequence the suppliers cut the budget",
    ]);
    assert_eq!(inspect.stdout, again.stdout);

    let by_id = teprompt(&["inspect", "--out", out_str, "--id", "syn-test-00001"]);
    assert_success(&by_id);
    assert!(String::from_utf8_lossy(&by_id.stdout).contains("syn-test-00001"));
}

#[test]
fn f64_precision_flows_from_config_to_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_str = out.to_str().unwrap();
    let prepare = teprompt(&{
        let mut a = vec!["prepare"];
        a.extend(small_run_args(out_str, &["--precision", "f64"]));
        a
    });
    assert_success(&prepare);
    let train = teprompt(&{
        let mut a = vec!["train"];
        a.extend(small_run_args(out_str, &["--precision", "f64"]));
        a
    });
    assert_success(&train);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("checkpoint/model.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["dtype"], "f64");
    // Evaluation dispatches on the stored dtype.
    let eval = teprompt(&["evaluate", "--out", out_str]);
    assert_success(&eval);
}

#[test]
fn invalid_variant_is_usage_error_listing_all_nine() {
    let dir = tempfile::tempdir().unwrap();
    let out = teprompt(&[
        "train",
        "--out",
        dir.path().to_str().unwrap(),
        "--variant",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    for name in [
        "teprompt",
        "drr-only",
        "ssc-only",
        "acp-only",
        "teprompt-ssc-head",
        "teprompt-acp-head",
        "teprompt-no-gate",
        "drr-plus-ssc",
        "drr-plus-acp",
    ] {
        assert!(stderr.contains(name), "{name} not listed in: {stderr}");
    }
}

#[test]
fn missing_checkpoint_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_str = dir.path().to_str().unwrap();
    let prepare = teprompt(&{
        let mut a = vec!["prepare"];
        a.extend(small_run_args(out_str, &[]));
        a
    });
    assert_success(&prepare);
    let eval = teprompt(&["evaluate", "--out", out_str]);
    assert_eq!(eval.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&eval.stderr).contains("checkpoint"));
}

#[test]
fn bad_corpus_record_reports_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(
        &corpus,
        "{\"arg1\":\"a\",\"arg2\":\"b\",\"sense\":\"Cause\",\"connective\":\"so\",\"section\":2,\"id\":\"x\"}\n",
    )
    .unwrap();
    let out = teprompt(&[
        "prepare",
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(stderr.contains("Cause"), "{stderr}");
    assert!(stderr.contains("line 1"), "{stderr}");
}

#[test]
fn file_corpus_manifest_carries_reference_check() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("tiny.jsonl");
    std::fs::write(
        &corpus,
        concat!(
            "{\"arg1\":\"one side\",\"arg2\":\"other side\",\"sense\":\"Expansion\",\"connective\":\"and\",\"section\":2,\"id\":\"a\"}\n",
            "{\"arg1\":\"one side\",\"arg2\":\"other side\",\"sense\":\"Temporal\",\"connective\":\"then\",\"section\":21,\"id\":\"b\"}\n",
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let result = teprompt(&[
        "prepare",
        "--out",
        out.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
    ]);
    assert_success(&result);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("corpus/manifest.json")).unwrap())
            .unwrap();
    // A two-instance file is nothing like the standard split statistics;
    // the check must be present, negative and non-fatal.
    assert_eq!(manifest["reference_check"]["matches"], false);
    assert!(!manifest["reference_check"]["mismatches"]
        .as_array()
        .unwrap().is_empty());
}

#[test]
fn train_without_prepare_points_at_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let out = teprompt(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prepare"));
}
