use std::path::Path;
use std::process::{Command, Output};

fn twinfdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinfdd")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SPEC: &str = r#"{
  "n_classes": 3,
  "runs_per_class": 3,
  "test_runs_per_class": 2,
  "run_len": 30,
  "n_features": 6,
  "archetypes": [{"kind": "step", "magnitude": 3.0}, {"kind": "drift", "magnitude": 3.0}],
  "noise_std": 1.0,
  "seed": 1,
  "window": 6,
  "stride": 3,
  "test_onset": 6,
  "features_per_class": 2
}"#;

const SMALL_MODEL: &str = "d_model = 8\nn_layers = 1\nheads = 2\nd_k = 4\nd_v = 4\nd_ff = 16\n";

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = twinfdd(&["train", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    for sub in ["synth", "ingest", "train", "eval", "gradcheck", "report"] {
        let o = twinfdd(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinfdd(&[
        "eval",
        "--checkpoint",
        p(&dir.path().join("nope.params")),
        "--data",
        p(dir.path()),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_spec_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, SPEC.replace("\"n_classes\": 3", "\"n_classes\": 4")).unwrap();
    let o = twinfdd(&["synth", "--spec", p(&spec), "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_default_passes_and_a_zero_tolerance_fails() {
    let o = twinfdd(&["gradcheck"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("PASS"), "{text}");
    let o = twinfdd(&["gradcheck", "--similarity", "bilinear", "--tolerance", "0"]);
    assert_eq!(code(&o), 1);
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, SPEC).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert_eq!(
            code(&twinfdd(&[
                "synth",
                "--spec",
                p(&spec),
                "--out",
                p(out),
                "--seed",
                seed
            ])),
            0
        );
    }
    assert_eq!(read_tree(&a), read_tree(&b));
    assert_ne!(read_tree(&a), read_tree(&c));
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("spec.json"), SPEC).unwrap();
    std::fs::write(root.join("model.kv"), SMALL_MODEL).unwrap();
    std::fs::write(
        root.join("train.json"),
        r#"{"epochs": 3, "learning_rate": 0.005, "batch_size": 8}"#,
    )
    .unwrap();
    let data = root.join("data");
    let run = root.join("run");
    let eval = root.join("eval");
    assert_eq!(
        code(&twinfdd(&[
            "synth",
            "--spec",
            p(&root.join("spec.json")),
            "--out",
            p(&data)
        ])),
        0
    );
    let o = twinfdd(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--model-config",
        p(&root.join("model.kv")),
        "--train-config",
        p(&root.join("train.json")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.params", "model.cfg", "history.json", "train_config.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 3);

    let o = twinfdd(&[
        "eval",
        "--checkpoint",
        p(&run.join("model.params")),
        "--data",
        p(&data),
        "--out",
        p(&eval),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(eval.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "class,precision,recall,f1,far,mar");
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[1].starts_with("Normal,") && lines[4].starts_with("macro,"));

    let report: twinfdd_cli::ReportDocument =
        serde_json::from_slice(&std::fs::read(eval.join("report.json")).unwrap()).unwrap();
    let preds = std::fs::read_to_string(eval.join("predictions.csv")).unwrap();
    let total: u64 = report.report.matrix.counts.iter().flatten().sum();
    assert_eq!(preds.lines().count() as u64, total + 1);
    assert_eq!(report.metadata.class_names, ["Normal", "1", "2"]);

    let o = twinfdd(&["report", "--input", p(&eval.join("report.json"))]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().next().unwrap().starts_with("Class"));
    assert!(table.contains("Average"));

    // a model config that disagrees with the dataset is rejected
    std::fs::write(root.join("wrong.kv"), "n_classes = 5\n").unwrap();
    let o = twinfdd(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&root.join("r2")),
        "--model-config",
        p(&root.join("wrong.kv")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_reference_table_is_rendered() {
    let dir = tempfile::tempdir().unwrap();
    let doc = twinfdd_cli::ReportDocument {
        metadata: twinfdd_cli::ReportMetadata {
            class_names: vec!["Normal".into(), "1".into()],
            dataset_id: "x".into(),
            model_config_hash: "y".into(),
            split: "test".into(),
        },
        report: twinfdd::report(&twinfdd::confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap()).unwrap(),
    };
    let path = dir.path().join("r.json");
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let o = twinfdd(&["report", "--input", p(&path), "--reference", "all_faults"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Ref F1"));
    assert_eq!(
        code(&twinfdd(&["report", "--input", p(&path), "--reference", "nope"])),
        1
    );
}
