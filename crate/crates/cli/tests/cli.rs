use std::path::Path;
use std::process::{Command, Output, Stdio};

use ciphertune::io::{read_labels, read_model, FeatureFile, RunReport};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ciphertune"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ciphertune")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth-data", "--classes", "4", "--dim", "8", "--n", "123", "--seed", "9", "--out", s(out)]);
    }
    for f in ["features.btft", "labels.btlb"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let labels = read_labels(&a.join("labels.btlb")).unwrap();
    assert_eq!(labels.labels.len(), 123);
    assert_eq!(labels.class_count, 4);
}

#[test]
fn dataset_flag_echoes_dataset_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("mnist", 10, 5, "0.1", 1024),
        ("cifar10", 10, 5, "0.1", 1024),
        ("facemask", 2, 10, "0.1", 512),
        ("dermamnist", 7, 12, "0.01", 512),
    ];
    for (name, k, epochs, lr, batch) in cases {
        let out = dir.path().join(name);
        let k = k.to_string();
        let stdout = ok(&[
            "train-plain", "--dataset", name, "--classes", &k, "--dim", "16", "--n", "200", "--out", s(&out),
        ]);
        let echo = stdout.lines().next().unwrap();
        assert_eq!(
            echo,
            format!("config: epochs {epochs}, lr {lr}, batch {batch}, refresh interval 1, seed 0, preset desk"),
            "{name}"
        );
    }
}

#[test]
fn explicit_flags_override_dataset_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "train-plain", "--dataset", "mnist", "--epochs", "2", "--batch", "64", "--lr", "0.5", "--n", "200", "--out",
        s(dir.path()),
    ]);
    assert!(stdout.starts_with("config: epochs 2, lr 0.5, batch 64,"), "{stdout}");
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["train-plain"]), 2, "missing --out");
    assert_eq!(code(&["train-plain", "--dataset", "imagenet", "--out", out]), 2);
    assert_eq!(code(&["train-plain", "--lr=-1", "--n", "100", "--out", out]), 2);
    assert_eq!(code(&["keygen", "--preset", "huge", "--out", out]), 4, "unknown scheme parameters");
    let missing = dir.path().join("missing.btft");
    assert_eq!(code(&["train-plain", "--features", s(&missing), "--labels", s(&missing), "--out", out]), 6);

    let junk = dir.path().join("junk.btft");
    std::fs::write(&junk, b"definitely not a feature file").unwrap();
    assert_eq!(code(&["infer", "--model", s(&junk), "--features", s(&junk)]), 3);
}

#[test]
fn train_plain_is_deterministic_and_infer_reproduces_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["train-plain", "--n", "400", "--batch", "64", "--separation", "1.5", "--seed", "4", "--out", s(out)]);
    }
    assert_eq!(std::fs::read(a.join("model.btmd")).unwrap(), std::fs::read(b.join("model.btmd")).unwrap());
    let report = RunReport::read(&a.join("report.json")).unwrap();
    let stdout = ok(&[
        "infer", "--model", s(&a.join("model.btmd")), "--features", s(&a.join("test-features.btft")), "--labels",
        s(&a.join("test-labels.btlb")),
    ]);
    assert_eq!(stdout.trim(), format!("80 rows, accuracy {:.4}", report.final_test_accuracy));
}

/// `train-local` on the small preset: model and report reproduce under the
/// same flags, and the saved model scores the saved test split exactly as
/// reported.
#[test]
fn train_local_reproduces_and_infer_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "train-local", "--preset", "toy", "--n", "150", "--batch", "32", "--epochs", "2", "--separation", "1.0",
            "--seed", "8", "--refresh-interval", "2", "--transcript", "--encrypted-infer", "--out", s(out),
        ]);
    }
    let model = std::fs::read(a.join("model.btmd")).unwrap();
    assert_eq!(model, std::fs::read(b.join("model.btmd")).unwrap());
    assert_eq!(std::fs::read(a.join("transcript.bttr")).unwrap(), std::fs::read(b.join("transcript.bttr")).unwrap());

    let strip = |p: &Path| {
        let mut r = RunReport::read(p).unwrap();
        r.training_wall_ms = 0;
        r.epochs.iter_mut().for_each(|e| e.wall_ms = 0);
        if let Some(o) = r.oracle.as_mut() {
            o.wall_ms = 0;
        }
        r
    };
    let report = strip(&a.join("report.json"));
    assert_eq!(report, strip(&b.join("report.json")));
    assert_eq!(report.mode, "local");
    assert_eq!(report.epochs.len(), 2);
    assert!(report.encrypted_infer_accuracy.is_some());
    assert!(report.oracle.as_ref().unwrap().max_weight_divergence < 0.05);

    let stdout = ok(&[
        "infer", "--model", s(&a.join("model.btmd")), "--features", s(&a.join("test-features.btft")), "--labels",
        s(&a.join("test-labels.btlb")), "--out", s(&dir.path().join("pred.btlb")),
    ]);
    assert_eq!(stdout.trim(), format!("30 rows, accuracy {:.4}", report.final_test_accuracy));
    assert_eq!(read_labels(&dir.path().join("pred.btlb")).unwrap().labels.len(), 30);

    let summary = ok(&["report", "--report", s(&a.join("report.json"))]);
    assert!(summary.contains("mode local: 90 train / 30 val / 30 test rows"), "{summary}");
    assert_eq!(read_model(&a.join("model.btmd")).unwrap().weights.rows(), 3);
}

/// Client and cloud as separate processes exchanging files.
#[test]
fn two_process_file_session() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (keys, session, state) = (p("keys"), p("session"), p("client"));
    ok(&["keygen", "--preset", "toy", "--seed", "2", "--out", s(&keys)]);
    let stdout = ok(&[
        "encrypt", "--keys", s(&keys), "--session", s(&session), "--out", s(&state), "--n", "120", "--batch", "32",
        "--epochs", "2", "--seed", "6",
    ]);
    assert!(stdout.contains("preset toy"), "{stdout}");

    let cloud = bin()
        .args(["train-cloud", "--session", s(&session), "--timeout", "120", "--out", s(&p("cloud.json"))])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    ok(&["validate", "--keys", s(&keys), "--state", s(&state), "--session", s(&session), "--timeout", "120"]);
    let cloud = cloud.wait_with_output().unwrap();
    assert!(cloud.status.success());

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("cloud.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 6);
    assert_eq!(summary["stats"]["forced_refreshes"], 6);
    assert_eq!(ciphertune::io::read_metrics(&state.join("metrics.jsonl")).unwrap().len(), 2);

    ok(&["decrypt-model", "--keys", s(&keys), "--state", s(&state), "--session", s(&session), "--out", s(&p("m.btmd"))]);
    let stdout = ok(&[
        "infer", "--model", s(&p("m.btmd")), "--features", s(&state.join("test-features.btft")), "--labels",
        s(&state.join("test-labels.btlb")),
    ]);
    assert!(stdout.starts_with("24 rows, accuracy"), "{stdout}");

    // The cloud's directory holds only ciphertext frames; the test split
    // stays with the client.
    for entry in std::fs::read_dir(&session).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(name.starts_with("msg-") && name.ends_with(".bin"), "{name}");
    }
    let test = FeatureFile::from_bytes(&std::fs::read(state.join("test-features.btft")).unwrap()).unwrap();
    assert_eq!(test.features.rows(), 24);

    // Keys from another seed cannot open this session's model.
    let other = p("other-keys");
    ok(&["keygen", "--preset", "toy", "--seed", "3", "--out", s(&other)]);
    let out = run(&["decrypt-model", "--keys", s(&other), "--state", s(&state), "--session", s(&session), "--out", s(&p("x"))]);
    assert!(!out.status.success() || {
        let m = read_model(&p("x")).unwrap();
        m.weights.max_abs() > 1e3
    });
}
