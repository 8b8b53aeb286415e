use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lada(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lada"))
        .args(args)
        .env("LADA_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lada(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, seed: &str) {
    ok(&[
        "gen-synthetic",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--tasks",
        "3",
        "--classes-per-task",
        "3",
        "--dim",
        "16",
        "--train-per-class",
        "8",
        "--test-per-class",
        "4",
    ]);
}

#[test]
fn gen_synthetic_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    gen(&a, "4");
    gen(&b, "4");
    gen(&c, "5");
    for f in ["task_1_train.lse", "task_3_train.lse", "test.lse", "text.lse", "registry.json", "benchmark.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("test.lse")).unwrap(), fs::read(c.join("test.lse")).unwrap());
}

#[test]
fn default_generation_is_five_tasks_of_ten_classes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-synthetic", "--out", dir.path().to_str().unwrap()]);
    let registry: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("registry.json")).unwrap()).unwrap();
    let tasks = registry["tasks"].as_array().unwrap();
    assert_eq!(tasks.len(), 5);
    assert!(tasks.iter().all(|t| t["class_ids"].as_array().unwrap().len() == 10));
    // Header: magic, version, d.
    let text = fs::read(dir.path().join("text.lse")).unwrap();
    assert_eq!(u32::from_le_bytes(text[8..12].try_into().unwrap()), 64);
}

#[test]
fn zero_tasks_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lada(&["gen-synthetic", "--out", dir.path().to_str().unwrap(), "--tasks", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_train_eval_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "1");
    let cfg = data.join("benchmark.toml");
    let cfg = cfg.to_str().unwrap();

    let run = |out: &Path| {
        ok(&[
            "run-benchmark",
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
            "--set",
            "epochs=3",
            "--set",
            "lambda1=4",
        ])
    };
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    let stdout = run(&r1);
    assert!(stdout.starts_with("task,after_1,after_2,after_3\n"), "{stdout}");
    run(&r2);
    for f in ["summary.json", "matrix.csv", "eval/after_2.json", "checkpoints/after_3/tensors.bin"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(r1.join("summary.json")).unwrap();
    assert!(summary.contains("\"lambda1\": 4"), "{summary}");
    assert!(summary.contains("\"lambda2\": 4"), "{summary}");

    let ckpt = dir.path().join("ckpt");
    let out = ok(&[
        "train",
        "--config",
        cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tasks",
        "1",
        "--set",
        "epochs=1",
    ]);
    assert!(out.starts_with("task 0:"), "{out}");

    let report = dir.path().join("report.json");
    let json = ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--test",
        data.join("test.lse").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&report).unwrap(), json);
    assert!(json.contains("\"unseen_direct\""));

    let dump = ok(&["inspect", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(dump.contains("task 0: Learned, 3 classes, 3 blocks, 384 parameters"), "{dump}");
    assert!(dump.contains("task 2: Unseen"), "{dump}");
}

#[test]
fn errors_exit_nonzero_with_a_kind() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "2");
    let other = dir.path().join("other");
    ok(&[
        "gen-synthetic",
        "--out",
        other.to_str().unwrap(),
        "--dim",
        "12",
        "--tasks",
        "3",
        "--classes-per-task",
        "3",
    ]);

    let ckpt = dir.path().join("ckpt");
    ok(&[
        "train",
        "--config",
        data.join("benchmark.toml").to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tasks",
        "1",
        "--set",
        "epochs=0",
    ]);
    let out = lada(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--test",
        other.join("test.lse").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[shape]"), "{err}");

    fs::write(ckpt.join("tensors.bin"), b"xx").unwrap();
    let out = lada(&["inspect", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[integrity]"));

    let out = lada(&[
        "run-benchmark",
        "--config",
        data.join("benchmark.toml").to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
        "--set",
        "bogus=1",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}
