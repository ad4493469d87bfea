use std::fs;
use std::process::Command;

use tempfile::tempdir;

fn covomix() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covomix"))
}

#[test]
fn exit_codes_follow_the_error_class() {
    let root = tempdir().unwrap();
    let bad = covomix().arg("no-such-command").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let bad = covomix()
        .args(["prepare", "--set", "lr=-1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let data = root.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(
        data.join("x.jsonl"),
        "{\"speaker\": \"a\", \"start\": 0, \"end\": 1, \"text\": \"hi\"}\n",
    )
    .unwrap();
    let missing_wav = covomix()
        .args(["prepare", "--data-dir"])
        .arg(&data)
        .arg("--work-dir")
        .arg(root.path().join("work"))
        .output()
        .unwrap();
    assert_eq!(
        missing_wav.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&missing_wav.stderr)
    );

    let (h, r) = (root.path().join("h"), root.path().join("r"));
    fs::create_dir_all(&h).unwrap();
    fs::create_dir_all(&r).unwrap();
    let empty = covomix()
        .args(["eval", "--hyp"])
        .arg(&h)
        .arg("--ref")
        .arg(&r)
        .arg("--out")
        .arg(root.path().join("out"))
        .env("COVOMIX_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn toy_corpus_then_prepare_via_the_binary() {
    let root = tempdir().unwrap();
    let data = root.path().join("data");
    let ok = covomix()
        .args(["toy-corpus", "--short", "--recordings", "2", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(ok.status.success());
    let cfg = root.path().join("run.conf");
    fs::write(
        &cfg,
        format!(
            "data_dir = {}\nwork_dir = {}\n",
            data.display(),
            root.path().join("w").display()
        ),
    )
    .unwrap();
    let out = covomix()
        .args(["prepare", "--threads", "1", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("dialogues         2"), "{stdout}");
}
