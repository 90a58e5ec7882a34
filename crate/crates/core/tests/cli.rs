use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ligru");

fn ligru(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn ligru")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.json");
    let text = format!(
        r#"{{
  "variant": "sligru",
  "T": 16,
  "hidden": 8,
  "batch": 4,
  "epochs": 4,
  "lr": 0.001,
  "seed": 3,
  "metrics_path": "tiny.csv"{extra}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn desk_preset_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ligru(&["run", "--preset", "desk", "--seed", "1", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("metrics-sligru.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "epoch,mse,eta,gamma1,uz_norm,uh_norm,grad_ratio,exploded"
    );
    assert_eq!(text.lines().count(), 301);
    assert!(dir
        .path()
        .join("checkpoint-sligru")
        .join("manifest.txt")
        .exists());
}

#[test]
fn config_run_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("o");
    let o = ligru(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(out.join("tiny.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 5);

    let o = ligru(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("tiny.csv")).unwrap(), first);

    let o = ligru(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(out.join("tiny.csv")).unwrap(), first);
}

#[test]
fn malformed_config_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"variant\": \"sligru\",\n  \"T\": 16,,\n}").unwrap();
    let o = ligru(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    let missing = dir.path().join("missing.json");
    std::fs::write(&missing, r#"{"variant": "sligru", "T": 16}"#).unwrap();
    assert_eq!(
        ligru(&["run", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let cfg = tiny_config(dir.path(), ",\n  \"hiden\": 3");
    assert_eq!(ligru(&["run", "--config", &cfg]).status.code(), Some(2));

    assert_eq!(ligru(&["run", "--variant", "lstm"]).status.code(), Some(2));
}

#[test]
fn explosion_is_a_successful_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("boom.json");
    std::fs::write(
        &path,
        r#"{"variant": {"activation": "relu", "recurrent_norm": "none", "feedforward_norm": "none"},
            "T": 10, "hidden": 6, "batch": 4, "epochs": 50, "lr": 1e12, "seed": 1, "metrics_path": "boom.csv"}"#,
    )
    .unwrap();
    let o = ligru(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("exploded"));
    let text = std::fs::read_to_string(dir.path().join("boom.csv")).unwrap();
    assert!(text.lines().last().unwrap().ends_with(",1"));
}

#[test]
fn matrix_writes_five_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("m");
    let o = ligru(&["matrix", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["ligru", "sligru", "sine", "gc-wd", "sor"] {
        let text = std::fs::read_to_string(out.join(format!("metrics-{name}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 5, "{name}");
    }
}

#[test]
fn bench_writes_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = ligru(&["bench", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "T,batch,hidden,impl,mean_ms,std_ms");
    assert_eq!(lines.len(), 1 + 2 * 6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("R^2"));
}
