use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gaitrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitrt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = gaitrt(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_prints_usage_and_fails() {
    let o = gaitrt(&["replay", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(err.contains("E_USAGE"));
    assert!(!gaitrt(&["frobnicate"]).status.success());
    assert!(gaitrt(&["--help"]).status.success());
}

#[test]
fn errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.dump");
    fs::write(&bad, b"garbage").unwrap();
    let o = gaitrt(&["replay", p(&bad), "--model", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[E_DUMP_FORMAT]"));

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[training]\nmodle = \"GRF\"\n").unwrap();
    let o = gaitrt(&["--config", p(&cfg), "generate", "--out", p(&dir.path().join("d"))]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[E_CONFIG]"));
}

#[test]
fn generate_train_dump_replay_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = "[cohort]\nn_subjects = 2\ntrials_per_subject = 1\ntrial_duration_s = 6.0\n\
                [session]\nsubject = \"S01\"\ntrial = \"T01\"\n[realtime]\nsmoothing_cutoff_hz = 0.0\n";
    let models = d.join("models");
    fs::create_dir_all(&models).unwrap();
    for (name, extra) in [
        ("GRF", "trees = 5\nrow_stride_ms = 50\nprotocol = \"inter\"\n"),
        ("W4", "trees = 5\nrow_stride_ms = 100\nprotocol = \"none\"\n"),
        ("M_5joint", "epochs = 2\nrow_stride_ms = 200\nprotocol = \"none\"\n"),
    ] {
        let cfg = d.join(format!("{name}.toml"));
        fs::write(&cfg, format!("{base}[training]\nmodel = \"{name}\"\n{extra}")).unwrap();
        if name == "GRF" {
            ok(&["--config", p(&cfg), "generate", "--out", p(&d.join("data"))]);
        }
        let text = ok(&[
            "--config",
            p(&cfg),
            "train",
            "--dataset",
            p(&d.join("data")),
            "--model",
            p(&models.join(format!("{name}.model"))),
            "--out",
            p(&d.join(format!("report_{name}"))),
        ]);
        if name == "GRF" {
            assert!(text.contains("fold=S01") && text.contains("aggregate"), "{text}");
            assert!(d.join("report_GRF/protocol.json").exists());
        }
    }
    let cfg = d.join("GRF.toml");
    let eval = ok(&["--config", p(&cfg), "eval", "--dataset", p(&d.join("data")), "--model", p(&models.join("W4.model"))]);
    assert_eq!(eval.lines().filter(|l| l.starts_with("output=")).count(), 5);

    ok(&["--config", p(&cfg), "dump", "--dataset", p(&d.join("data")), "--out", p(&d.join("s.dump"))]);
    let stdout = ok(&[
        "--config",
        p(&cfg),
        "replay",
        p(&d.join("s.dump")),
        "--model",
        p(&models),
        "--out",
        p(&d.join("logs")),
        "--as-fast-as-possible",
    ]);
    assert!(stdout.contains("moments_done_ms"));
    let table = ok(&["--config", p(&cfg), "report", p(&d.join("logs")), "--dataset", p(&d.join("data"))]);
    assert_eq!(table.lines().count(), 12);
    assert!(d.join("logs/profiles.csv").exists());
}
