use std::path::Path;
use std::process::{Command, Output};

fn liveness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liveness"))
        .args(args)
        .env_remove("AG_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_data_counts_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let out = liveness(&[
        "gen-data",
        "--out",
        p(&data),
        "--per-kind",
        "2",
        "--val-per-kind",
        "0",
        "--test-per-kind",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 8 videos (2 live, 6 spoof)"));

    let out = liveness(&[
        "gen-data",
        "--out",
        p(&data),
        "--per-kind",
        "2",
        "--frames",
        "2",
    ]);
    assert_eq!(code(&out), 2);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[dataset]\nper_kids = 3\n").unwrap();
    assert_eq!(
        code(&liveness(&["gen-data", "-c", p(&cfg), "--out", p(&data)])),
        2
    );
    assert_eq!(
        code(&liveness(&[
            "gen-data",
            "-c",
            p(&dir.path().join("missing.toml")),
            "--out",
            p(&data)
        ])),
        3
    );
}

#[test]
fn smoke_train_and_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let ck = dir.path().join("m.agck");
    let log = dir.path().join("log.jsonl");
    assert_eq!(
        code(&liveness(&[
            "gen-data",
            "--out",
            p(&data),
            "--per-kind",
            "2",
            "--val-per-kind",
            "1",
            "--test-per-kind",
            "0"
        ])),
        0
    );
    let started = std::time::Instant::now();
    let out = liveness(&[
        "train",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--log",
        p(&log),
        "--epochs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(started.elapsed().as_secs() < 60);
    assert!(stdout(&out).contains("final validation EER"));
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 2);
    assert!(!log_text.contains("null") && !log_text.contains("NaN"));

    // Empty split.
    let out = liveness(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--split",
        "test",
    ]);
    assert_eq!(code(&out), 2);

    // Truncated video and checkpoint.
    let video = data.join("live_0000.agvd");
    let bytes = std::fs::read(&video).unwrap();
    let cut = dir.path().join("cut.agvd");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    assert_eq!(
        code(&liveness(&[
            "verify",
            "--checkpoint",
            p(&ck),
            "--video",
            p(&cut)
        ])),
        3
    );
    let ck_bytes = std::fs::read(&ck).unwrap();
    let cut_ck = dir.path().join("cut.agck");
    std::fs::write(&cut_ck, &ck_bytes[..ck_bytes.len() / 2]).unwrap();
    assert_eq!(
        code(&liveness(&[
            "verify",
            "--checkpoint",
            p(&cut_ck),
            "--video",
            p(&video)
        ])),
        3
    );
    assert_eq!(
        code(&liveness(&[
            "verify",
            "--checkpoint",
            p(&ck),
            "--video",
            p(&data)
        ])),
        3
    );
}

/// Field of a flat JSON object line, without a JSON dependency.
fn field<'a>(line: &'a str, key: &str) -> &'a str {
    let start = line.find(&format!("\"{key}\":")).unwrap() + key.len() + 3;
    let rest = &line[start..];
    let end = rest.find([',', '}']).unwrap();
    rest[..end].trim_matches('"')
}

#[test]
fn trained_model_accepts_live_and_rejects_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let ck = dir.path().join("m.agck");
    let outcomes = dir.path().join("eval.jsonl");
    let gen = [
        "gen-data",
        "--out",
        p(&data),
        "--per-kind",
        "24",
        "--val-per-kind",
        "4",
        "--test-per-kind",
        "4",
    ];
    assert_eq!(code(&liveness(&gen)), 0);
    let out = liveness(&["train", "--data", p(&data), "--checkpoint", p(&ck)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = liveness(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--outcomes",
        p(&outcomes),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout(&out);
    let tau_cls = field(&report.replace(['\n', ' '], ""), "tau_cls").to_string();

    let text = std::fs::read_to_string(&outcomes).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("\"id\":")).collect();
    assert_eq!(rows.len(), 16);
    let live = rows
        .iter()
        .find(|r| field(r, "kind") == "live" && field(r, "accepted") == "true")
        .expect("some live test video is accepted");
    let out = liveness(&[
        "verify",
        "--checkpoint",
        p(&ck),
        "--video",
        p(&data.join(field(live, "id"))),
        "--tau-cls",
        &tau_cls,
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).starts_with("live cnt="));

    for replay in rows
        .iter()
        .filter(|r| field(r, "kind") == "modality_replay")
    {
        let out = liveness(&[
            "verify",
            "--checkpoint",
            p(&ck),
            "--video",
            p(&data.join(field(replay, "id"))),
            "--tau-cls",
            &tau_cls,
        ]);
        assert_eq!(code(&out), 1, "{}", stdout(&out));
        assert!(stdout(&out).starts_with("spoof "));
    }
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_liveness"));
        cmd.args([
            "gen-data",
            "--out",
            p(&out),
            "--per-kind",
            "1",
            "--val-per-kind",
            "0",
            "--test-per-kind",
            "0",
        ]);
        cmd.env_remove("AG_SEED");
        if let Some(e) = env {
            cmd.env("AG_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(out.join("manifest.json")).unwrap()
    };
    let env5 = run("a", Some("5"), None);
    let flag5 = run("b", Some("9"), Some("5"));
    let plain = run("c", None, None);
    assert_eq!(env5, flag5);
    assert_ne!(env5, plain);
}
