use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shopbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shopbench"))
        .args(args)
        .env_remove("SHOPBENCH_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = shopbench(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn stage_by_stage_run() {
    let d = tempfile::tempdir().unwrap();
    let cat = d.path().join("catalog.jsonl");
    let ses = d.path().join("sessions.jsonl");
    let rsn = d.path().join("reasoned.jsonl");
    let rep = d.path().join("replay");
    let rnd = d.path().join("random");
    let train = d.path().join("train.jsonl");

    ok(&["gen-catalog", "--seed", "3", "--n-products", "150", "--out", p(&cat)]);
    let out = ok(&[
        "gen-sessions", "--catalog", p(&cat), "--out", p(&ses), "--seed", "3", "--n-sessions", "30",
    ]);
    assert!(out.contains("wrote 30 sessions"), "{out}");
    ok(&["synthesize-reasoning", "--in", p(&ses), "--out", p(&rsn), "--stub"]);
    assert!(d.path().join("reasoned.jsonl.meta.json").exists());

    let out = ok(&["evaluate", "--agent", "replay", "--dataset", p(&rsn), "--out", p(&rep)]);
    assert!(out.contains("Generated Next Action"));
    assert!(out.contains("100.00"));
    ok(&["evaluate", "--agent", "random", "--dataset", p(&rsn), "--out", p(&rnd), "--seed", "3"]);
    let cmp = d.path().join("cmp.json");
    let out = ok(&[
        "report", "--a", p(&rep.join("report.json")), "--b", p(&rnd.join("report.json")), "--mcnemar",
        "--out", p(&cmp),
    ]);
    assert!(out.contains("McNemar over steps"), "{out}");
    assert!(fs::read_to_string(&cmp).unwrap().contains("\"p_value\""));

    let out = ok(&["export-training", "--in", p(&rsn), "--out", p(&train)]);
    assert!(out.contains("wrote 30 examples"), "{out}");
    assert_eq!(fs::read_to_string(&train).unwrap().lines().count(), 30);

    // Export refuses sessions without reasoning and names them.
    let out = shopbench(&["export-training", "--in", p(&ses), "--out", p(&train)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lack reasoning"));
}

#[test]
fn missing_catalog_is_reported_with_flag() {
    let d = tempfile::tempdir().unwrap();
    let out = shopbench(&[
        "gen-sessions",
        "--catalog",
        p(&d.path().join("none.jsonl")),
        "--out",
        p(&d.path().join("s.jsonl")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--catalog"), "{err}");
    assert!(err.contains("gen-sessions"), "{err}");
}

#[test]
fn pipeline_is_idempotent_and_config_flags_take_precedence() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.json");
    fs::write(&cfg, r#"{"seed": 1, "n_products": 120, "oracle": {"n_sessions": 500}}"#).unwrap();
    let dir = d.path().join("run");
    let out = ok(&[
        "pipeline", "--config", p(&cfg), "--out-dir", p(&dir), "--n-sessions", "20",
    ]);
    assert!(out.contains("gen-catalog           done"), "{out}");
    assert_eq!(fs::read_to_string(dir.join("sessions.jsonl")).unwrap().lines().count(), 20);
    let report = fs::read_to_string(dir.join("reports/report.json")).unwrap();
    assert!(report.contains("\"macro_accuracy\": 1.0"));

    let before = fs::read(dir.join("reports/report.json")).unwrap();
    let out = ok(&["pipeline", "--config", p(&cfg), "--out-dir", p(&dir), "--n-sessions", "20"]);
    assert!(out.contains("skipped"), "{out}");
    assert_eq!(fs::read(dir.join("reports/report.json")).unwrap(), before);
}

#[test]
fn endpoint_agent_without_url_fails() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path().join("run");
    ok(&["pipeline", "--out-dir", p(&dir), "--n-sessions", "5", "--n-products", "100"]);
    let out = shopbench(&[
        "evaluate", "--agent", "endpoint", "--dataset", p(&dir.join("reasoned.jsonl")), "--out",
        p(&d.path().join("ep")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--endpoint"));
}

#[test]
fn help_mentions_credential_variable() {
    let out = ok(&["--help"]);
    assert!(out.contains("SHOPBENCH_API_KEY"));
    for cmd in ["gen-catalog", "gen-sessions", "synthesize-reasoning", "evaluate", "report", "export-training", "pipeline"] {
        assert!(out.contains(cmd), "{cmd}");
    }
}
