use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::process::{Command, Output};

const STATIC_2X2: &str = r#"{"preset":"static","params":{},"I":2,"J":2,"T":1.0,
  "g":[[{"type":"const","value":1.0},{"type":"const","value":-1.0}],[{"type":"const","value":0.0},{"type":"const","value":2.0}]]}"#;

const DRIFT_ONE_SIDED: &str = r#"{"preset":"drift-sum-1d","params":{"sigma":0.5},"I":2,"J":1,"T":0.5,
  "g":[[{"type":"clamp","coef":1.0,"lo":-1.0,"hi":1.0}],[{"type":"clamp","coef":-1.0,"lo":-1.0,"hi":1.0}]],
  "solver":{"nx":21,"np":4},"seed":7}"#;

fn infogame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infogame"))
        .args(args)
        .env_remove("INFOGAME_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn sha(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn solve_writes_record_and_slices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", DRIFT_ONE_SIDED);
    let out = dir.path().join("run");
    let run = infogame(&[
        "solve",
        "--config",
        &cfg,
        "--dt",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let record: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("diagnostics.json")).unwrap())
            .unwrap();
    assert_eq!(record["input_sha256"], sha(DRIFT_ONE_SIDED));
    assert_eq!(record["config"]["grid"]["counts"][0], 21);
    assert_eq!(record["config"]["grid"]["np"], 4);
    assert_eq!(record["config"]["model"]["preset"], "drift-sum-1d");
    let slices = record["slices"].as_array().unwrap();
    assert_eq!(slices.len(), 11);
    let first = std::fs::read_to_string(out.join(slices[0].as_str().unwrap())).unwrap();
    let mut lines = first.lines();
    assert_eq!(lines.next(), Some("t,x_1,p_1,p_2,q_1,w"));
    assert_eq!(lines.count(), 21 * 5);
    assert!(first.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn check_writes_report_next_to_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", STATIC_2X2);
    let out = dir.path().join("run");
    let run = infogame(&[
        "solve",
        "--config",
        &cfg,
        "--nx",
        "5",
        "--np",
        "4",
        "--nq",
        "4",
        "--dt",
        "0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let check = infogame(&["check", "--solution", out.to_str().unwrap()]);
    assert!(
        check.status.success(),
        "{}",
        String::from_utf8_lossy(&check.stderr)
    );
    let report = json(&check);
    assert_eq!(report["passed"], true);
    assert_eq!(report["crosscheck_disagreements"], 0);
    assert_eq!(report["input_sha256"], sha(STATIC_2X2));
    assert_eq!(std::fs::read(out.join("check.json")).unwrap(), check.stdout);
}

#[test]
fn simulate_reports_estimate_and_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", STATIC_2X2);
    let run = infogame(&[
        "simulate",
        "--config",
        &cfg,
        "--p",
        "1/4,3/4",
        "--q",
        "1/2,1/2",
        "--samples",
        "10",
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report = json(&run);
    // Σ p_i q_j g_ij = (1/4)(0) + (3/4)(1)
    assert_eq!(report["estimate"], 0.75);
    assert_eq!(report["stderr"], 0.0);
    assert_eq!(report["per_type_breakdown"][1][1]["estimate"], 2.0);
    assert_eq!(report["config"]["p"], serde_json::json!(["1/4", "3/4"]));
    assert_eq!(report["input_sha256"], sha(STATIC_2X2));
}

#[test]
fn simulate_writes_to_file_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", DRIFT_ONE_SIDED);
    let target = dir.path().join("sim.json");
    let run = infogame(&[
        "simulate",
        "--config",
        &cfg,
        "--samples",
        "50",
        "--strategy",
        "preset:sign",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 7);
    assert!(report["estimate"].as_f64().unwrap().is_finite());
}

#[test]
fn convexify_appends_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "w.csv", "p_1,p_2,w\n0,1,0\n0.5,0.5,1\n1,0,0\n");
    let out = dir.path().join("env.csv");
    let run = infogame(&[
        "convexify",
        "--input",
        &input,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "p_1,p_2,w,envelope\n0,1,0,0\n0.5,0.5,1,0\n1,0,0,0\n");
    let run = infogame(&[
        "convexify",
        "--input",
        &input,
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "cav",
    ]);
    assert!(run.status.success());
    assert!(std::fs::read_to_string(&out)
        .unwrap()
        .contains("0.5,0.5,1,1\n"));
}

#[test]
fn oracle_reports_classical_and_one_sided() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", DRIFT_ONE_SIDED);
    let run = infogame(&["oracle", "--config", &cfg, "--steps", "2", "--pgrid", "4"]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report = json(&run);
    let classical = report["classical"].as_array().unwrap();
    assert_eq!(classical.len(), 2);
    let one_sided = &report["one_sided"];
    assert_eq!(one_sided["values"].as_array().unwrap().len(), 5);
    // vertices of the one-sided table are the classical values
    let points = one_sided["points"].as_array().unwrap();
    for (k, p) in points.iter().enumerate() {
        for i in 0..2 {
            if p[i] == 1.0 {
                assert_eq!(one_sided["values"][k], classical[i][0]);
            }
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| infogame(args).status.code();
    let unknown = write(
        dir.path(),
        "bad.json",
        r#"{"preset":"static","params":{},"I":1,"J":1,"T":1.0,"g":[[{"type":"zero"}]],"extra":1}"#,
    );
    assert_eq!(code(&["solve", "--config", &unknown]), Some(2));
    let cfg = write(dir.path(), "m.json", DRIFT_ONE_SIDED);
    assert_eq!(
        code(&[
            "solve",
            "--config",
            &cfg,
            "--dt",
            "1.0",
            "--out",
            dir.path().join("x").to_str().unwrap()
        ]),
        Some(2)
    );
    assert_eq!(
        code(&["simulate", "--config", &cfg, "--samples", "0"]),
        Some(2)
    );
    assert_eq!(
        code(&["simulate", "--config", &cfg, "--delta", "0.0075"]),
        Some(2)
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        code(&["solve", "--config", missing.to_str().unwrap()]),
        Some(1)
    );
    assert_eq!(code(&["solve"]), Some(2));
    let nan = write(dir.path(), "nan.csv", "p_1,p_2,w\n0,1,0\n1,0,NaN\n");
    assert_eq!(
        code(&[
            "convexify",
            "--input",
            &nan,
            "--out",
            dir.path().join("o.csv").to_str().unwrap()
        ]),
        Some(3)
    );
}
