use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_telechain");

fn telechain(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("TELECHAIN_OUTPUT_DIR").env_remove("TELECHAIN_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn demo(dir: &Path, seeds: &str) -> String {
    let out = telechain(&["demo", dir.to_str().unwrap(), "--seeds", seeds], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("config.json").display().to_string()
}

fn edit_config(path: &str, edit: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    edit(&mut v);
    std::fs::write(path, v.to_string()).unwrap();
}

#[test]
fn full_pipeline_and_idempotent_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = demo(dir.path(), "4");
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();

    assert_eq!(code(&telechain(&["run", &config], &[])), 0);
    assert_eq!(code(&telechain(&["score", run_s], &[])), 0);
    let scores = std::fs::read_to_string(run.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "chain_id,model,chain_type,strength,seed_id,K,RS,BR,DR,CR,truncated");
    assert_eq!(scores.lines().count(), 1 + 4 * 3 * 3 * 3);

    assert_eq!(code(&telechain(&["report", run_s], &[])), 0);
    let files = ["report.md", "means.csv", "comparisons.csv", "scores.csv"];
    let first: Vec<_> = files.iter().map(|f| std::fs::read(run.join(f)).unwrap()).collect();
    assert_eq!(code(&telechain(&["report", run_s], &[])), 0);
    let second: Vec<_> = files.iter().map(|f| std::fs::read(run.join(f)).unwrap()).collect();
    assert_eq!(first, second);

    let report = String::from_utf8(first[0].clone()).unwrap();
    for s in ["## Strength 0.3", "## Strength 0.6", "## Strength 0.9", "## Paired t-tests"] {
        assert!(report.contains(s), "{report}");
    }
    assert_eq!(String::from_utf8_lossy(&first[1]).lines().count(), 1 + 27);

    let out = telechain(
        &["compare", run_s, "--measure", "CR", "--a", "model=cohesive,type=img_cap,strength=0.9", "--b", "model=drift,type=img_cap,strength=0.9", "--json"],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["n"], 4);
    assert_eq!(record["df"], 3);
}

#[test]
fn cross_product_size_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = demo(dir.path(), "2");
    edit_config(&config, |v| {
        v["models"] = serde_json::json!([{"id": "m", "adapter": {"kind": "sim"}}]);
        v["chain_types"] = serde_json::json!(["img_cap"]);
    });
    let elsewhere = dir.path().join("elsewhere");
    let out = telechain(&["run", &config], &[("TELECHAIN_OUTPUT_DIR", &elsewhere)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(elsewhere.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["chains"].as_array().unwrap().len(), 6);
    assert!(!dir.path().join("run").exists());
}

#[test]
fn config_errors_exit_1_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let config = demo(dir.path(), "2");
    std::fs::remove_file(dir.path().join("embeddings.txt")).unwrap();
    let out = telechain(&["run", &config], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("embeddings.txt"), "{}", stderr(&out));

    edit_config(&config, |v| v["strengths"] = serde_json::json!([0.3, "high"]));
    let out = telechain(&["run", &config], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("strengths[1]"), "{}", stderr(&out));

    assert_eq!(code(&telechain(&["run", "/nonexistent/config.json"], &[])), 1);
    assert_eq!(code(&telechain(&["frobnicate"], &[])), 1);
    assert_eq!(code(&telechain(&["compare", "x", "--a", "colour=red", "--b", "model=y"], &[])), 1);
    assert_eq!(code(&telechain(&["--help"], &[])), 0);
}

#[test]
fn missing_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = telechain(&["score", d], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("manifest.json"));
    let out = telechain(&["report", d], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("scores.csv"));
}

#[test]
fn backend_failure_exits_2_and_failed_chains_are_not_scored() {
    let dir = tempfile::tempdir().unwrap();
    let config = demo(dir.path(), "2");
    // Answers the handshake, then exits.
    let script = r#"read line; echo '{"capabilities":["img2img","text2img","caption","detect"],"single_flight":true}'"#;
    edit_config(&config, |v| {
        v["models"] = serde_json::json!([
            {"id": "flaky", "adapter": {"kind": "stdio", "command": ["sh", "-c", script]}},
            {"id": "copy", "adapter": {"kind": "sim"}}
        ]);
        v["chain_types"] = serde_json::json!(["img_only"]);
        v["strengths"] = serde_json::json!([0.6]);
    });
    let out = telechain(&["run", &config], &[]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("flaky"), "{}", stderr(&out));

    let run = dir.path().join("run");
    assert_eq!(code(&telechain(&["score", run.to_str().unwrap()], &[])), 0);
    let scores = std::fs::read_to_string(run.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 2);
    assert!(!scores.contains("flaky"));
}

#[test]
fn corrupt_record_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = demo(dir.path(), "1");
    edit_config(&config, |v| {
        v["chain_types"] = serde_json::json!(["img_only"]);
        v["strengths"] = serde_json::json!([0.3]);
    });
    assert_eq!(code(&telechain(&["run", &config], &[])), 0);
    let run = dir.path().join("run");
    let steps = run.join("chains/seed000__copy__img_only__s0.3/steps.json");
    std::fs::write(&steps, "{ truncated").unwrap();
    let out = telechain(&["score", run.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
