//! End-to-end checks of the command-line surface: exit codes, report
//! files, config echo reproducibility, and the stub judge protocol.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN_PATH: &str = env!("CARGO_BIN_EXE_trajaudit");

fn run(args: &[&str]) -> Output {
    Command::new(BIN_PATH)
        .args(args)
        .env_remove("TRAJAUDIT_SEED")
        .env_remove("TRAJAUDIT_OUT")
        .output()
        .expect("binary runs")
}

fn write_file(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

const GOOD_TRACES: &str = concat!(
    r#"{"episode_id":"e1","task_id":"stack","policy_id":"act","success":true,"potentials":[0.0,0.25,0.5,0.75,1.0]}"#,
    "\n",
    r#"{"episode_id":"e2","task_id":"stack","policy_id":"act","success":false,"potentials":[0.0,0.5,0.2,0.3,0.3]}"#,
    "\n",
    r#"{"episode_id":"e3","task_id":"stack","policy_id":"dp","success":false,"potentials":[0.0,0.1,0.15,0.2]}"#,
    "\n",
);

#[test]
fn audit_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    write_file(&traces, GOOD_TRACES);
    let out = dir.path().join("out");
    let result = run(&["audit", "--traces", traces.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(0), "{result:?}");
    for file in [
        "audit_table.csv",
        "audit_table.json",
        "reachability.csv",
        "success_conditioned.csv",
        "fingerprints.csv",
        "resolved_config.toml",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    assert!(!out.join("failures.json").exists());
}

#[test]
fn audit_with_malformed_line_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    write_file(&traces, &format!("{GOOD_TRACES}this is not json\n"));
    let out = dir.path().join("out");
    let result = run(&["audit", "--traces", traces.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    assert!(out.join("failures.json").exists());
    assert!(out.join("audit_table.csv").exists(), "reports still written");
}

#[test]
fn audit_missing_file_is_fatal() {
    let result = run(&["audit", "--traces", "/no/such/file.jsonl"]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("error"));
}

#[test]
fn usage_error_exits_one() {
    let result = run(&["definitely-not-a-subcommand"]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn strict_mode_rejects_out_of_range_traces() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    write_file(
        &traces,
        concat!(
            r#"{"episode_id":"ok","task_id":"t","potentials":[0.0,0.5]}"#,
            "\n",
            r#"{"episode_id":"hot","task_id":"t","potentials":[0.0,1.3]}"#,
            "\n",
        ),
    );
    let out = dir.path().join("out");
    let result = run(&[
        "audit", "--strict", "--traces", traces.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2), "out-of-range episode fails alone");
    let clamped = run(&[
        "audit", "--clamp", "--traces", traces.to_str().unwrap(),
        "--out", dir.path().join("out2").to_str().unwrap(),
    ]);
    assert_eq!(clamped.status.code(), Some(0), "clamp mode accepts with a warning");
}

#[test]
fn calibrate_prints_reference_value_and_rejects_bad_tail() {
    let dir = tempfile::tempdir().unwrap();
    let result = run(&[
        "calibrate", "--sigma", "0.01", "--tail", "0.01",
        "--out", dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let printed: f64 = String::from_utf8_lossy(&result.stdout).trim().parse().unwrap();
    assert!((printed - 0.036428).abs() < 1e-4);

    let bad = run(&["calibrate", "--sigma", "0.01", "--tail", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

const ANNOTATIONS: &str = concat!(
    r#"{"episode_id":"ep-a","task_context":"stack blocks","length":300,"keyframes":[0,150,299],"phases":[true,true],"setting":"Sim"}"#,
    "\n",
    r#"{"episode_id":"ep-b","task_context":"pour water","length":240,"keyframes":[0,120,239],"phases":[true,true],"setting":"Real"}"#,
    "\n",
);

#[test]
fn config_echo_reproduces_pair_output() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    write_file(&annotations, ANNOTATIONS);
    let out1 = dir.path().join("first");
    let result = run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--seed", "33", "--out", out1.to_str().unwrap(),
    ]);
    assert!(matches!(result.status.code(), Some(0) | Some(2)));

    // Feed the echoed config back, overriding only the output directory.
    let echo = out1.join("resolved_config.toml");
    let out2 = dir.path().join("second");
    let rerun = run(&[
        "--config", echo.to_str().unwrap(),
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--out", out2.to_str().unwrap(),
    ]);
    assert!(matches!(rerun.status.code(), Some(0) | Some(2)));
    let first = std::fs::read(out1.join("pairs.jsonl")).unwrap();
    let second = std::fs::read(out2.join("pairs.jsonl")).unwrap();
    assert_eq!(first, second, "echoed config must reproduce outputs");
}

#[test]
fn pairs_build_emits_noise_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    write_file(&annotations, ANNOTATIONS);
    let out = dir.path().join("out");
    let result = run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--seed", "3", "--noise-level", "0.05", "--out", out.to_str().unwrap(),
    ]);
    assert!(matches!(result.status.code(), Some(0) | Some(2)));
    let manifest = std::fs::read_to_string(out.join("noise_manifest.jsonl")).unwrap();
    let mut seeds = std::collections::BTreeSet::new();
    for line in manifest.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["noise_level"].as_f64(), Some(0.05));
        assert!(entry["episode_id"].is_string());
        assert!(entry["frame"].is_u64());
        seeds.insert(entry["seed"].as_u64().unwrap());
    }
    // One distinct seed per referenced frame.
    assert_eq!(seeds.len(), manifest.lines().count());
    assert!(seeds.len() > 1);
}

#[test]
fn pairs_quota_shortfall_reports_and_exits_partial() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    // One tiny episode cannot fill a large default quota.
    write_file(
        &annotations,
        concat!(
            r#"{"episode_id":"tiny","task_context":"poke","length":60,"keyframes":[0,30,59],"phases":[true,true],"setting":"Sim"}"#,
            "\n"
        ),
    );
    let out = dir.path().join("out");
    let result = run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sampling_report.json")).unwrap())
            .unwrap();
    assert!(!report["shortfalls"].as_array().unwrap().is_empty());
}

#[test]
fn judge_eval_index_oracle_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    write_file(&annotations, ANNOTATIONS);
    let pairs_out = dir.path().join("pairs");
    run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--seed", "1", "--out", pairs_out.to_str().unwrap(),
    ]);
    let eval_out = dir.path().join("eval");
    let result = run(&[
        "judge", "eval",
        "--pairs", pairs_out.join("pairs.jsonl").to_str().unwrap(),
        "--judge", "builtin:index_oracle",
        "--out", eval_out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let csv = std::fs::read_to_string(eval_out.join("accuracy.csv")).unwrap();
    let data_line = csv.lines().nth(1).unwrap();
    // Every populated accuracy cell reads 1.0000.
    for field in data_line.split(',').skip(1) {
        if field.contains('.') {
            assert_eq!(field, "1.0000");
        }
    }
}

#[test]
fn judge_eval_over_subprocess_stub() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    write_file(&annotations, ANNOTATIONS);
    let pairs_out = dir.path().join("pairs");
    run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--seed", "9", "--out", pairs_out.to_str().unwrap(),
    ]);
    let out = dir.path().join("eval");
    let spec = format!("subprocess:potential:{BIN_PATH} judge-stub --oracle index");
    let result = run(&[
        "judge", "eval",
        "--pairs", pairs_out.join("pairs.jsonl").to_str().unwrap(),
        "--judge", &spec,
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("accuracy.json")).unwrap()).unwrap();
    for cell in table["cells"].as_array().unwrap() {
        assert_eq!(cell["accuracy"].as_f64(), Some(1.0));
    }
}

#[test]
fn unreachable_http_judge_is_partial_with_full_failure_rate() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    write_file(&annotations, ANNOTATIONS);
    let pairs_out = dir.path().join("pairs");
    run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--seed", "4", "--out", pairs_out.to_str().unwrap(),
    ]);
    let out = dir.path().join("eval");
    let result = run(&[
        "judge", "eval",
        "--pairs", pairs_out.join("pairs.jsonl").to_str().unwrap(),
        "--judge", "http:pairwise:http://127.0.0.1:1/judge",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("accuracy.json")).unwrap()).unwrap();
    let cells = table["cells"].as_array().unwrap();
    assert!(cells.iter().all(|c| c["judged"].as_u64() == Some(0)));
    assert!(cells.iter().all(|c| c["failed"].as_u64().unwrap() > 0));
}

#[test]
fn audit_output_invariant_to_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    write_file(&traces, GOOD_TRACES);
    let single = dir.path().join("single");
    let parallel = dir.path().join("parallel");
    for (out, jobs) in [(&single, "1"), (&parallel, "4")] {
        let result = run(&[
            "audit", "--traces", traces.to_str().unwrap(),
            "--jobs", jobs, "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(result.status.code(), Some(0));
    }
    assert_eq!(
        std::fs::read(single.join("audit_table.csv")).unwrap(),
        std::fs::read(parallel.join("audit_table.csv")).unwrap()
    );
}

#[test]
fn judge_compare_ranks_judges() {
    let dir = tempfile::tempdir().unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    write_file(&annotations, ANNOTATIONS);
    let pairs_out = dir.path().join("pairs");
    run(&[
        "pairs", "build", "--annotations", annotations.to_str().unwrap(),
        "--seed", "2", "--out", pairs_out.to_str().unwrap(),
    ]);
    let out = dir.path().join("cmp");
    let result = run(&[
        "judge", "compare",
        "--pairs", pairs_out.join("pairs.jsonl").to_str().unwrap(),
        "--spec", "builtin:index_oracle",
        "--spec", "builtin:inverted_oracle",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert!(lines.next().unwrap().starts_with("builtin:index_oracle"));
    assert!(lines.next().unwrap().starts_with("builtin:inverted_oracle"));
}

#[test]
fn consistency_check_detects_clipped_violation() {
    let dir = tempfile::tempdir().unwrap();
    let states = dir.path().join("states.jsonl");
    write_file(
        &states,
        concat!(
            r#"{"state_id":"a","potential":0.0}"#, "\n",
            r#"{"state_id":"b","potential":0.5}"#, "\n",
            r#"{"state_id":"c","potential":1.0}"#, "\n",
        ),
    );
    let consistent = run(&[
        "consistency", "check", "--evaluator", "potential_diff",
        "--states", states.to_str().unwrap(),
        "--out", dir.path().join("ok").to_str().unwrap(),
    ]);
    assert_eq!(consistent.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&consistent.stdout).contains("ConsistentWithinTol"));

    let violated = run(&[
        "consistency", "check", "--evaluator", "clipped:0.5",
        "--states", states.to_str().unwrap(),
        "--out", dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(violated.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&violated.stdout).contains("Violated"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("bad/consistency_report.json")).unwrap(),
    )
    .unwrap();
    assert!(!report["cocycle"]["violations"].as_array().unwrap().is_empty());

    // Tolerance above the residual flips the verdict; the flag is echoed.
    let lax = run(&[
        "consistency", "check", "--evaluator", "clipped:0.5",
        "--states", states.to_str().unwrap(),
        "--tolerance", "0.6",
        "--out", dir.path().join("lax").to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&lax.stdout).contains("ConsistentWithinTol"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("lax/consistency_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["tolerance"].as_f64(), Some(0.6));
}

#[test]
fn metrics_with_discarded_columns() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    write_file(&traces, GOOD_TRACES);
    let out = dir.path().join("out");
    let result = run(&[
        "metrics", "--traces", traces.to_str().unwrap(), "--include-discarded",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("ppe,pti,ead,pj,cs,rr"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn noise_roundtrip_through_npy() {
    use trajaudit_core::npy;
    use trajaudit_core::sampler::noise::ImageArray;
    let dir = tempfile::tempdir().unwrap();
    let image = ImageArray::new(8, 6, 3, (0..144).map(|i| i as f64 / 143.0).collect()).unwrap();
    let input = dir.path().join("in.npy");
    let mut file = std::fs::File::create(&input).unwrap();
    npy::write_image(&mut file, &image).unwrap();
    drop(file);

    // Identity at alpha = 0.
    let out_zero = dir.path().join("zero.npy");
    let result = run(&[
        "noise", "--input", input.to_str().unwrap(), "--output", out_zero.to_str().unwrap(),
        "--noise-level", "0",
    ]);
    assert_eq!(result.status.code(), Some(0));
    let zero = npy::read_image(&mut std::fs::File::open(&out_zero).unwrap()).unwrap();
    assert_eq!(zero, image);

    // Same seed, same output; different seed differs.
    let out_a = dir.path().join("a.npy");
    let out_b = dir.path().join("b.npy");
    let out_c = dir.path().join("c.npy");
    for (out, seed) in [(&out_a, "7"), (&out_b, "7"), (&out_c, "8")] {
        let result = run(&[
            "noise", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap(),
            "--noise-level", "0.3", "--seed", seed,
        ]);
        assert_eq!(result.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
    assert_ne!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_c).unwrap());
}

#[test]
fn judge_stub_speaks_the_protocol() {
    let mut child = Command::new(BIN_PATH)
        .args(["judge-stub", "--oracle", "index"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());

    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    assert_eq!(line.trim(), r#"{"ready":true}"#);

    writeln!(
        stdin,
        r#"{{"kind":"potential","id":"q1","context":"ctx","observation":{{"episode_id":"e","state_index":3,"last_state_index":10,"frame":30,"refs":[]}},"ref_start":null,"ref_end":null}}"#
    )
    .unwrap();
    stdin.flush().unwrap();
    line.clear();
    stdout.read_line(&mut line).unwrap();
    let response: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(response["id"], "q1");
    assert_eq!(response["potential"].as_f64(), Some(0.3));

    drop(stdin);
    let _ = child.wait();
}
