//! End-to-end tests of the binary: exit codes, report shape, and
//! reproducibility of seeded runs.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hitgap")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hitgap_cli_{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config(name: &str, doc: &Value) -> PathBuf {
    let p = scratch(name);
    fs::write(&p, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    p
}

fn two_state_doc() -> Value {
    json!({
        "instance": {"kind": "chain", "n": 2, "Q": [[-1.0, 1.0], [2.0, -2.0]]},
        "target": {"states": [0]},
        "mc": {"start": 1, "n_paths": 4000, "alpha_frac": 0.5}
    })
}

fn run(args: &[&str]) -> Output {
    // The child must not inherit a seed from the test environment.
    Command::new(bin())
        .args(args)
        .env_remove("HITGAP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

#[test]
fn gap_reports_the_closed_form_and_exits_zero() {
    let cfg = write_config("gap.json", &two_state_doc());
    let out = run(&["gap", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["command"], "gap");
    assert_eq!(v["instance_id"], "chain_2");
    let gap = v["payload"]["gap"].as_f64().unwrap();
    let c = v["payload"]["poincare_c"].as_f64().unwrap();
    assert!((gap - 3.0).abs() < 1e-10);
    assert!((c - 1.0 / 3.0).abs() < 1e-10);
}

#[test]
fn threshold_report_shows_the_tight_bound() {
    let cfg = write_config("threshold.json", &two_state_doc());
    let out = run(&["threshold", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let p = &v["payload"];
    assert!((p["alpha_star"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert!((p["lower_bound"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert!(p["slack"].as_f64().unwrap().abs() < 1e-7);
}

#[test]
fn config_problems_exit_two_with_every_issue_listed() {
    let cfg = write_config(
        "bad.json",
        &json!({"instance": {"kind": "warp"}, "alphas": {"values": [-1.0]}, "oops": 1}),
    );
    let out = run(&["gap", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("instance.kind"), "{err}");
    assert!(err.contains("alphas.values"), "{err}");
    assert!(err.contains("oops"), "{err}");
}

#[test]
fn a_failing_check_exits_one() {
    // 40 paths at 95% of the threshold: the heavy tail makes the small-sample
    // mean land far from the analytic value for this seed, and the check
    // honestly reports the miss.
    let mut doc = two_state_doc();
    doc["mc"] = json!({"start": 1, "n_paths": 40, "alpha_frac": 0.95, "seed": 1});
    let cfg = write_config("mc_fail.json", &doc);
    let out = run(&["mc", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["payload"]["pass"], Value::Bool(false));
    assert!(v["payload"]["measured"]["z_score"].as_f64().unwrap() > 3.0);
}

#[test]
fn a_diverging_exponent_exits_three() {
    let cfg = write_config("blowup.json", &two_state_doc());
    let out = run(&[
        "potential",
        "--config",
        cfg.to_str().unwrap(),
        "--alpha",
        "5.0",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("diverges"), "{err}");
}

#[test]
fn a_missing_target_exits_two() {
    let mut doc = two_state_doc();
    doc.as_object_mut().unwrap().remove("target");
    let cfg = write_config("no_target.json", &doc);
    let out = run(&["threshold", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("target"));
}

#[test]
fn verify_passes_and_the_filter_narrows_the_suite() {
    let cfg = write_config("verify.json", &two_state_doc());
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let p = &v["payload"];
    assert_eq!(p["all_pass"], Value::Bool(true));
    let total = p["counts"]["total"].as_u64().unwrap();
    assert_eq!(
        p["reports"].as_array().unwrap().len() as u64,
        total,
        "counts match the report list"
    );
    assert_eq!(v["seed"]["source"], "cli");

    let mut doc = two_state_doc();
    doc["checks"] = json!(["threshold_gap_bound", "psi_pairing"]);
    let cfg = write_config("verify_filter.json", &doc);
    let out = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let ids: Vec<&str> = v["payload"]["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["check_id"].as_str().unwrap())
        .collect();
    assert_eq!(
        ids,
        vec![
            "threshold_gap_bound",
            "psi_pairing_smoothstep",
            "psi_pairing_exp_decay",
            "psi_pairing_bump"
        ]
    );
}

#[test]
fn verify_reruns_are_identical_outside_the_timestamp() {
    let cfg = write_config("repro.json", &two_state_doc());
    let mut snapshots = Vec::new();
    for name in ["repro_a.json", "repro_b.json"] {
        let out_path = scratch(name);
        let out = run(&[
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "3",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
        assert!(v.get("timestamp").is_some());
        v.as_object_mut().unwrap().remove("timestamp");
        // Default serialization is shortest-round-trip, so equal strings
        // mean bit-identical numbers everywhere outside the timestamp.
        snapshots.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn mc_seed_flag_wins_and_reproduces() {
    let cfg = write_config("mc_seed.json", &two_state_doc());
    let mean_at = |seed: &str| {
        let out = run(&["mc", "--config", cfg.to_str().unwrap(), "--seed", seed]);
        assert_eq!(out.status.code(), Some(0));
        let v = stdout_json(&out);
        assert_eq!(v["seed"]["source"], "cli");
        v["payload"]["measured"]["mc_mean"].as_f64().unwrap()
    };
    let a = mean_at("3");
    let b = mean_at("3");
    let c = mean_at("4");
    assert_eq!(a.to_bits(), b.to_bits(), "same seed, same estimate");
    assert_ne!(a.to_bits(), c.to_bits(), "different seed, different estimate");
}

#[test]
fn sweep_emits_csv_and_the_bound_holds_everywhere() {
    let cfg = write_config(
        "sweep.json",
        &json!({
            "instance": {"kind": "random", "n": 10, "seed": 1},
            "sweep": {"instances": 2, "n": 10, "targets": 2, "seed": 5}
        }),
    );
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2 + 4, "comment, header, 2x2 rows");
    assert!(lines[0].starts_with('#'));
    for row in &lines[2..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8, "{row}");
        let slack: f64 = fields[7].parse().unwrap();
        assert!(slack >= -1e-8, "{row}");
    }
}

#[test]
fn the_out_flag_writes_the_report_to_a_file() {
    let cfg = write_config("outflag.json", &two_state_doc());
    let out_path = scratch("gap_report.json");
    let out = run(&[
        "gap",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["command"], "gap");
}
