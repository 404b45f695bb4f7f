use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crossphase_cli::manifest::RunManifest;
use crossphase_cli::inputs::sha256_hex;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossphase"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn powerflow_lists_end_bus_voltages() {
    let o = run(&["powerflow", "--feeder", "twobus.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let n4: Vec<&str> = text.lines().filter(|l| l.starts_with("N4 ")).collect();
    assert_eq!(n4.len(), 3);
    for (line, v) in n4.iter().zip(["2103.", "2205.", "2150."]) {
        assert!(line.contains(v), "{line}");
    }
    assert!(text.contains("3 violations"));
}

#[test]
fn decompose_prints_phasor_report() {
    let o = run(&["decompose", "--feeder", "twobus.json", "--perturb", "pvA:+100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let phases = v["phases"].as_array().unwrap();
    assert_eq!(phases.len(), 3);
    let earth: Vec<f64> = phases.iter().map(|p| p["dv_earth"]["magnitude"].as_f64().unwrap()).collect();
    assert!(earth.iter().all(|e| (e - earth[0]).abs() < 1e-9));
    assert!(phases[0]["magnitude_change_v"].as_f64().unwrap() < -30.0);
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["powerflow"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn domain_errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"name\": 3}").unwrap();
    for args in [
        vec!["powerflow", "--feeder", "does-not-exist.json"],
        vec!["powerflow", "--feeder", bad.to_str().unwrap()],
        vec!["decompose", "--feeder", "twobus.json", "--perturb", "nosuchpv:+5"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
        assert!(v["error"]["kind"].is_string());
        assert!(v["error"]["message"].is_string());
    }
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"limits": [0.85, 1.05], "tolerance": 1e-8}"#).unwrap();
    let c = cfg.to_str().unwrap();

    let o = run(&["--config", c, "powerflow", "--feeder", "twobus.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("no voltage violations"));

    let o = run(&["--config", c, "powerflow", "--feeder", "twobus.json", "--limits", "0.9,1.05"]);
    assert!(stdout(&o).contains("2 violations"), "{}", stdout(&o));
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn out_dir_writes_reports_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "--out-dir",
        out.to_str().unwrap(),
        "compare",
        "--feeder",
        "hipv.json",
        "--profile",
        "day.csv",
        "--instances",
        "h12,h13",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        files(&out),
        ["compare-h12.csv", "compare-h13.csv", "compare-summary.csv", "compare.json", "manifest.json"]
    );
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.subcommand, "compare");
    assert_eq!(m.instances, ["h12", "h13"]);
    assert_eq!(m.inputs_sha256, m.compute_hash());
    let hipv = crossphase::bundled::asset("hipv.json").unwrap();
    assert_eq!(m.inputs[0].sha256, sha256_hex(hipv.as_bytes()));

    let summary = fs::read_to_string(out.join("compare-summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = vec![];
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&[
            "--out-dir",
            out.to_str().unwrap(),
            "control",
            "--feeder",
            "hipv.json",
            "--profile",
            "day.csv",
            "--instance",
            "h12",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let contents: Vec<Vec<u8>> = files(&out).iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        outputs.push((stdout(&o), files(&out), contents));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn empty_instance_list_gives_header_only() {
    let o = run(&["compare", "--feeder", "hipv.json", "--profile", "day.csv", "--instances", ""]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("instance,strategy"));
}

#[test]
fn json_flag_prints_manifest_and_result() {
    let o = run(&["--json", "sensitivity", "--feeder", "twobus.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["manifest"]["subcommand"], "sensitivity");
    assert!(v["result"].is_object());
}

#[test]
fn lp_strategies_differ_on_coupled_peak() {
    let status = |s: &str| {
        let o = run(&["--json", "control", "--feeder", "hipv.json", "--profile", "day.csv", "--instance", "h12", "--strategy", s]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["manifest"]["strategy"], s);
        v["result"]["residual"]["violations"].as_array().unwrap().len()
    };
    assert_eq!(status("lp-full"), 0);
    assert!(status("lp-perphase") > 0);
}
