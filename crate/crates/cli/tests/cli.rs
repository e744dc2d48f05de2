use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "truth": {
    "graph": {"kind": "path", "n": 1},
    "k": 1,
    "T": 1.0,
    "tau": 1.0,
    "terms": [
      {"index": {"hamiltonian": "Z"}, "schedule": {"kind": "linear", "a": 0.5, "b": 0.3}}
    ]
  },
  "skeleton": {
    "graph": {"kind": "path", "n": 1},
    "k": 1,
    "T": 1.0,
    "m": 1,
    "h_bound": 1.0,
    "tau": 1.0,
    "hamiltonian": ["Z"]
  },
  "eps": 0.05,
  "delta": 0.05,
  "mode": "oracle",
  "seed": 3
}"#;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lindlearn-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindlearn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn preprocess_prints_probes_and_plan() {
    let dir = scratch("pre");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    let out = stdout(&run(&["preprocess", cfg.to_str().unwrap()]));
    assert!(out.contains("h[Z]"));
    assert!(out.contains("\"fit_degree\""));
    let plan: serde_json::Value = serde_json::from_str(&stdout(&run(&["preprocess", cfg.to_str().unwrap(), "--json"]))).unwrap();
    assert_eq!(plan["n"], 1);
    assert_eq!(plan["probes"].as_array().unwrap().len(), 4);
}

#[test]
fn learn_then_validate() {
    let dir = scratch("learn");
    let cfg = dir.join("cfg.json");
    let res = dir.join("result.json");
    fs::write(&cfg, CONFIG).unwrap();
    let o = run(&["learn", cfg.to_str().unwrap(), "-o", res.to_str().unwrap()]);
    stdout(&o);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
    let worst = r["errors"].as_array().unwrap().iter().map(|e| e["sup_error"].as_f64().unwrap()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
    let report: serde_json::Value = serde_json::from_str(&stdout(&run(&["validate", cfg.to_str().unwrap(), "--result", res.to_str().unwrap()]))).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["holdout"], 738);
}

#[test]
fn simulate_bloch_rotation() {
    let dir = scratch("sim");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&run(&["simulate", cfg.to_str().unwrap(), "--observable", "X", "--times", "0.5", "0"]))).unwrap();
    let rows = v["evolved"].as_array().unwrap();
    assert_eq!(rows[0]["t"], 0.0);
    assert_eq!(rows[0]["terms"], serde_json::json!([["X", 1.0]]));
    // h_Z(t) = 0.5 + 0.3 t rotates X by the accumulated angle 0.5 t + 0.15 t²
    let angle: f64 = 0.25 + 0.15 * 0.25;
    let terms = rows[1]["terms"].as_array().unwrap();
    let get = |p: &str| terms.iter().find(|t| t[0] == p).map_or(0.0, |t| t[1].as_f64().unwrap());
    assert!((get("X") - angle.cos()).abs() < 1e-8);
    assert!((get("Y").abs() - angle.sin()).abs() < 1e-8);
}

#[test]
fn acquire_and_learn_from_file() {
    let dir = scratch("acq");
    let cfg = dir.join("cfg.json");
    let shots = dir.join("shots.txt");
    fs::write(&cfg, CONFIG.replace("\"oracle\"", "\"sampled\"")).unwrap();
    let o = run(&["acquire", cfg.to_str().unwrap(), "-o", shots.to_str().unwrap(), "--count", "1000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("below the planned"));
    let r: serde_json::Value = serde_json::from_str(&stdout(&run(&["learn", cfg.to_str().unwrap(), "--snapshots", shots.to_str().unwrap()]))).unwrap();
    assert_eq!(r["mode"], "sampled");
    assert_eq!(r["schedules"].as_array().unwrap().len(), 4);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = scratch("bad");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, CONFIG.replace("\"eps\": 0.05", "\"eps\": 2.0")).unwrap();
    let o = run(&["preprocess", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = run(&["preprocess", dir.join("missing.json").to_str().unwrap()]);
    assert!(!o.status.success());
}
