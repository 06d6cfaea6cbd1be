use onesided_py::{classify, mgf_root, run, solve, value};
use serde_json::Value;

const SIMPLE: &str = r#"{"mode": "lattice", "step": 1.0, "atoms": [[-1.0, 0.75], [1.0, 0.25]]}"#;
const X_PLUS: &str = r#"{"kind": "power_plus", "nu": 1.0}"#;

#[test]
fn solve_and_value_round_trip_json() {
    let sol: Value = serde_json::from_str(&solve(SIMPLE, X_PLUS, 0.0, None).unwrap()).unwrap();
    assert_eq!(sol["regime"]["kind"], "finite");
    assert!((sol["regime"]["u"].as_f64().unwrap() - 0.5).abs() < 1e-3);
    let v = value(SIMPLE, X_PLUS, 0.0, vec![0.0, 2.0], None).unwrap();
    assert!((v[0].0 - 1.0 / 3.0).abs() < 1e-9);
    assert_eq!(v[1], (2.0, 0.0));
}

#[test]
fn classify_and_mgf_root() {
    let sym = r#"{"mode": "lattice", "step": 1.0, "atoms": [[-1.0, 0.5], [1.0, 0.5]]}"#;
    let c: Value = serde_json::from_str(&classify(sym, X_PLUS, 0.0).unwrap()).unwrap();
    assert_eq!(c["verdict"], "infinite");
    assert!((mgf_root(SIMPLE, 0.0).unwrap().unwrap() - 3f64.ln()).abs() < 1e-9);
}

#[test]
fn run_writes_report() {
    let spec = r#"{"task": "classify", "reward": {"kind": "power_plus", "nu": 1.0},
                   "process": {"walk": {"mode": "lattice", "step": 1.0, "atoms": [[-1.0, 0.75], [1.0, 0.25]]}}}"#;
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run(spec, dir.path().to_str().unwrap()).unwrap();
    assert_eq!(code, 0);
    let r: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(r["result"]["classification"]["verdict"], "finite");
    assert!(dir.path().join("report.json").exists());
}
