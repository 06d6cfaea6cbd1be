use std::fs;

use onesided::run::{run, write_atomic, ProblemSpec, RunError, Status, Task};

const WALK: &str = r#"{
  "task": "solve",
  "reward": { "kind": "power_plus", "nu": 1.0 },
  "process": { "walk": { "mode": "lattice", "step": 1.0, "atoms": [[-1.0, 0.75], [1.0, 0.25]] } },
  "q": 0.0,
  "numerics": { "solve": { "seed": 9 }, "grid": { "lo": -2.0, "hi": 2.0, "points": 5 } }
}"#;

#[test]
fn seed_falls_back_to_solver_options() {
    let spec = ProblemSpec::from_json(WALK).unwrap();
    assert_eq!(spec.seed(), 9);
    let r = spec.resolved();
    assert_eq!(r.numerics.seed, Some(9));
    assert_eq!(r.numerics.smoothfit.solve.seed, 9);
}

#[test]
fn solve_writes_tables_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = ProblemSpec::from_json(WALK).unwrap();
    let report = run(&spec, tmp.path()).unwrap();
    assert_eq!(report.task, Task::Solve);
    assert_eq!(report.status, Status::Ok);
    assert_eq!(report.seed, 9);
    for f in &report.files {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(tmp.path().join("value.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let echoed: ProblemSpec = serde_json::from_value(serde_json::to_value(&report.spec).unwrap()).unwrap();
    assert_eq!(echoed.seed(), 9);
    assert!(fs::read_dir(tmp.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().contains(".tmp")));
}

#[test]
fn unknown_fields_and_bad_discount_are_rejected() {
    let bad = WALK.replace("\"q\": 0.0", "\"q\": 0.0, \"discount\": 1");
    assert!(matches!(ProblemSpec::from_json(&bad), Err(RunError::Spec(_))));
    let neg = ProblemSpec::from_json(&WALK.replace("\"q\": 0.0", "\"q\": -1.0")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(run(&neg, tmp.path()), Err(RunError::Spec(_))));
}

#[test]
fn atomic_write_replaces_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("a.txt");
    write_atomic(&p, b"first").unwrap();
    write_atomic(&p, b"second").unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "second");
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn short_levy_sequence_is_monotone() {
    let text = r#"{
      "task": "levy-sequence",
      "reward": { "kind": "exp_call", "strike": 1.0 },
      "process": { "levy": { "drift": -0.5, "sigma": 1.0 } },
      "q": 0.2,
      "numerics": { "seed": 11, "max_level": 2 }
    }"#;
    let tmp = tempfile::tempdir().unwrap();
    let report = run(&ProblemSpec::from_json(text).unwrap(), tmp.path()).unwrap();
    let levels = report.result["sequence"]["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 3);
    let u: Vec<f64> = levels.iter().map(|l| l["u"].as_f64().unwrap()).collect();
    let tol: Vec<f64> = levels.iter().map(|l| l["tolerance"].as_f64().unwrap()).collect();
    for i in 1..u.len() {
        assert!(u[i] >= u[i - 1] - 4.0 * tol[i].hypot(tol[i - 1]), "{u:?}");
    }
    let csv = fs::read_to_string(tmp.path().join("sequence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
