//! Python bindings. Laws, rewards and options travel as JSON strings in the
//! same format as the command-line problem files.

use std::path::Path;

use onesided::bench;
use onesided::classify::light_tail_characterization;
use onesided::run::ProblemSpec;
use onesided::solver::{self, SolveOptions};
use onesided::{IncrementLaw, RewardFunction};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Deserialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: for<'de> Deserialize<'de>>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn options(text: Option<&str>) -> PyResult<SolveOptions> {
    text.map_or_else(|| Ok(SolveOptions::default()), |t| parse("options", t))
}

/// Runs a problem description and writes the report files into `out`.
/// Returns `(exit_status, report_json)`.
#[pyfunction]
pub fn run(spec: &str, out: &str) -> PyResult<(i32, String)> {
    let spec = ProblemSpec::from_json(spec).map_err(err)?;
    let report = onesided::run::run(&spec, Path::new(out)).map_err(err)?;
    let text = serde_json::to_string(&report).map_err(err)?;
    Ok((report.status.exit_code(), text))
}

/// Threshold solution as JSON.
#[pyfunction]
#[pyo3(signature = (law, reward, q, options=None))]
pub fn solve(law: &str, reward: &str, q: f64, options: Option<&str>) -> PyResult<String> {
    let law: IncrementLaw = parse("law", law)?;
    let f: RewardFunction = parse("reward", reward)?;
    let solution = solver::find_threshold(&law, &f, q, &self::options(options)?).map_err(err)?;
    serde_json::to_string(&solution).map_err(err)
}

/// `(V(x), standard error)` for each `x` in `xs`.
#[pyfunction]
#[pyo3(signature = (law, reward, q, xs, options=None))]
pub fn value(law: &str, reward: &str, q: f64, xs: Vec<f64>, options: Option<&str>) -> PyResult<Vec<(f64, f64)>> {
    let law: IncrementLaw = parse("law", law)?;
    let f: RewardFunction = parse("reward", reward)?;
    let solved = solver::solve(&law, &f, q, &self::options(options)?).map_err(err)?;
    let values = solved.value_grid(&xs).map_err(err)?;
    Ok(values.iter().map(|v| (v.mean, v.se)).collect())
}

/// Finiteness verdict with its witness, as JSON.
#[pyfunction]
pub fn classify(law: &str, reward: &str, q: f64) -> PyResult<String> {
    let law: IncrementLaw = parse("law", law)?;
    let f: RewardFunction = parse("reward", reward)?;
    serde_json::to_string(&light_tail_characterization(&law, &f, q)).map_err(err)
}

/// Largest root of `E e^{λξ} = e^q`, or `None`.
#[pyfunction]
pub fn mgf_root(law: &str, q: f64) -> PyResult<Option<f64>> {
    let law: IncrementLaw = parse("law", law)?;
    if !(q >= 0.0) {
        return Err(PyValueError::new_err("q must be nonnegative"));
    }
    Ok(law.mgf_root(q))
}

/// Runs benchmark criterion `n` (1 to 9); returns `(passed, detail line)`.
#[pyfunction]
#[pyo3(signature = (n, seed=bench::DEFAULT_SEED))]
fn bench_criterion(py: Python<'_>, n: usize, seed: u64) -> PyResult<(bool, String)> {
    let all = bench::criteria();
    let c = *all.get(n.wrapping_sub(1)).ok_or_else(|| PyValueError::new_err(format!("criterion {n} does not exist")))?;
    let outcome = py.detach(|| c(seed));
    Ok((outcome.pass, outcome.line()))
}

#[pymodule]
fn onesided_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(value, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(mgf_root, m)?)?;
    m.add_function(wrap_pyfunction!(bench_criterion, m)?)?;
    Ok(())
}
