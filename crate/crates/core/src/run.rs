//! JSON problem descriptions in, report files out.
//!
//! A run writes `report.json` plus task-dependent CSV and tab-separated plot
//! files into an output directory. Every file is written to a temporary name
//! and renamed into place. Reports carry no timings, so two runs with the
//! same spec and seed produce identical bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bench;
use crate::classify::{self, Verdict};
use crate::error::{LawError, LevyError, OracleError, RewardError, SmoothFitError, SolverError};
use crate::levy::{self, LevyModel};
use crate::oracle::{self, DpOptions};
use crate::reward::{RewardFunction, RewardSpec};
use crate::smoothfit::{self, SmoothFitOptions};
use crate::solver::{self, Regime, SolveOptions, Solved};
use crate::stochastic::{IncrementLaw, LawSpec};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Solve,
    OracleCheck,
    LevySequence,
    Smoothfit,
    Classify,
    Bench,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Solve => "solve",
            Task::OracleCheck => "oracle-check",
            Task::LevySequence => "levy-sequence",
            Task::Smoothfit => "smoothfit",
            Task::Classify => "classify",
            Task::Bench => "bench",
        }
    }
}

/// The underlying process: a random walk or a Lévy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Process {
    Walk(LawSpec),
    Levy(LevyModel),
}

/// Evaluation grid `lo, …, hi` with `points` equally spaced nodes. Lattice
/// oracle runs use the lattice step instead of `points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    41
}

impl Grid {
    pub fn nodes(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.lo],
            n => (0..n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Overrides `solve.seed`.
    pub seed: Option<u64>,
    pub solve: SolveOptions,
    /// Value and ratio output grid; centred on the threshold when absent.
    pub grid: Option<Grid>,
    pub dp: DpOptions,
    /// Dyadic level for `solve` on a Lévy model; the continuous-time solver
    /// is used for irregular compound Poisson models when absent.
    pub level: Option<u32>,
    pub max_level: u32,
    pub smoothfit: SmoothFitOptions,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            seed: None,
            solve: SolveOptions::default(),
            grid: None,
            dp: DpOptions::default(),
            level: None,
            max_level: 8,
            smoothfit: SmoothFitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub reward: Option<RewardSpec>,
    #[serde(default)]
    pub process: Option<Process>,
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub numerics: Numerics,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Spec(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The seed in effect: `numerics.seed`, else `numerics.solve.seed`.
    pub fn seed(&self) -> u64 {
        self.numerics.seed.unwrap_or(self.numerics.solve.seed)
    }

    /// The spec with the effective seed written into every option block, as
    /// echoed in the report.
    pub fn resolved(&self) -> Self {
        let mut s = self.clone();
        let seed = self.seed();
        s.numerics.seed = Some(seed);
        s.numerics.solve.seed = seed;
        s.numerics.smoothfit.solve = s.numerics.solve.clone();
        s
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions { seed: self.seed(), ..self.numerics.solve.clone() }
    }

    fn reward(&self) -> Result<RewardFunction, RunError> {
        let spec = self.reward.as_ref().ok_or_else(|| RunError::Spec("missing field `reward`".into()))?;
        Ok(RewardFunction::try_from(spec)?)
    }

    fn process(&self) -> Result<&Process, RunError> {
        self.process.as_ref().ok_or_else(|| RunError::Spec("missing field `process`".into()))
    }

    fn walk(&self) -> Result<IncrementLaw, RunError> {
        match self.process()? {
            Process::Walk(spec) => Ok(IncrementLaw::try_from(spec)?),
            Process::Levy(_) => Err(RunError::Spec("this task needs a `walk` process".into())),
        }
    }

    fn levy(&self) -> Result<&LevyModel, RunError> {
        match self.process()? {
            Process::Levy(m) => Ok(m),
            Process::Walk(_) => Err(RunError::Spec("this task needs a `levy` process".into())),
        }
    }

    fn validate(&self) -> Result<(), RunError> {
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(RunError::Spec(format!("q = {} must be finite and nonnegative", self.q)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("spec: {0}")]
    Spec(String),
    #[error("reward: {0}")]
    Reward(#[from] RewardError),
    #[error("stochastic: {0}")]
    Law(#[from] LawError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("levy: {0}")]
    Levy(#[from] LevyError),
    #[error("smoothfit: {0}")]
    SmoothFit(#[from] SmoothFitError),
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Inconclusive,
    /// A benchmark criterion failed.
    Failed,
}

impl Status {
    /// 0 on success, 2 when the answer is inconclusive, 1 otherwise.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Inconclusive => 2,
            Status::Failed => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub version: String,
    pub task: Task,
    pub status: Status,
    pub seed: u64,
    pub spec: ProblemSpec,
    pub result: Value,
    pub files: Vec<String>,
}

/// Runs `spec` and writes the report files into `out`.
pub fn run(spec: &ProblemSpec, out: &Path) -> Result<Report, RunError> {
    spec.validate()?;
    let task = spec.task.ok_or_else(|| RunError::Spec("missing field `task`".into()))?;
    let mut spec = spec.clone();
    if task == Task::Bench && spec.numerics.seed.is_none() && spec.numerics.solve.seed == 0 {
        spec.numerics.seed = Some(bench::DEFAULT_SEED);
    }
    let spec = &spec.resolved();
    fs::create_dir_all(out)?;
    let mut w = Writer { dir: out.to_path_buf(), files: Vec::new() };
    let (status, result) = match task {
        Task::Solve => run_solve(spec, &mut w)?,
        Task::OracleCheck => run_oracle(spec, &mut w)?,
        Task::LevySequence => run_sequence(spec, &mut w)?,
        Task::Smoothfit => run_smoothfit(spec, &mut w)?,
        Task::Classify => run_classify(spec)?,
        Task::Bench => run_bench(spec),
    };
    let mut files = w.files.clone();
    files.push("report.json".into());
    let report = Report {
        schema_version: SCHEMA_VERSION.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        task,
        status,
        seed: spec.seed(),
        spec: spec.clone(),
        result,
        files,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| RunError::Io(e.to_string()))?;
    text.push('\n');
    w.write("report.json", text.as_bytes())?;
    Ok(report)
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        write_atomic(&self.dir.join(name), bytes)?;
        if name != "report.json" {
            self.files.push(name.into());
        }
        Ok(())
    }

    fn with<F>(&mut self, name: &str, f: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn regime_status(r: &Regime) -> Status {
    if r.is_inconclusive() {
        Status::Inconclusive
    } else {
        Status::Ok
    }
}

/// Default output grid: seven units around the threshold, or around zero.
fn default_grid(regime: &Regime, lattice_step: Option<f64>) -> Grid {
    let c = regime.threshold().filter(|u| u.is_finite()).unwrap_or(0.0);
    match lattice_step {
        Some(s) => {
            let k = (c / s).floor();
            Grid { lo: (k - 10.0) * s, hi: (k + 4.0) * s, points: 15 }
        }
        None => Grid { lo: c - 5.0, hi: c + 2.0, points: 29 },
    }
}

fn solved_for(spec: &ProblemSpec) -> Result<Solved, RunError> {
    let f = spec.reward()?;
    let opts = spec.solve_options();
    Ok(match spec.process()? {
        Process::Walk(_) => solver::solve(&spec.walk()?, &f, spec.q, &opts)?,
        Process::Levy(m) => match (spec.numerics.level, m.continuous_model()) {
            (Some(level), _) => levy::solve_level(m, &f, spec.q, level, &opts)?,
            (None, Some(_)) => levy::continuous_solve(m, &f, spec.q, &opts)?,
            (None, None) => levy::solve_level(m, &f, spec.q, 10, &opts)?,
        },
    })
}

/// Writes `value.csv`/`value.tsv` and `ratio.csv`/`ratio.tsv`.
fn write_value_files(w: &mut Writer, solved: &Solved, grid: &Grid) -> Result<Option<String>, RunError> {
    let xs = grid.nodes();
    let f = solved.reward();
    let mut note = None;
    let values = if xs.is_empty() || matches!(solved.solution.regime, Regime::Inconclusive { .. }) {
        Vec::new()
    } else {
        match solved.value_grid(&xs) {
            Ok(v) => v,
            Err(e) => {
                note = Some(format!("value grid unavailable: {e}"));
                Vec::new()
            }
        }
    };
    w.with("value.csv", |b| {
        writeln!(b, "x,g,V,se")?;
        for (x, v) in xs.iter().zip(&values) {
            writeln!(b, "{x},{},{},{}", f.eval(*x), v.mean, v.se)?;
        }
        Ok(())
    })?;
    w.with("value.tsv", |b| {
        writeln!(b, "x\tg\tV")?;
        for (x, v) in xs.iter().zip(&values) {
            writeln!(b, "{x}\t{}\t{}", f.eval(*x), v.mean)?;
        }
        Ok(())
    })?;
    let trace = &solved.solution.ratio_trace;
    w.with("ratio.csv", |b| {
        writeln!(b, "x,rho,se")?;
        for p in trace {
            writeln!(b, "{},{},{}", p.x, p.rho, p.se)?;
        }
        Ok(())
    })?;
    w.with("ratio.tsv", |b| {
        writeln!(b, "x\trho\tone")?;
        for p in trace {
            writeln!(b, "{}\t{}\t1", p.x, p.rho)?;
        }
        Ok(())
    })?;
    Ok(note)
}

fn run_solve(spec: &ProblemSpec, w: &mut Writer) -> Result<(Status, Value), RunError> {
    let solved = solved_for(spec)?;
    let regime = &solved.solution.regime;
    let step = solved.law().as_lattice().map(|l| l.step());
    let grid = spec.numerics.grid.unwrap_or_else(|| default_grid(regime, step));
    let note = write_value_files(w, &solved, &grid)?;
    let status = regime_status(regime);
    Ok((status, json!({ "solution": solved.solution, "grid": grid, "note": note })))
}

fn run_oracle(spec: &ProblemSpec, w: &mut Writer) -> Result<(Status, Value), RunError> {
    let law = spec.walk()?;
    let step = law.as_lattice().ok_or(OracleError::NotLattice)?.step();
    let f = spec.reward()?;
    let solved = solver::solve(&law, &f, spec.q, &spec.solve_options())?;
    let grid = spec.numerics.grid.unwrap_or_else(|| {
        let c = solved.solution.regime.threshold().filter(|u| u.is_finite()).unwrap_or(0.0);
        let k = (c / step).floor();
        Grid { lo: (k - 40.0) * step, hi: (k + 40.0) * step, points: 81 }
    });
    let dp = oracle::value_iteration(&law, &f, spec.q, grid.lo, grid.hi, &spec.numerics.dp)?;
    w.with("dp.csv", |b| dp.write_csv(b))?;
    let one = oracle::check_one_sided(&dp);
    let cv = oracle::cross_validate(&solved, &dp, step);
    let status = if solved.solution.regime.is_inconclusive() { Status::Inconclusive } else { Status::Ok };
    Ok((
        status,
        json!({
            "solution": solved.solution,
            "dp": { "iterations": dp.iterations, "residual": dp.residual, "converged": dp.converged, "grid": grid },
            "one_sided": one,
            "cross_validation": cv,
        }),
    ))
}

fn run_sequence(spec: &ProblemSpec, w: &mut Writer) -> Result<(Status, Value), RunError> {
    let model = spec.levy()?;
    let f = spec.reward()?;
    let seq = levy::threshold_sequence(model, &f, spec.q, spec.numerics.max_level, &spec.solve_options())?;
    w.with("sequence.csv", |b| seq.write_csv(b))?;
    w.with("sequence.tsv", |b| {
        writeln!(b, "level\tu")?;
        for l in &seq.levels {
            writeln!(b, "{}\t{}", l.level, l.u)?;
            writeln!(b, "{}\t{}", l.level + 1, l.u)?;
        }
        Ok(())
    })?;
    let status = if seq.levels.iter().any(|l| l.regime.is_inconclusive()) { Status::Inconclusive } else { Status::Ok };
    Ok((status, json!({ "regularity": model.regularity_of_zero(), "sequence": seq })))
}

fn run_smoothfit(spec: &ProblemSpec, w: &mut Writer) -> Result<(Status, Value), RunError> {
    let model = spec.levy()?;
    let f = spec.reward()?;
    let opts = SmoothFitOptions { solve: spec.solve_options(), ..spec.numerics.smoothfit.clone() };
    let report = smoothfit::analyze(model, &f, spec.q, &opts)?;
    w.with("smoothfit.csv", |b| report.write_csv(b))?;
    let borderline = report.criterion_a1.is_some_and(|a| a.outcome == smoothfit::A1Outcome::Borderline);
    Ok((if borderline { Status::Inconclusive } else { Status::Ok }, json!({ "smoothfit": report })))
}

fn run_classify(spec: &ProblemSpec) -> Result<(Status, Value), RunError> {
    let f = spec.reward()?;
    let law = match spec.process()? {
        Process::Walk(_) => spec.walk()?,
        Process::Levy(m) => m.step_law(0)?,
    };
    let verdict = classify::light_tail_characterization(&law, &f, spec.q);
    let sufficient_finite = classify::sufficient_finite(&law, &f, spec.q);
    let sufficient_infinite = classify::sufficient_infinite(&law, &f, spec.q);
    let novikov_shiryaev = classify::novikov_shiryaev(&law, &f, spec.q);
    let status = if verdict.verdict == Verdict::Inconclusive { Status::Inconclusive } else { Status::Ok };
    Ok((
        status,
        json!({
            "classification": verdict,
            "sufficient_finite_delta": sufficient_finite,
            "sufficient_infinite": sufficient_infinite,
            "novikov_shiryaev": novikov_shiryaev,
        }),
    ))
}

fn run_bench(spec: &ProblemSpec) -> (Status, Value) {
    let outcomes = bench::run_all(spec.seed());
    let status = if outcomes.iter().all(|c| c.pass) { Status::Ok } else { Status::Failed };
    (status, json!({ "criteria": outcomes }))
}
