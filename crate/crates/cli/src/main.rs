use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use onesided::run::{self, ProblemSpec, Report, Task};

/// Threshold solutions of one-sided optimal stopping problems.
#[derive(Parser)]
#[command(name = "onesided", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the threshold and write value and ratio tables.
    Solve(Common),
    /// Cross-check the solver against value iteration on a lattice.
    Oracle(Common),
    /// Dyadic threshold sequence of a Lévy model.
    Levy(Common),
    /// Smooth-fit analysis at the threshold.
    Smoothfit(Common),
    /// Finiteness classification of the threshold.
    Classify(Common),
    /// Run the built-in benchmark suite.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Problem description (JSON). Optional for `bench`.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the runtime choose.
    #[arg(long, env = "ONESIDED_THREADS")]
    threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (Task, &Common) {
        match self {
            Command::Solve(c) => (Task::Solve, c),
            Command::Oracle(c) => (Task::OracleCheck, c),
            Command::Levy(c) => (Task::LevySequence, c),
            Command::Smoothfit(c) => (Task::Smoothfit, c),
            Command::Classify(c) => (Task::Classify, c),
            Command::Bench(c) => (Task::Bench, c),
        }
    }
}

fn execute(task: Task, args: &Common) -> Result<Report, run::RunError> {
    let mut spec = match &args.spec {
        Some(path) => ProblemSpec::read(path)?,
        None if task == Task::Bench => ProblemSpec::from_json("{}")?,
        None => return Err(run::RunError::Spec("--spec is required".into())),
    };
    match spec.task {
        Some(t) if t != task => {
            return Err(run::RunError::Spec(format!("spec is for task `{}` but the subcommand runs `{}`", t.name(), task.name())));
        }
        _ => spec.task = Some(task),
    }
    if let Some(seed) = args.seed {
        spec.numerics.seed = Some(seed);
    }
    run::run(&spec, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = cli.command.parts();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(task, args) {
        Ok(report) => {
            if task == Task::Bench {
                if let Some(list) = report.result["criteria"].as_array() {
                    for c in list {
                        let pass = c["pass"].as_bool().unwrap_or(false);
                        println!("{:>2}  {}  {}", c["id"], if pass { "PASS" } else { "FAIL" }, c["name"].as_str().unwrap_or(""));
                    }
                }
            }
            println!("{}: {:?}, files in {}", task.name(), report.status, args.out.display());
            ExitCode::from(report.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use onesided::run::Status;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn status_codes() {
        assert_eq!(Status::Ok.exit_code(), 0);
        assert_eq!(Status::Inconclusive.exit_code(), 2);
        assert_eq!(Status::Failed.exit_code(), 1);
    }
}
