//! Runs the nine reference criteria and prints one line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use onesided::bench::{criteria, DEFAULT_SEED};

fn main() -> ExitCode {
    // `cargo test -- <filter>` passes arguments through; ignore everything
    // except an optional criterion number.
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, criterion) in criteria().into_iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = criterion(DEFAULT_SEED);
        println!("{} [{:.1}s]", outcome.line(), start.elapsed().as_secs_f64());
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria fail");
        ExitCode::FAILURE
    }
}
