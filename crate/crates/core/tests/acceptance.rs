//! Full-budget acceptance run: one line per criterion, nonzero exit on any failure.
//!
//! `AFFREC_ACCEPTANCE_SEED` overrides the seed and `AFFREC_WORKERS` the thread count.

use std::process::ExitCode;

use critical_affine::acceptance::{self, Budget};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> ExitCode {
    let seed = env_or("AFFREC_ACCEPTANCE_SEED", acceptance::DEFAULT_SEED);
    let workers = env_or("AFFREC_WORKERS", 1usize);
    println!("acceptance suite: seed {seed}, full budget, {workers} worker(s)");
    let summary = acceptance::run_all(seed, Budget::Full, workers, |r| println!("{r}"));
    let passed = summary.criteria.iter().filter(|c| c.passed).count();
    println!("{passed} of {} criteria passed", summary.criteria.len());
    if summary.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
