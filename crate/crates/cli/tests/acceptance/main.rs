//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any
//! criterion fails or overruns its time budget.
//!
//! `cargo test -p scenecam-cli --test acceptance [-- <name filter>]`
//! Set `UPDATE_GOLDEN=1` to regenerate the committed fixtures and golden outputs.

mod alignment;
mod geometry;
mod golden;
mod http;
mod metrics;
mod renderer;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "geometry",
            budget: Duration::from_secs(5),
            run: geometry::run,
        },
        Criterion {
            name: "alignment",
            budget: Duration::from_secs(30),
            run: alignment::run,
        },
        Criterion {
            name: "renderer",
            budget: Duration::from_secs(10),
            run: renderer::run,
        },
        Criterion {
            name: "sampler",
            budget: Duration::from_secs(60),
            run: sampler::run,
        },
        Criterion {
            name: "metrics",
            budget: Duration::from_secs(5),
            run: metrics::run,
        },
        Criterion {
            name: "golden_pipeline",
            budget: Duration::from_secs(120),
            run: golden::run,
        },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), c.budget.as_secs());
        match result {
            Ok(detail) if elapsed <= c.budget => println!("PASS {:<16} [{timing}] {detail}", c.name),
            Ok(detail) => {
                failed += 1;
                println!("FAIL {:<16} [{timing}] over time budget; {detail}", c.name)
            }
            Err(reason) => {
                failed += 1;
                println!("FAIL {:<16} [{timing}] {reason}", c.name)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
