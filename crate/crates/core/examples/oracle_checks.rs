//! The numerical self-checks: soft value iteration fixed points, the
//! soft-optimal chain policy, closed-form successor features, tabular ITD
//! convergence, gradient checks and enumeration frequencies.
//!
//!     cargo run --release --example oracle_checks [-- <config.toml>]

use basis::config::RunConfig;
use basis::oracle::run_oracle_suite;

fn main() -> basis::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(p) => RunConfig::load(std::path::Path::new(&p))?,
        None => RunConfig::default(),
    };
    let report = run_oracle_suite(&config)?;
    for c in &report.checks {
        println!("{}", c.line());
    }
    println!("{}", if report.passed() { "all checks passed" } else { "some checks FAILED" });
    Ok(())
}
