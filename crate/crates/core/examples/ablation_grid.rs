//! A complete ablation grid (variants x demonstration counts x seeds) from a
//! TOML run configuration, written as report.csv, summary.csv and SVG
//! figures.
//!
//!     cargo run --release --example ablation_grid -- configs/smoke.toml out/grid

use std::path::PathBuf;

use basis::config::{EnvVisitor, RunConfig};
use basis::envs::TaskEnvironment;
use basis::eval::{run_experiment_grid, MetricsReport};
use basis::plot::render_report;

struct Grid<'a>(&'a RunConfig);

impl EnvVisitor for Grid<'_> {
    type Output = MetricsReport;

    fn visit<E>(self, env: E) -> basis::Result<MetricsReport>
    where
        E: TaskEnvironment + 'static,
        E::State: Eq + std::hash::Hash + Send + Sync,
    {
        run_experiment_grid(env, self.0)
    }
}

fn main() -> basis::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(p) => RunConfig::load(std::path::Path::new(&p))?,
        None => RunConfig::from_toml_str(include_str!("../../../configs/smoke.toml"))?,
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("basis_grid"));
    std::fs::create_dir_all(&out).map_err(|e| basis::Error::Validation(e.to_string()))?;

    let report = config.env.visit(Grid(&config))?;
    report.write_dir(&out)?;
    print!("{}", report.summary_table());
    for p in render_report(&report, &out)? {
        println!("wrote {}", p.display());
    }
    if let Some(meta) = &report.meta {
        println!(
            "expert return {:.3} ({} evaluation), {:.1}s",
            meta.expert_return, meta.evaluation, meta.runtime_seconds
        );
    }
    Ok(())
}
