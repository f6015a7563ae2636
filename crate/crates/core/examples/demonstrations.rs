//! Build the exact soft-optimal demonstrator of a FruitGrid test task, sample
//! reward-free demonstrations, and round-trip them through the text format
//! (the rewards go to a separate evaluation-only file).
//!
//!     cargo run --release --example demonstrations [-- <output dir>]

use std::path::PathBuf;
use std::sync::Arc;

use basis::envs::{enumerate_tabular, FruitGrid, FruitGridConfig, TaskEnvironment};
use basis::expert::{exact_expert, read_demos, rewards_path, sample_demos, write_demos, ExpertConfig};

fn main() -> basis::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let env = FruitGrid::unrewarded(FruitGridConfig {
        grid_size: 4,
        colors: 3,
        fruits_per_color: 1,
        horizon: 30,
        respawn: true,
    })?;
    let suite = env.task_suite(3, 0)?;
    let test_env = env.with_task(&suite.test)?;
    let config = ExpertConfig {
        temperature: 0.05,
        ..ExpertConfig::default()
    };
    let en = Arc::new(enumerate_tabular(&test_env, std::slice::from_ref(&suite.test), config.gamma, config.state_cap)?);
    let expert = exact_expert(&test_env, en, 0, &config)?;
    println!("task {:?}: expert return over {} steps {:.3}", suite.test.reward_weights, env.horizon(), expert.reference_return);

    let demos = sample_demos(&expert, 20, 0, 3, 42)?;
    println!("{} trajectories, {} steps, header {:?}", demos.len(), demos.total_steps(), demos.meta());
    let first = &demos.trajectories()[0];
    println!(
        "first trajectory: actions {:?}",
        first.steps.iter().map(|s| s.action).collect::<Vec<_>>()
    );

    let path = out.join("fruitgrid_demos.txt");
    write_demos(&path, &demos)?;
    let back = read_demos(&path)?;
    println!("wrote {} and {}", path.display(), rewards_path(&path).display());
    println!("read back identical: {}", back == demos);
    println!("learner view keeps rewards: {}", back.learner_view().has_rewards());
    Ok(())
}
