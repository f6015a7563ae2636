//! The two task families: FruitGrid and LaneWorld. Prints their task suites,
//! observation sizes, a uniform-policy rollout and the exact state counts of
//! the small variants.
//!
//!     cargo run --release --example environments

use basis::envs::{
    enumerate_tabular, FruitGrid, FruitGridConfig, LaneWorld, LaneWorldConfig, TaskEnvironment, DEFAULT_STATE_CAP,
};
use basis::eval::behavior_distribution;
use basis::mdp::{expected_return, rollout, ReturnKind};

fn describe<E>(name: &str, env: &E, num_tasks: usize, cap: usize) -> basis::Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + std::hash::Hash + Send + Sync,
{
    let suite = env.task_suite(num_tasks, 0)?;
    println!("== {name}: {} actions, {} features, horizon {}", env.num_actions(), env.feature_dim(), env.horizon());
    for t in &suite.train {
        println!("  train task {}: {:?} ({})", t.id, t.reward_weights, t.description);
    }
    println!("  test task: {:?} ({})", suite.test.reward_weights, suite.test.description);

    let test_env = env.with_task(&suite.test)?;
    let na = env.num_actions();
    let uniform = move |_: &E::State| vec![1.0 / na as f64; na];
    let traj = rollout(&test_env, &uniform, env.horizon(), 1)?;
    println!("  one uniform rollout: {} steps, return {:.2}", traj.steps.len(), traj.episode_return);
    let ret = expected_return(&test_env, &uniform, 200, env.horizon(), ReturnKind::Undiscounted, 2)?;
    println!("  uniform policy return {:.3} +- {:.3}", ret.mean, ret.std_err);
    let dist = behavior_distribution(&test_env, &uniform, 200, 3)?;
    println!("  uniform behavior distribution {dist:.3?}");

    let mut tasks = vec![suite.test.clone()];
    tasks.extend(suite.train.iter().cloned());
    match enumerate_tabular(&test_env, &tasks, 0.9, cap) {
        Ok(e) => println!("  enumerated: {} canonical states", e.mdp.num_states()),
        Err(e) => println!("  not enumerated: {e}"),
    }
    Ok(())
}

fn main() -> basis::Result<()> {
    let small = FruitGridConfig {
        grid_size: 3,
        colors: 2,
        fruits_per_color: 1,
        horizon: 10,
        respawn: true,
    };
    describe("FruitGrid 3x3", &FruitGrid::unrewarded(small)?, 2, DEFAULT_STATE_CAP)?;
    describe("FruitGrid desk", &FruitGrid::unrewarded(FruitGridConfig::desk())?, 3, 400_000)?;
    describe("LaneWorld", &LaneWorld::unrewarded(LaneWorldConfig::default())?, 3, DEFAULT_STATE_CAP)?;
    Ok(())
}
