//! Multi-task pre-training of cumulants, successor features and task
//! preferences on a 3x3 FruitGrid, then a comparison of each task's greedy
//! return with the soft-optimal oracle and a checkpoint round trip.
//!
//!     cargo run --release --example pretrain [-- <iterations>]

use basis::checkpoint::{self, CheckpointMeta, ModelKind};
use basis::envs::{enumerate_tabular, FruitGrid, FruitGridConfig, TaskEnvironment};
use basis::mdp::{argmax, finite_horizon_return, soft_value_iteration_with, Environment as _, PolicyTable};
use basis::pretrain::{run_pretraining, PretrainConfig};
use basis::rng::SeedStreams;

fn main() -> basis::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1500);
    let env = FruitGrid::unrewarded(FruitGridConfig {
        grid_size: 3,
        colors: 2,
        fruits_per_color: 1,
        horizon: 20,
        respawn: true,
    })?;
    let suite = env.task_suite(2, 0)?;
    let config = PretrainConfig {
        num_tasks: 2,
        d: 4,
        total_iterations: iterations,
        lr: 1e-3,
        lr_final_fraction: 0.1,
        exploration_temperature: 0.1,
        psi_hidden: Vec::new(),
        task_crossed: true,
        taskless_itd: true,
        eval_interval: iterations / 5,
        ..PretrainConfig::default()
    };
    let res = run_pretraining(&env, &suite.train, &config, &SeedStreams::new(0))?;
    println!(
        "{} environment steps, {} gradient steps, held-out reward loss {:.2e}",
        res.env_steps, res.gradient_steps, res.heldout_reward_loss
    );
    for e in &res.evals {
        println!("  iteration {:>5} task {}: greedy return {:.2}", e.iteration, e.task, e.greedy_return);
    }

    let en = enumerate_tabular(&env, &suite.train, config.gamma, 200_000)?;
    let na = env.num_actions();
    for (k, task) in suite.train.iter().enumerate() {
        let sol = soft_value_iteration_with(&en.mdp, k, config.exploration_temperature, 1e-8, 100_000)?;
        let oracle = finite_horizon_return(&en.mdp, &PolicyTable::greedy(&sol.q), k, env.horizon())?;
        let learned = PolicyTable::from_fn(en.mdp.num_states(), na, |s| {
            let q = res
                .model
                .task_q_values(&env.input(&en.states[s], Some(k), config.num_tasks), k)
                .expect("input matches the model");
            let mut row = vec![0.0; na];
            row[argmax(&q)] = 1.0;
            row
        })?;
        let ret = finite_horizon_return(&en.mdp, &learned, k, env.horizon())?;
        println!("task {} ({}): greedy {ret:.3}, oracle {oracle:.3}", k, task.description);
    }

    let dir = tempfile::tempdir().map_err(|e| basis::Error::Validation(e.to_string()))?;
    let path = dir.path().join("basis.ckpt");
    let meta = CheckpointMeta {
        kind: ModelKind::Basis,
        freeze_phi: true,
        temperature: config.exploration_temperature,
    };
    checkpoint::save(&path, &res.model, &meta)?;
    let (loaded, _) = checkpoint::load(&path)?;
    println!(
        "checkpoint {} bytes, parameters identical after reload: {}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        loaded.params.values == res.model.params.values
    );
    Ok(())
}
