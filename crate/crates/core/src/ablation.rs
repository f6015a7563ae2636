//! Baselines for the ablation grid.
//!
//! - Q-only pre-training: the successor head with one cumulant and every
//!   preference pinned at 1 is a task-conditioned Q network trained with the
//!   same soft backup. Its IRL stage is behavioral cloning on Q.
//! - Demonstration pre-training: instead of RL, every pre-training task is
//!   learned with the BC and ITD losses from its own expert demonstrations.

use std::hash::Hash;

use rand::seq::SliceRandom;

use crate::envs::{TaskEnvironment, TaskSpec};
use crate::error::{Error, Result};
use crate::expert::{sample_trajectories, Expert};
use crate::irl::{bc_groups, planned_steps, IrlConfig};
use crate::model::{BasisModel, Hyper, ModelSpec, TransitionBatch, PSI, TRUNK, W};
use crate::nn::Adam;
use crate::pretrain::{annealed, run_pretraining_with, Objective, PretrainConfig, PretrainResult};
use crate::rng::SeedStreams;

/// Multi-task soft Q-learning without the successor decomposition.
pub fn pretrain_q_only<E>(env: &E, tasks: &[TaskSpec], config: &PretrainConfig, seeds: &SeedStreams) -> Result<PretrainResult>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    run_pretraining_with(env, tasks, config, Objective::QOnly, seeds)
}

/// IRL settings for a Q-only model: behavioral cloning only.
pub fn q_only_irl_config(config: &IrlConfig) -> IrlConfig {
    IrlConfig {
        itd_weight: 0.0,
        bc_weight: if config.bc_weight > 0.0 { config.bc_weight } else { 1.0 },
        ..config.clone()
    }
}

/// Pre-training from demonstrations of every pre-training task. `experts[k]`
/// demonstrates task slot `k`; each contributes `demos_per_task` episodes.
/// The cumulant head keeps its random initialisation, as in the IRL stage.
pub fn pretrain_from_demos<E>(
    spec: ModelSpec,
    experts: &[Expert<E>],
    demos_per_task: usize,
    config: &IrlConfig,
    seeds: &SeedStreams,
) -> Result<BasisModel>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    config.validate()?;
    let k_total = experts.len();
    if k_total != spec.task_slots {
        return Err(Error::validation(format!(
            "{k_total} experts for a model with {} task slots",
            spec.task_slots
        )));
    }
    let mut model = BasisModel::new(spec, k_total, &mut seeds.rng("init"))?;
    let mut batch_all = TransitionBatch::default();
    for (k, ex) in experts.iter().enumerate() {
        let env = ex.env();
        let demo_seed = seeds.child_indexed("demos", k as u64).root();
        for t in sample_trajectories(ex, demos_per_task, 0, demo_seed)? {
            let n = t.steps.len();
            for (i, (s, a)) in t.steps.iter().enumerate() {
                let (next, next_action, done) = match t.steps.get(i + 1) {
                    Some((sn, an)) => (env.input(sn, Some(k), k_total), *an, false),
                    None => (env.input(s, Some(k), k_total), 0, true),
                };
                debug_assert!(i + 1 < n || done);
                batch_all.push(env.input(s, Some(k), k_total), *a, 0.0, next, next_action, k, done);
            }
        }
    }
    let rows = batch_all.len();
    if rows == 0 {
        return Err(Error::validation("no demonstration steps for pre-training"));
    }
    let hyper = Hyper {
        gamma: config.gamma,
        temperature: config.temperature,
    };
    let total = planned_steps(config, rows);
    let n = model.params.values.len();
    let (mut bc_opt, mut itd_opt) = (Adam::new(n), Adam::new(n));
    let bc_ranges = model.block_ranges(&[TRUNK, PSI, W]);
    let itd_ranges = model.block_ranges(&[TRUNK, PSI]);
    let mut rng = seeds.rng("irl");
    let mut order: Vec<usize> = (0..rows).collect();
    let mut step = 0;
    while step < total {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step >= total {
                break;
            }
            let lr = config.lr * annealed(config.lr_final_fraction, step, total);
            let b = batch_all.select(chunk);
            if config.bc_weight > 0.0 {
                let (_, g) = model.loss_bc(&b, hyper)?;
                let groups = bc_groups(&bc_ranges, lr * config.bc_weight, config.bc_psi_lr_scale);
                bc_opt.step_groups(&mut model.params.values, &g.values, &groups)?;
            }
            if config.itd_weight > 0.0 {
                let (_, g) = model.loss_itd(&b, hyper)?;
                itd_opt.step(&mut model.params.values, &g.values, lr * config.itd_weight, &itd_ranges)?;
            }
            step += 1;
            if step % config.target_update_interval == 0 {
                model.sync_target();
            }
        }
    }
    model.snap_to_f32();
    Ok(model)
}
