//! Reward inference from demonstrations on a small FruitGrid, starting from a
//! pre-trained basis and from scratch. Prints value difference, reward MSE
//! and behavior distribution for growing demonstration counts.
//!
//!     cargo run --release --example infer_reward

use basis::config::RunConfig;
use basis::envs::{FruitGrid, FruitGridConfig};
use basis::eval::{PretrainKind, Setting, Variant};
use basis::irl::IrlConfig;
use basis::pretrain::PretrainConfig;

fn main() -> basis::Result<()> {
    let tau = 0.1;
    let mut config = RunConfig::default();
    config.env.fruitgrid = FruitGridConfig {
        grid_size: 4,
        colors: 2,
        fruits_per_color: 1,
        horizon: 20,
        respawn: true,
    };
    config.pretrain = PretrainConfig {
        num_tasks: 2,
        d: 4,
        total_iterations: 1500,
        lr: 1e-3,
        lr_final_fraction: 0.1,
        exploration_temperature: tau,
        psi_hidden: Vec::new(),
        task_crossed: true,
        taskless_itd: true,
        ..PretrainConfig::default()
    };
    config.irl = IrlConfig {
        temperature: tau,
        lr: 1e-3,
        bc_psi_lr_scale: 0.1,
        ..IrlConfig::default()
    };
    config.expert.temperature = tau;
    config.eval.heldout_demos = 20;

    let setting = Setting::prepare(FruitGrid::unrewarded(config.env.fruitgrid.clone())?, &config)?;
    println!(
        "test task {:?}, expert return {:.3}, expert distribution {:.3?}",
        setting.suite.test.reward_weights, setting.expert_return, setting.expert_distribution
    );
    let seed = 0;
    let demos = setting.demos(seed, 100)?;
    let basis = setting.pretrain(PretrainKind::Successor, seed)?;

    println!("{:<16} {:>4} {:>10} {:>10}  distribution", "variant", "N", "value diff", "reward MSE");
    for variant in [Variant::Basis, Variant::NoPretraining] {
        for n in [3, 10, 30, 100] {
            let init = variant.pretraining().map(|_| &basis);
            let cell = setting.run_cell(variant, init, seed, &demos, n)?;
            let r = &cell.row;
            println!(
                "{:<16} {n:>4} {:>10.3} {:>10.4}  {:.3?}",
                variant.name(),
                r.value_difference,
                r.reward_mse.unwrap_or(f64::NAN),
                r.distribution
            );
            if n == 100 {
                println!("{:<16} inferred w_e {:.3?}", "", cell.model.w_e());
            }
        }
    }
    Ok(())
}
