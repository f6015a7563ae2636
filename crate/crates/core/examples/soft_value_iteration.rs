//! Solve a seeded random MDP with soft value iteration at a few temperatures
//! and compare the soft-optimal policy with the greedy one.
//!
//!     cargo run --release --example soft_value_iteration

use basis::mdp::{
    discounted_return_exact, random_mdp, soft_backup_residual, soft_value_iteration_with, softmax_policy, PolicyTable,
};

fn main() -> basis::Result<()> {
    let mdp = random_mdp(7, 30, 4, 1, 0.9);
    println!("{} states, {} actions, gamma {}", mdp.num_states(), mdp.num_actions(), mdp.gamma());
    println!("{:>6} {:>6} {:>10} {:>12} {:>12}", "tau", "sweeps", "residual", "soft return", "greedy ret.");
    for tau in [1.0, 0.3, 0.1, 0.01] {
        let sol = soft_value_iteration_with(&mdp, 0, tau, 1e-10, 100_000)?;
        let residual = soft_backup_residual(&mdp, 0, &sol.q, tau);
        let soft = softmax_policy(&sol.q, tau)?;
        let greedy = PolicyTable::greedy(&sol.q);
        println!(
            "{tau:>6} {:>6} {residual:>10.1e} {:>12.4} {:>12.4}",
            sol.residuals.len(),
            discounted_return_exact(&mdp, &soft, 0)?,
            discounted_return_exact(&mdp, &greedy, 0)?
        );
    }
    // as tau shrinks the softmax policy approaches the greedy one
    let sol = soft_value_iteration_with(&mdp, 0, 0.01, 1e-10, 100_000)?;
    let soft = softmax_policy(&sol.q, 0.01)?;
    println!("state 0 action probabilities at tau=0.01: {:?}", soft.row(0));
    Ok(())
}
