use nalgebra::DMatrix;

use super::{PolicyTable, PsiTable, QTable, TabularMdp};
use crate::error::{Error, Result};

/// Largest number of state-action pairs handled by the dense solvers.
pub const DENSE_SOLVE_CAP: usize = 4096;

/// Numerically stable `log(sum(exp(x)))`.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Soft maximum `temperature * log(sum(exp(q / temperature)))`.
fn soft_max(q: &[f64], temperature: f64) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + temperature * q.iter().map(|v| ((v - m) / temperature).exp()).sum::<f64>().ln()
}

/// Boltzmann distribution of one row, with max-subtraction.
pub fn softmax_row(q: &[f64], temperature: f64) -> Vec<f64> {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = q.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    p
}

#[derive(Clone, Debug)]
pub struct SoftViSolution {
    pub q: QTable,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

/// Soft value iteration at temperature 1.
pub fn soft_value_iteration(mdp: &TabularMdp, task: usize, tol: f64, max_iters: usize) -> Result<QTable> {
    soft_value_iteration_with(mdp, task, 1.0, tol, max_iters).map(|s| s.q)
}

/// Iterates `Q(s,a) = r(s,a) + gamma * E[V(s')]` with
/// `V(s) = temperature * logsumexp(Q(s,.) / temperature)` until a sweep
/// changes no entry by more than `tol`. Sweeps are in place (Gauss-Seidel):
/// `V(s)` is refreshed as soon as the row of `s` is updated. Terminal states
/// keep `Q = 0`.
pub fn soft_value_iteration_with(
    mdp: &TabularMdp,
    task: usize,
    temperature: f64,
    tol: f64,
    max_iters: usize,
) -> Result<SoftViSolution> {
    mdp.check_task(task)?;
    if !(tol > 0.0) {
        return Err(Error::validation("tolerance must be positive"));
    }
    if !(temperature > 0.0) {
        return Err(Error::validation("temperature must be positive"));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let inv = 1.0 / temperature;
    let mut q = vec![0.0; ns * na];
    let mut v: Vec<f64> = (0..ns)
        .map(|s| if mdp.is_terminal(s) { 0.0 } else { soft_max(&q[s * na..(s + 1) * na], temperature) })
        .collect();
    let mut residuals = Vec::new();
    let rewards = mdp.rewards(task);
    for _ in 0..max_iters {
        let mut residual: f64 = 0.0;
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            let row = s * na..(s + 1) * na;
            let mut m = f64::NEG_INFINITY;
            for sa in row.clone() {
                let (next, prob) = mdp.row_index(sa);
                let mut ev = 0.0;
                for (&n, &p) in next.iter().zip(prob) {
                    ev += p * v[n as usize];
                }
                let new = rewards[sa] + gamma * ev;
                residual = residual.max((new - q[sa]).abs());
                q[sa] = new;
                m = m.max(new);
            }
            let z: f64 = q[row].iter().map(|x| ((x - m) * inv).exp()).sum();
            v[s] = m + temperature * z.ln();
        }
        residuals.push(residual);
        if !residual.is_finite() {
            return Err(Error::Numerical("soft value iteration produced non-finite values".into()));
        }
        if residual <= tol {
            return Ok(SoftViSolution {
                q: QTable {
                    num_states: ns,
                    num_actions: na,
                    values: q,
                },
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Sup-norm residual of the soft Bellman backup at `q`.
pub fn soft_backup_residual(mdp: &TabularMdp, task: usize, q: &QTable, temperature: f64) -> f64 {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let v: Vec<f64> = (0..ns)
        .map(|s| {
            if mdp.is_terminal(s) {
                0.0
            } else {
                soft_max(q.row(s), temperature)
            }
        })
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let target = if mdp.is_terminal(s) {
                0.0
            } else {
                let (next, prob) = mdp.row(s, a);
                mdp.reward(task, s, a) + mdp.gamma() * next.iter().zip(prob).map(|(&n, &p)| p * v[n as usize]).sum::<f64>()
            };
            worst = worst.max((q.get(s, a) - target).abs());
        }
    }
    worst
}

/// Row-wise Boltzmann policy of `q`.
pub fn softmax_policy(q: &QTable, temperature: f64) -> Result<PolicyTable> {
    if !(temperature > 0.0) {
        return Err(Error::validation("temperature must be positive"));
    }
    q.validate()?;
    let mut probs = Vec::with_capacity(q.values.len());
    for s in 0..q.num_states {
        probs.extend(softmax_row(q.row(s), temperature));
    }
    Ok(PolicyTable {
        num_states: q.num_states,
        num_actions: q.num_actions,
        probs,
    })
}

fn check_policy(mdp: &TabularMdp, policy: &PolicyTable) -> Result<()> {
    if policy.num_states != mdp.num_states() || policy.num_actions != mdp.num_actions() {
        return Err(Error::validation("policy shape does not match MDP"));
    }
    policy.validate()
}

fn check_features(mdp: &TabularMdp, phi: &PsiTable) -> Result<()> {
    if phi.num_states != mdp.num_states() || phi.num_actions != mdp.num_actions() {
        return Err(Error::validation("cumulant table shape does not match MDP"));
    }
    phi.validate()
}

/// Solves `(I - gamma * P_pi) psi = phi` directly, one right-hand side per
/// cumulant dimension. `P_pi(s,a -> s',a') = P(s'|s,a) * pi(a'|s')`; terminal
/// pairs are pinned to zero.
pub fn exact_successor_features(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    phi: &PsiTable,
    gamma: f64,
) -> Result<PsiTable> {
    check_policy(mdp, policy)?;
    check_features(mdp, phi)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::validation("gamma must lie in [0, 1)"));
    }
    let (ns, na, d) = (mdp.num_states(), mdp.num_actions(), phi.dim);
    let n = ns * na;
    if n > DENSE_SOLVE_CAP {
        return Err(Error::validation(format!(
            "{n} state-action pairs exceed the dense solve cap {DENSE_SOLVE_CAP}"
        )));
    }
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, d);
    for s in 0..ns {
        if mdp.is_terminal(s) {
            continue;
        }
        for a in 0..na {
            let row = s * na + a;
            for j in 0..d {
                rhs[(row, j)] = phi.get(s, a)[j];
            }
            let (next, prob) = mdp.row(s, a);
            for (&sn, &p) in next.iter().zip(prob) {
                let sn = sn as usize;
                if mdp.is_terminal(sn) {
                    continue;
                }
                for an in 0..na {
                    a_mat[(row, sn * na + an)] -= gamma * p * policy.prob(sn, an);
                }
            }
        }
    }
    let lu = a_mat.clone().lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular successor-feature system".into()))?;
    let resid = (&a_mat * &sol - &rhs).amax();
    if !(resid <= 1e-8) {
        return Err(Error::Numerical(format!("successor-feature solve residual {resid:e}")));
    }
    let mut out = PsiTable::zeros(ns, na, d);
    for row in 0..n {
        for j in 0..d {
            out.values[row * d + j] = sol[(row, j)];
        }
    }
    Ok(out)
}

/// Fixed-point iteration `psi <- phi + gamma * E[psi(s', a')]` until the
/// sup-norm change is at most `tol`.
pub fn iterative_successor_features(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    phi: &PsiTable,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PsiTable> {
    check_policy(mdp, policy)?;
    check_features(mdp, phi)?;
    let (ns, na, d) = (mdp.num_states(), mdp.num_actions(), phi.dim);
    let mut psi = PsiTable::zeros(ns, na, d);
    let mut expected = vec![0.0; ns * d];
    let mut last = f64::INFINITY;
    for _ in 0..max_iters {
        // expected[s'] = sum_a' pi(a'|s') psi(s', a')
        expected.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                for (e, v) in expected[s * d..(s + 1) * d].iter_mut().zip(psi.get(s, a)) {
                    *e += p * v;
                }
            }
        }
        let mut change: f64 = 0.0;
        let mut next_psi = PsiTable::zeros(ns, na, d);
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                let (next, prob) = mdp.row(s, a);
                let out = next_psi.get_mut(s, a);
                out.copy_from_slice(phi.get(s, a));
                for (&sn, &p) in next.iter().zip(prob) {
                    let sn = sn as usize;
                    for (o, e) in out.iter_mut().zip(&expected[sn * d..(sn + 1) * d]) {
                        *o += gamma * p * e;
                    }
                }
            }
        }
        for (a, b) in next_psi.values.iter().zip(&psi.values) {
            change = change.max((a - b).abs());
        }
        psi = next_psi;
        last = change;
        if change <= tol {
            return Ok(psi);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: last,
    })
}

fn reward_as_features(mdp: &TabularMdp, task: usize) -> PsiTable {
    PsiTable {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        dim: 1,
        values: mdp.rewards(task).to_vec(),
    }
}

/// `Q^pi` by a dense linear solve (policy evaluation as one-dimensional successor features).
pub fn policy_q_exact(mdp: &TabularMdp, policy: &PolicyTable, task: usize) -> Result<QTable> {
    mdp.check_task(task)?;
    let psi = exact_successor_features(mdp, policy, &reward_as_features(mdp, task), mdp.gamma())?;
    Ok(QTable {
        num_states: psi.num_states,
        num_actions: psi.num_actions,
        values: psi.values,
    })
}

/// `Q^pi` by fixed-point iteration; suitable for large sparse MDPs.
pub fn policy_q_iterative(mdp: &TabularMdp, policy: &PolicyTable, task: usize, tol: f64) -> Result<QTable> {
    mdp.check_task(task)?;
    let psi = iterative_successor_features(mdp, policy, &reward_as_features(mdp, task), mdp.gamma(), tol, 100_000)?;
    Ok(QTable {
        num_states: psi.num_states,
        num_actions: psi.num_actions,
        values: psi.values,
    })
}

/// Expected discounted return from the initial distribution.
pub fn discounted_return_exact(mdp: &TabularMdp, policy: &PolicyTable, task: usize) -> Result<f64> {
    let q = if mdp.num_states() * mdp.num_actions() <= DENSE_SOLVE_CAP {
        policy_q_exact(mdp, policy, task)?
    } else {
        policy_q_iterative(mdp, policy, task, 1e-10)?
    };
    let mut total = 0.0;
    for (s, &p0) in mdp.initial_dist().iter().enumerate() {
        if p0 == 0.0 || mdp.is_terminal(s) {
            continue;
        }
        total += p0 * policy.row(s).iter().zip(q.row(s)).map(|(p, v)| p * v).sum::<f64>();
    }
    Ok(total)
}

/// Propagates the state distribution for `horizon` steps from the initial
/// distribution, calling `visit(s, a, mass)` with the probability of taking
/// `a` in `s` at each step. Mass that reaches a terminal state stops, like an
/// episode that ends there.
pub fn finite_horizon_sweep<F: FnMut(usize, usize, f64)>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    horizon: usize,
    mut visit: F,
) -> Result<()> {
    check_policy(mdp, policy)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut dist: Vec<f64> = mdp.initial_dist().to_vec();
    let mut next_dist = vec![0.0; ns];
    for _ in 0..horizon {
        next_dist.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..ns {
            let m = dist[s];
            if m == 0.0 || mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                let mass = m * pa;
                visit(s, a, mass);
                let (next, prob) = mdp.row(s, a);
                for (&sn, &p) in next.iter().zip(prob) {
                    next_dist[sn as usize] += mass * p;
                }
            }
        }
        std::mem::swap(&mut dist, &mut next_dist);
    }
    Ok(())
}

/// Exact expected undiscounted return over `horizon` steps.
pub fn finite_horizon_return(mdp: &TabularMdp, policy: &PolicyTable, task: usize, horizon: usize) -> Result<f64> {
    mdp.check_task(task)?;
    let rewards = mdp.rewards(task);
    let na = mdp.num_actions();
    let mut total = 0.0;
    finite_horizon_sweep(mdp, policy, horizon, |s, a, m| total += m * rewards[s * na + a])?;
    Ok(total)
}
