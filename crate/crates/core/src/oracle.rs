//! Self-checks of the numerical core against independent oracles: the soft
//! Bellman fixed point, closed-form successor features, finite-difference
//! gradients and the agreement of sampled environment steps with the exact
//! transition model.

use std::collections::HashMap;
use std::hash::Hash;
use std::time::Instant;

use rand::Rng as _;

use crate::config::RunConfig;
use crate::envs::{enumerate_tabular, FruitGrid, FruitGridConfig, LaneWorld, LaneWorldConfig, TaskEnvironment};
use crate::error::{Error, Result};
use crate::irl::IrlModel;
use crate::mdp::{
    exact_successor_features, iterative_successor_features, random_mdp, sample_action, soft_backup_residual,
    soft_value_iteration_with, softmax_policy, PolicyTable, PsiTable, TabularMdp,
};
use crate::model::{BasisModel, Hyper, ModelSpec, TransitionBatch, PHI, PSI, PSI_TARGET, TRUNK, W};
use crate::nn::{gradcheck, random_coords, Activation, Adam};
use crate::rng;

/// Outcome of one oracle comparison: `value` must not exceed `tolerance`.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (tolerance {:.1e}, {:.1}s) {}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn timed(name: &str, tolerance: f64, f: impl FnOnce() -> Result<(f64, String)>) -> Result<OracleCheck> {
    let start = Instant::now();
    let (value, detail) = f()?;
    Ok(OracleCheck {
        name: name.into(),
        value,
        tolerance,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Largest soft Bellman residual of soft value iteration over every task of
/// every MDP in `mdps`.
pub fn soft_vi_fixed_point(mdps: &[(&str, &TabularMdp)], temperature: f64) -> Result<OracleCheck> {
    timed("soft value iteration fixed point", 1e-6, || {
        let mut worst: f64 = 0.0;
        let mut detail = Vec::new();
        for (name, mdp) in mdps {
            for task in 0..mdp.num_tasks() {
                let sol = soft_value_iteration_with(mdp, task, temperature, 1e-10, 100_000)?;
                let r = soft_backup_residual(mdp, task, &sol.q, temperature);
                worst = worst.max(r);
                detail.push(format!("{name}/{task}={r:.1e}"));
            }
        }
        Ok((worst, format!("tau={temperature} [{}]", detail.join(" "))))
    })
}

/// Softmax policy of soft value iteration on a seeded 3-state chain against
/// an explicit dense fixed-point iteration; returns the largest probability
/// difference.
pub fn chain_softmax_policy(seed: u64) -> Result<OracleCheck> {
    timed("soft-optimal policy on a 3-state chain", 1e-9, || {
        let mut r = rng::stream(seed, 0);
        let ns = 3;
        let gamma = 0.9;
        // action 0 stays, action 1 moves right; the last state loops
        let mut t = vec![vec![vec![0.0; ns]; 2]; ns];
        for (s, row) in t.iter_mut().enumerate() {
            row[0][s] = 1.0;
            row[1][(s + 1).min(ns - 1)] = 1.0;
        }
        let rew: Vec<Vec<f64>> = (0..ns).map(|_| (0..2).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let mdp = TabularMdp::from_dense(&t, std::slice::from_ref(&rew), gamma, vec![1.0, 0.0, 0.0], &[])?;
        let sol = soft_value_iteration_with(&mdp, 0, 1.0, 1e-13, 100_000)?;
        let policy = softmax_policy(&sol.q, 1.0)?;

        let mut q = vec![[0.0f64; 2]; ns];
        for _ in 0..100_000 {
            let v: Vec<f64> = q.iter().map(|row| (row[0].exp() + row[1].exp()).ln()).collect();
            let mut delta: f64 = 0.0;
            let mut next = q.clone();
            for s in 0..ns {
                for a in 0..2 {
                    let ev: f64 = (0..ns).map(|sn| t[s][a][sn] * v[sn]).sum();
                    next[s][a] = rew[s][a] + gamma * ev;
                    delta = delta.max((next[s][a] - q[s][a]).abs());
                }
            }
            q = next;
            if delta < 1e-14 {
                break;
            }
        }
        let mut worst: f64 = 0.0;
        for (s, row) in q.iter().enumerate() {
            let z = row[0].exp() + row[1].exp();
            for a in 0..2 {
                worst = worst.max((policy.row(s)[a] - row[a].exp() / z).abs());
            }
        }
        Ok((worst, String::new()))
    })
}

fn random_policy(num_states: usize, num_actions: usize, r: &mut rng::Rng) -> PolicyTable {
    PolicyTable::from_fn(num_states, num_actions, |_| {
        let raw: Vec<f64> = (0..num_actions).map(|_| r.gen_range(0.05..1.0)).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / z).collect()
    })
    .expect("normalised rows")
}

fn random_features(num_states: usize, num_actions: usize, d: usize, r: &mut rng::Rng) -> PsiTable {
    let mut phi = PsiTable::zeros(num_states, num_actions, d);
    phi.values.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
    phi
}

/// Dense linear solve against fixed-point iteration of the successor
/// recursion on seeded random MDPs.
pub fn sf_linear_solve(seed: u64) -> Result<OracleCheck> {
    timed("successor features: linear solve vs iteration", 1e-8, || {
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            let mdp = random_mdp(seed + i, 12, 3, 1, 0.9);
            let mut r = rng::stream(seed + i, 7);
            let policy = random_policy(12, 3, &mut r);
            let phi = random_features(12, 3, 4, &mut r);
            let dense = exact_successor_features(&mdp, &policy, &phi, 0.9)?;
            let iter = iterative_successor_features(&mdp, &policy, &phi, 0.9, 1e-13, 100_000)?;
            worst = worst.max(dense.sup_distance(&iter));
        }
        Ok((worst, "5 random MDPs, 12 states, 3 actions, d=4".into()))
    })
}

/// Learns successor features of a random policy on a 6-state, 2-action MDP by
/// minimising the ITD loss with a tabular (one-hot, identity trunk) model and
/// compares them with the closed form in sup norm.
///
/// Every step uses the full expected batch: one row per `(s, a, s', a')`
/// weighted by `P(s' | s, a) pi(a' | s')`, with the target head synced to the
/// online head before each step.
pub fn itd_learns_successor_features(seed: u64, lr: f64, max_steps: usize) -> Result<OracleCheck> {
    timed("ITD recovers exact successor features", 1e-2, || {
        let (ns, na, d, gamma) = (6, 2, 4, 0.9);
        let mdp = random_mdp(seed, ns, na, 1, gamma);
        let mut r = rng::stream(seed, 3);
        let policy = random_policy(ns, na, &mut r);
        let phi = random_features(ns, na, d, &mut r);
        let exact = exact_successor_features(&mdp, &policy, &phi, gamma)?;
        let spec = ModelSpec {
            feature_dim: ns,
            task_slots: 0,
            num_actions: na,
            d,
            trunk_hidden: vec![],
            psi_hidden: vec![],
            activation: Activation::Relu,
            task_crossed: false,
        };
        let mut model = BasisModel::new(spec, 1, &mut rng::stream(seed, 4))?;
        // linear phi head on one-hot states: weight (s, a * d + j) = phi(s, a)_j, zero bias
        let block = model.params.block_mut(PHI);
        block.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..ns {
            for a in 0..na {
                for j in 0..d {
                    block[s * na * d + a * d + j] = phi.get(s, a)[j];
                }
            }
        }
        let onehot = |s: usize| {
            let mut v = vec![0.0; ns];
            v[s] = 1.0;
            v
        };
        let mut batch = TransitionBatch::default();
        let mut weights = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                let (next, prob) = mdp.row(s, a);
                for (&sn, &p) in next.iter().zip(prob) {
                    for an in 0..na {
                        batch.push(onehot(s), a, 0.0, onehot(sn as usize), an, 0, false);
                        weights.push(p * policy.row(sn as usize)[an]);
                    }
                }
            }
        }
        batch.weights = Some(weights);
        let hyper = Hyper::new(gamma, 1.0)?;
        let ranges = model.block_ranges(&[PSI]);
        let mut opt = Adam::new(model.params.values.len());
        let learned = |m: &BasisModel| -> Result<f64> {
            let mut worst: f64 = 0.0;
            for s in 0..ns {
                let psi = m.successor(&onehot(s), false)?;
                for a in 0..na {
                    for j in 0..d {
                        worst = worst.max((psi[a][j] - exact.get(s, a)[j]).abs());
                    }
                }
            }
            Ok(worst)
        };
        let mut steps = 0;
        let mut err = learned(&model)?;
        while steps < max_steps && err > 1e-3 {
            for _ in 0..500 {
                model.sync_target();
                let (_, g) = model.loss_itd(&batch, hyper)?;
                opt.step(&mut model.params.values, &g.values, lr, &ranges)?;
            }
            steps += 500;
            err = learned(&model)?;
        }
        Ok((err, format!("{steps} steps, lr {lr}")))
    })
}

fn gradcheck_model(crossed: bool, seed: u64) -> BasisModel {
    let spec = ModelSpec {
        feature_dim: 5,
        task_slots: 2,
        num_actions: 3,
        d: 2,
        trunk_hidden: vec![4],
        psi_hidden: if crossed { vec![] } else { vec![3] },
        activation: Activation::Tanh,
        task_crossed: crossed,
    };
    let mut r = rng::stream(seed, 0);
    let mut m = BasisModel::new(spec, 2, &mut r).expect("valid spec");
    m.params.values.iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
    m
}

fn gradcheck_batch(seed: u64, learner: bool) -> TransitionBatch {
    let mut r = rng::stream(seed, 1);
    let mut input = |slot: Option<usize>| {
        let mut v: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        v.extend([0.0, 0.0]);
        if let Some(k) = slot {
            v[5 + k] = 1.0;
        }
        v
    };
    let mut b = TransitionBatch::default();
    let mut r2 = rng::stream(seed, 2);
    for i in 0..6 {
        let k = if learner { 0 } else { i % 2 };
        let slot = (!learner).then_some(k);
        let (obs, next) = (input(slot), input(slot));
        b.push(obs, r2.gen_range(0..3), r2.gen_range(-1.0..1.0), next, r2.gen_range(0..3), k, i % 4 == 3);
    }
    b
}

/// Central finite differences against the analytic gradients of every loss,
/// plus exact zeros on the stop-gradient blocks.
pub fn gradient_checks(seed: u64) -> Result<OracleCheck> {
    timed("analytic vs finite-difference gradients", 1e-4, || {
        let mut worst: f64 = 0.0;
        let mut leaks = Vec::new();
        for crossed in [false, true] {
            let m = gradcheck_model(crossed, seed);
            let base = m.params.values.clone();
            let b = gradcheck_batch(seed, false);
            let irl_b = gradcheck_batch(seed + 1, true);
            let h = Hyper::new(0.9, 0.7)?;
            let coords = random_coords(&mut rng::stream(seed, 5), base.len(), 300);
            let mut check = |name: &str, f: &dyn Fn(&[f64], Option<&mut [f64]>) -> Result<f64>, zero: &[&str]| -> Result<()> {
                let mut g = m.params.zero_grad();
                f(&base, Some(&mut g.values))?;
                let res = gradcheck(|p| f(p, None).unwrap_or(f64::NAN), &base, &g.values, Some(&coords), 1e-5);
                worst = worst.max(if res.max_rel_error.is_nan() { f64::INFINITY } else { res.max_rel_error });
                for block in zero {
                    if !g.block_is_zero(block) {
                        leaks.push(format!("{name}->{block}"));
                    }
                }
                Ok(())
            };
            check("loss_q", &|p, g| m.loss_q_with(p, &base, &b, h, g), &[PHI, PSI_TARGET])?;
            check("loss_reward", &|p, g| m.loss_reward_with(p, &b, g), &[PSI, PSI_TARGET])?;
            check("loss_itd", &|p, g| m.loss_itd_with(p, &base, &b, h, false, g), &[PHI, PSI_TARGET, W])?;
            check("loss_bc", &|p, g| m.loss_bc_with(p, &irl_b, h, g), &[PHI, PSI_TARGET])?;
            let irl = IrlModel::init_from_checkpoint(&m, true, 0.7)?;
            let ib = irl.model.params.values.clone();
            check("loss_itd_e", &|p, g| irl.model.loss_itd_with(p, &ib, &irl_b, h, false, g), &[PHI, PSI_TARGET, W])?;
            let mut g = irl.model.params.zero_grad();
            irl.model.loss_itd_with(&ib, &ib, &irl_b, h, true, Some(&mut g.values))?;
            if g.block_is_zero(PHI) || g.block_is_zero(TRUNK) {
                leaks.push("unfrozen loss_itd_e misses phi or trunk".into());
            }
        }
        if !leaks.is_empty() {
            return Ok((f64::INFINITY, format!("nonzero stop-gradient blocks: {}", leaks.join(", "))));
        }
        Ok((worst, "5 losses, plain and task-crossed heads, stop-gradient blocks exactly zero".into()))
    })
}

/// Samples `per_pair` steps from the first `pairs` (state, action) pairs of
/// the enumeration order and compares next-state frequencies with the exact
/// outcome probabilities. The value is the largest deviation in units of the
/// binomial standard error (tolerance 5).
pub fn enumeration_frequencies<E>(env: &E, name: &str, pairs: usize, per_pair: usize, seed: u64) -> Result<OracleCheck>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    timed(&format!("{name}: sampled steps vs exact transitions"), 5.0, || {
        let mut r = rng::stream(seed, 0);
        let init = env.initial_states(usize::MAX)?;
        let probs: Vec<f64> = init.iter().map(|(_, p)| *p).collect();
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in 0..pairs {
            let (s, _) = &init[sample_action(&probs, &mut r)];
            let a = i % env.num_actions();
            let mut exact: HashMap<E::State, f64> = HashMap::new();
            for o in env.outcomes(s, a)? {
                *exact.entry(env.canonical(&o.next)).or_default() += o.prob;
            }
            let mut counts: HashMap<E::State, usize> = HashMap::new();
            for _ in 0..per_pair {
                let out = env.step(s, a, &mut r)?;
                *counts.entry(env.canonical(&out.next)).or_default() += 1;
            }
            for (next, &c) in &counts {
                if !exact.contains_key(next) {
                    return Ok((f64::INFINITY, format!("sampled a successor with zero exact probability (pair {i})")));
                }
                let _ = c;
            }
            for (next, &p) in &exact {
                let f = *counts.get(next).unwrap_or(&0) as f64 / per_pair as f64;
                let se = (p * (1.0 - p) / per_pair as f64).sqrt().max(1.0 / per_pair as f64);
                worst = worst.max((f - p).abs() / se);
            }
            checked += 1;
        }
        Ok((worst, format!("{checked} pairs x {per_pair} samples")))
    })
}

/// All checks; exit status of the CLI oracle command.
#[derive(Clone, Debug, Default)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OracleCheck::passed)
    }
}

fn small_fruitgrid() -> FruitGridConfig {
    FruitGridConfig {
        grid_size: 3,
        colors: 2,
        fruits_per_color: 1,
        horizon: 10,
        respawn: true,
    }
}

/// Five seeded random MDPs (20 states, 3 actions, 2 reward tables), the 3x3
/// two-colour FruitGrid and the default LaneWorld, each with its test and
/// training rewards.
pub fn seeded_mdps(seed: u64, state_cap: usize) -> Result<Vec<(String, TabularMdp)>> {
    let mut mdps: Vec<(String, TabularMdp)> = (0..5).map(|i| (format!("random{i}"), random_mdp(seed + i, 20, 3, 2, 0.9))).collect();
    let fg = FruitGrid::unrewarded(small_fruitgrid())?;
    let fg_suite = fg.task_suite(2, seed)?;
    let mut tasks = vec![fg_suite.test.clone()];
    tasks.extend(fg_suite.train.iter().cloned());
    mdps.push(("fruitgrid3x3".into(), enumerate_tabular(&fg, &tasks, 0.9, state_cap)?.mdp));
    let lw = LaneWorld::unrewarded(LaneWorldConfig::default())?;
    let lw_suite = lw.task_suite(3, seed)?;
    let mut tasks = vec![lw_suite.test.clone()];
    tasks.extend(lw_suite.train.iter().cloned());
    mdps.push(("laneworld".into(), enumerate_tabular(&lw, &tasks, 0.9, state_cap)?.mdp));
    Ok(mdps)
}

/// Runs every check. Soft value iteration is verified on seeded random MDPs,
/// a small FruitGrid, the default LaneWorld and, when it enumerates within
/// the state cap, the configured environment.
pub fn run_oracle_suite(config: &RunConfig) -> Result<OracleReport> {
    config.validate()?;
    let seed = config.seed;
    let mut checks = Vec::new();

    let mut mdps = seeded_mdps(seed, config.env.state_cap)?;
    let fg = FruitGrid::unrewarded(small_fruitgrid())?;
    let fg_suite = fg.task_suite(2, seed)?;
    let lw = LaneWorld::unrewarded(LaneWorldConfig::default())?;
    let lw_suite = lw.task_suite(3, seed)?;
    struct Configured(f64, usize, usize);
    impl crate::config::EnvVisitor for Configured {
        type Output = Option<TabularMdp>;
        fn visit<E>(self, env: E) -> Result<Option<TabularMdp>>
        where
            E: TaskEnvironment + 'static,
            E::State: Eq + Hash + Send + Sync,
        {
            let suite = env.task_suite(self.2, 0)?;
            match enumerate_tabular(&env.with_task(&suite.test)?, std::slice::from_ref(&suite.test), self.0, self.1) {
                Ok(e) => Ok(Some(e.mdp)),
                Err(Error::Capacity { states, cap }) => {
                    log::warn!("configured environment has more than {cap} states ({states}); skipped in the fixed-point check");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        }
    }
    if let Some(m) = config
        .env
        .visit(Configured(config.expert.gamma, config.env.state_cap, config.pretrain.num_tasks))?
    {
        mdps.push(("configured".into(), m));
    }
    let refs: Vec<(&str, &TabularMdp)> = mdps.iter().map(|(n, m)| (n.as_str(), m)).collect();
    for tau in [1.0, config.expert.temperature] {
        checks.push(soft_vi_fixed_point(&refs, tau)?);
    }
    checks.push(chain_softmax_policy(seed)?);
    checks.push(sf_linear_solve(seed)?);
    checks.push(itd_learns_successor_features(seed, 1e-2, 50_000)?);
    checks.push(gradient_checks(seed)?);
    checks.push(enumeration_frequencies(&fg.with_task(&fg_suite.test)?, "fruitgrid3x3", 40, 2000, seed)?);
    checks.push(enumeration_frequencies(&lw.with_task(&lw_suite.test)?, "laneworld", 40, 2000, seed)?);
    Ok(OracleReport { checks })
}
