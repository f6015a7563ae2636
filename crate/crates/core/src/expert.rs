//! Demonstrators for the held-out task and demonstration files.
//!
//! The exact expert runs soft value iteration on the enumerated MDP and acts
//! with `softmax(Q / temperature)`. The learned expert is a single-task run of
//! the pre-training loop. Demonstrations are sampled from the stochastic
//! expert; trajectory `i` draws from stream `i` of the demo seed, so sets of
//! different sizes share their prefixes.

use std::fmt::Write as _;
use std::fs;
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{enumerate_tabular, EnvKind, Enumerated, TaskEnvironment, TaskSpec, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::irl::{DemoMeta, DemoSet, DemoStep, Demonstration};
use crate::mdp::{
    expected_return, finite_horizon_return, rollout_with, soft_value_iteration_with, softmax_policy, softmax_row,
    Policy, PolicyTable, ReturnKind, Trajectory,
};
use crate::model::{BasisModel, SparseVec};
use crate::pretrain::{run_pretraining, PretrainConfig};
use crate::rng::{self, SeedStreams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertMode {
    Exact,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub mode: ExpertMode,
    pub temperature: f64,
    /// Act greedily instead of sampling from the softmax policy.
    pub greedy: bool,
    pub gamma: f64,
    pub state_cap: usize,
    pub vi_tolerance: f64,
    pub vi_max_iterations: usize,
    /// Monte Carlo episodes for the learned expert's reference return.
    pub reference_episodes: usize,
    /// Single-task pre-training run used by the learned expert.
    pub learned: PretrainConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            mode: ExpertMode::Exact,
            temperature: 1.0,
            greedy: false,
            gamma: 0.9,
            state_cap: DEFAULT_STATE_CAP,
            vi_tolerance: 1e-10,
            vi_max_iterations: 100_000,
            reference_episodes: 200,
            learned: PretrainConfig {
                num_tasks: 1,
                ..PretrainConfig::default()
            },
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("expert.temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation("expert.gamma must lie in [0, 1)"));
        }
        if self.state_cap == 0 || self.vi_max_iterations == 0 || self.reference_episodes == 0 {
            return Err(Error::validation("expert state_cap, vi_max_iterations and reference_episodes must be >= 1"));
        }
        if !(self.vi_tolerance > 0.0) {
            return Err(Error::validation("expert.vi_tolerance must be positive"));
        }
        if self.mode == ExpertMode::Learned {
            self.learned.validate()?;
        }
        Ok(())
    }
}

enum ExpertPolicy<S> {
    Exact {
        enumerated: Arc<Enumerated<S>>,
        policy: PolicyTable,
    },
    Learned {
        model: BasisModel,
    },
}

/// A demonstrator bound to its task.
pub struct Expert<E: TaskEnvironment>
where
    E::State: Eq + Hash + Send + Sync,
{
    env: E,
    temperature: f64,
    greedy: bool,
    policy: ExpertPolicy<E::State>,
    /// Expected undiscounted return over the environment horizon.
    pub reference_return: f64,
}

impl<E: TaskEnvironment> Expert<E>
where
    E::State: Eq + Hash + Send + Sync,
{
    /// Environment bound to the expert's task.
    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn task(&self) -> &TaskSpec {
        self.env.task()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Tabular form and policy of an exact expert.
    pub fn exact_parts(&self) -> Option<(&Arc<Enumerated<E::State>>, &PolicyTable)> {
        match &self.policy {
            ExpertPolicy::Exact { enumerated, policy } => Some((enumerated, policy)),
            ExpertPolicy::Learned { .. } => None,
        }
    }
}

impl<E: TaskEnvironment> Policy<E::State> for Expert<E>
where
    E::State: Eq + Hash + Send + Sync,
{
    fn action_probs(&self, state: &E::State) -> Vec<f64> {
        match &self.policy {
            ExpertPolicy::Exact { enumerated, policy } => {
                let s = enumerated
                    .state_index(&self.env.canonical(state))
                    .expect("expert visited a state outside its enumeration");
                policy.row(s).to_vec()
            }
            ExpertPolicy::Learned { model } => {
                let q = model
                    .task_q_values(&self.env.input(state, Some(0), 1), 0)
                    .expect("learned expert input matches its model");
                if self.greedy {
                    let mut p = vec![0.0; q.len()];
                    p[crate::mdp::argmax(&q)] = 1.0;
                    p
                } else {
                    softmax_row(&q, self.temperature)
                }
            }
        }
    }
}

/// Builds the demonstrator for `task`.
pub fn make_expert<E>(env: &E, task: &TaskSpec, config: &ExpertConfig, seeds: &SeedStreams) -> Result<Expert<E>>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    config.validate()?;
    let bound = env.with_task(task)?;
    match config.mode {
        ExpertMode::Exact => {
            let enumerated = enumerate_tabular(&bound, std::slice::from_ref(task), config.gamma, config.state_cap)?;
            exact_expert(&bound, Arc::new(enumerated), 0, config)
        }
        ExpertMode::Learned => {
            let pcfg = PretrainConfig {
                num_tasks: 1,
                ..config.learned.clone()
            };
            let res = run_pretraining(&bound, std::slice::from_ref(task), &pcfg, &seeds.child("expert"))?;
            let mut expert = Expert {
                env: bound.clone(),
                temperature: config.temperature,
                greedy: config.greedy,
                policy: ExpertPolicy::Learned { model: res.model },
                reference_return: 0.0,
            };
            expert.reference_return = expected_return(
                &bound,
                &expert,
                config.reference_episodes,
                bound.horizon(),
                ReturnKind::Undiscounted,
                seeds.rng("expert_reference").gen(),
            )?
            .mean;
            Ok(expert)
        }
    }
}

/// Exact expert over an existing enumeration whose reward table `task_index`
/// belongs to `env.task()`.
pub fn exact_expert<E>(
    env: &E,
    enumerated: Arc<Enumerated<E::State>>,
    task_index: usize,
    config: &ExpertConfig,
) -> Result<Expert<E>>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let sol = soft_value_iteration_with(
        &enumerated.mdp,
        task_index,
        config.temperature,
        config.vi_tolerance,
        config.vi_max_iterations,
    )?;
    let policy = if config.greedy {
        PolicyTable::greedy(&sol.q)
    } else {
        softmax_policy(&sol.q, config.temperature)?
    };
    let reference_return = finite_horizon_return(&enumerated.mdp, &policy, task_index, env.horizon())?;
    Ok(Expert {
        env: env.clone(),
        temperature: config.temperature,
        greedy: config.greedy,
        policy: ExpertPolicy::Exact { enumerated, policy },
        reference_return,
    })
}

/// `n` expert episodes with rewards; episode `i` uses stream `i` of `seed`.
/// Episodes are generated on worker threads.
pub fn sample_trajectories<E>(expert: &Expert<E>, n: usize, horizon: usize, seed: u64) -> Result<Vec<Trajectory<E::State>>>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    if n == 0 {
        return Err(Error::validation("demonstration count must be >= 1"));
    }
    let horizon = if horizon == 0 { expert.env.horizon() } else { horizon };
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n);
    let per = n.div_ceil(workers);
    let chunks: Vec<Result<Vec<Trajectory<E::State>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w * per..((w + 1) * per).min(n))
                        .map(|i| rollout_with(&expert.env, expert, horizon, &mut rng::stream(seed, i as u64)))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("demo worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// `n` reward-free demonstrations with a sealed reward channel. Observations
/// carry `task_slots` zeroed task entries so they match a model with that
/// many preference slots.
pub fn sample_demos<E>(expert: &Expert<E>, n: usize, horizon: usize, task_slots: usize, seed: u64) -> Result<DemoSet>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let trajs = sample_trajectories(expert, n, horizon, seed)?;
    let env = &expert.env;
    let mut demos = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for t in trajs {
        demos.push(Demonstration {
            steps: t
                .steps
                .iter()
                .map(|(s, a)| DemoStep {
                    obs: SparseVec::from_dense(&env.input(s, None, task_slots)),
                    action: *a,
                })
                .collect(),
        });
        rewards.push(t.rewards.unwrap_or_default());
    }
    let meta = DemoMeta {
        env: env.kind(),
        env_fingerprint: env.fingerprint(),
        task_id: env.task().id,
        obs_dim: env.feature_dim() + task_slots,
        task_slots,
    };
    DemoSet::new(demos, meta, Some(rewards))
}

/// Decimal with at most 9 significant digits.
pub fn format_real(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Path of the reward file that accompanies `path`.
pub fn rewards_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".rewards");
    PathBuf::from(p)
}

fn join_reals(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_real(*v));
    }
}

/// Writes the learner-facing file and, when the set has rewards, the sibling
/// `.rewards` file.
pub fn write_demos(path: &Path, demos: &DemoSet) -> Result<()> {
    let m = demos.meta();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    writeln!(
        line,
        "demos {} env={} fingerprint={:016x} task={} obs_dim={} task_slots={}",
        demos.len(),
        m.env.name(),
        m.env_fingerprint,
        m.task_id,
        m.obs_dim,
        m.task_slots
    )
    .unwrap();
    w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut dense = vec![0.0; m.obs_dim];
    for (i, t) in demos.trajectories().iter().enumerate() {
        line.clear();
        writeln!(line, "traj {i} {}", t.len()).unwrap();
        for s in &t.steps {
            dense.iter_mut().for_each(|v| *v = 0.0);
            for &(j, v) in &s.obs.entries {
                dense[j as usize] = v;
            }
            line.push_str("obs=");
            join_reals(&mut line, &dense);
            writeln!(line, " action={}", s.action).unwrap();
        }
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    if let Some(rewards) = demos.sealed_rewards() {
        let rp = rewards_path(path);
        let mut out = String::new();
        writeln!(out, "rewards {}", rewards.len()).unwrap();
        for (i, r) in rewards.iter().enumerate() {
            write!(out, "traj {i} {} rewards=", r.len()).unwrap();
            join_reals(&mut out, r);
            out.push('\n');
        }
        fs::write(&rp, out).map_err(|e| Error::io(&rp, e))?;
    }
    Ok(())
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::DemoFormat(format!("line {line}: {msg}"))
}

fn parse_reals(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse::<f64>().map_err(|_| bad(line, format!("bad number {x:?}"))))
        .collect()
}

fn field<'a>(token: Option<&'a str>, key: &str, line: usize) -> Result<&'a str> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| bad(line, format!("expected {key}=")))
}

fn parse_num<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> Result<T> {
    s.and_then(|x| x.parse().ok()).ok_or_else(|| bad(line, format!("bad {what}")))
}

/// Reads a demonstration file; the reward channel is attached when the
/// sibling `.rewards` file exists.
pub fn read_demos(path: &Path) -> Result<DemoSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((i, l)) => Ok(Some((i + 1, l.map_err(|e| Error::io(path, e))?))),
            None => Ok(None),
        }
    };
    let (ln, header) = next()?.ok_or_else(|| bad(1, "empty file"))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("demos") {
        return Err(bad(ln, "missing demos header"));
    }
    let n: usize = parse_num(tok.next(), ln, "trajectory count")?;
    let env = EnvKind::from_name(field(tok.next(), "env", ln)?).ok_or_else(|| bad(ln, "unknown env"))?;
    let env_fingerprint =
        u64::from_str_radix(field(tok.next(), "fingerprint", ln)?, 16).map_err(|_| bad(ln, "bad fingerprint"))?;
    let task_id = parse_num(Some(field(tok.next(), "task", ln)?), ln, "task")?;
    let obs_dim = parse_num(Some(field(tok.next(), "obs_dim", ln)?), ln, "obs_dim")?;
    let task_slots = parse_num(Some(field(tok.next(), "task_slots", ln)?), ln, "task_slots")?;
    let mut trajs = Vec::with_capacity(n);
    for i in 0..n {
        let (ln, l) = next()?.ok_or_else(|| Error::DemoFormat(format!("expected {n} trajectories, found {i}")))?;
        let mut tok = l.split_whitespace();
        if tok.next() != Some("traj") || tok.next() != Some(i.to_string().as_str()) {
            return Err(bad(ln, format!("expected header of trajectory {i}")));
        }
        let len: usize = parse_num(tok.next(), ln, "length")?;
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let (ln, l) = next()?.ok_or_else(|| Error::DemoFormat(format!("trajectory {i} is truncated")))?;
            let mut tok = l.split_whitespace();
            let obs = parse_reals(field(tok.next(), "obs", ln)?, ln)?;
            if obs.len() != obs_dim {
                return Err(bad(ln, format!("observation has {} entries, expected {obs_dim}", obs.len())));
            }
            let action = parse_num(Some(field(tok.next(), "action", ln)?), ln, "action")?;
            if tok.next().is_some() {
                return Err(bad(ln, "unexpected trailing fields"));
            }
            steps.push(DemoStep {
                obs: SparseVec::from_dense(&obs),
                action,
            });
        }
        trajs.push(Demonstration { steps });
    }
    if let Some((ln, l)) = next()? {
        if !l.trim().is_empty() {
            return Err(bad(ln, "content after the last trajectory"));
        }
    }
    let rp = rewards_path(path);
    let rewards = if rp.exists() { Some(read_rewards(&rp, n)?) } else { None };
    DemoSet::new(
        trajs,
        DemoMeta {
            env,
            env_fingerprint,
            task_id,
            obs_dim,
            task_slots,
        },
        rewards,
    )
}

fn read_rewards(path: &Path, n: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.split_whitespace().collect::<Vec<_>>() != ["rewards", n.to_string().as_str()] {
        return Err(bad(1, "reward file does not match the demonstrations"));
    }
    let mut out = Vec::with_capacity(n);
    for (i, l) in lines.enumerate().take(n) {
        let ln = i + 2;
        let mut tok = l.split_whitespace();
        if tok.next() != Some("traj") || tok.next() != Some(i.to_string().as_str()) {
            return Err(bad(ln, "bad reward trajectory header"));
        }
        let len: usize = parse_num(tok.next(), ln, "length")?;
        let r = parse_reals(field(tok.next(), "rewards", ln)?, ln)?;
        if r.len() != len {
            return Err(bad(ln, "reward count does not match the length"));
        }
        out.push(r);
    }
    if out.len() != n {
        return Err(Error::DemoFormat("reward file is truncated".into()));
    }
    Ok(out)
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn format_real_keeps_nine_significant_digits(v in prop::num::f64::NORMAL) {
            let text = format_real(v);
            let back: f64 = text.parse().unwrap();
            prop_assert!((back - v).abs() <= v.abs() * 5.1e-9, "{v} -> {text}");
            prop_assert_eq!(format_real(back), text);
        }
    }
}
