//! Multi-task pre-training of the cumulant / successor / preference model.

use std::collections::VecDeque;
use std::hash::Hash;
use std::io::Write;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{TaskEnvironment, TaskSpec};
use crate::error::{Error, Result};
use crate::mdp::{sample_action, softmax_row};
use crate::model::{BasisModel, Hyper, ModelSpec, SparseVec, TransitionBatch, PHI, PSI, TRUNK, W};
use crate::nn::{Activation, Adam};
use crate::rng::{Rng, SeedStreams};

/// One stored transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub obs: SparseVec,
    pub action: usize,
    pub reward: f64,
    pub next_obs: SparseVec,
    pub next_action: usize,
    pub task: usize,
    pub done: bool,
}

/// Bounded FIFO transition store with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<Record>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("buffer capacity must be >= 1"));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.records.iter()
    }

    pub fn push(&mut self, record: Record) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    /// `batch_size` distinct records chosen uniformly.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<TransitionBatch> {
        if self.records.is_empty() {
            return Err(Error::validation("cannot sample from an empty buffer"));
        }
        if batch_size == 0 || batch_size > self.records.len() {
            return Err(Error::validation(format!(
                "batch of {batch_size} requested from a buffer of {}",
                self.records.len()
            )));
        }
        let picks = index::sample(rng, self.records.len(), batch_size);
        Ok(to_batch(picks.iter().map(|i| &self.records[i])))
    }

    /// Every record, in insertion order.
    pub fn all(&self) -> TransitionBatch {
        to_batch(self.records.iter())
    }
}

pub fn to_batch<'a, I: Iterator<Item = &'a Record>>(records: I) -> TransitionBatch {
    let mut b = TransitionBatch::default();
    for r in records {
        b.push(r.obs.to_dense(), r.action, r.reward, r.next_obs.to_dense(), r.next_action, r.task, r.done);
    }
    b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Number of pre-training tasks.
    pub num_tasks: usize,
    /// Number of cumulants.
    pub d: usize,
    pub gamma: f64,
    /// Episodes collected in total.
    pub total_iterations: usize,
    /// Episode length cap; 0 uses the environment horizon.
    pub episode_horizon: usize,
    pub gradient_steps_per_iteration: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last iteration as a fraction of `lr`; the rate
    /// falls linearly from `lr`. 1 keeps it constant.
    pub lr_final_fraction: f64,
    pub target_update_interval: usize,
    /// Softmax temperature of the behavior policy and of the soft backup.
    pub exploration_temperature: f64,
    pub buffer_capacity: usize,
    /// Share of transitions diverted to a held-out set for the reward loss.
    pub heldout_fraction: f64,
    pub trunk_hidden: Vec<usize>,
    pub psi_hidden: Vec<usize>,
    pub activation: Activation,
    /// Task-crossed successor input (see [`ModelSpec::task_crossed`]).
    pub task_crossed: bool,
    /// Also apply the ITD loss to each batch with the task one-hot zeroed,
    /// so the successor head at an all-zero task input tracks the successor
    /// features of the replayed mixture of task policies.
    pub taskless_itd: bool,
    /// Greedy evaluation episodes run every this many iterations (0 = never).
    pub eval_interval: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            num_tasks: 3,
            d: 8,
            gamma: 0.9,
            total_iterations: 4000,
            episode_horizon: 0,
            gradient_steps_per_iteration: 10,
            batch_size: 32,
            lr: 1e-3,
            lr_final_fraction: 1.0,
            target_update_interval: 100,
            exploration_temperature: 1.0,
            buffer_capacity: 100_000,
            heldout_fraction: 0.05,
            trunk_hidden: Vec::new(),
            psi_hidden: vec![128],
            activation: Activation::Relu,
            task_crossed: false,
            taskless_itd: false,
            eval_interval: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_tasks", self.num_tasks),
            ("d", self.d),
            ("total_iterations", self.total_iterations),
            ("gradient_steps_per_iteration", self.gradient_steps_per_iteration),
            ("batch_size", self.batch_size),
            ("target_update_interval", self.target_update_interval),
            ("buffer_capacity", self.buffer_capacity),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::validation(format!("pretrain.{name} must be >= 1")));
            }
        }
        Hyper::new(self.gamma, self.exploration_temperature)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("pretrain.lr must be positive"));
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::validation("pretrain.lr_final_fraction must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::validation("pretrain.heldout_fraction must be in [0, 1)"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::validation("pretrain.buffer_capacity must hold at least one batch"));
        }
        Ok(())
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            gamma: self.gamma,
            temperature: self.exploration_temperature,
        }
    }

    pub fn model_spec<E>(&self, env: &E) -> ModelSpec
    where
        E: TaskEnvironment,
        E::State: Eq + Hash + Send + Sync,
    {
        ModelSpec {
            feature_dim: env.feature_dim(),
            task_slots: self.num_tasks,
            num_actions: env.num_actions(),
            d: self.d,
            trunk_hidden: self.trunk_hidden.clone(),
            psi_hidden: self.psi_hidden.clone(),
            activation: self.activation,
            task_crossed: self.task_crossed,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub task: usize,
    pub episode_return: f64,
    pub loss_q: f64,
    pub loss_reward: f64,
    pub loss_itd: f64,
}

/// Greedy evaluation episode return during training.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub iteration: usize,
    pub task: usize,
    pub greedy_return: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub model: BasisModel,
    pub log: Vec<LogRow>,
    pub evals: Vec<EvalRow>,
    /// Reward loss on transitions never used for training (NaN if none).
    pub heldout_reward_loss: f64,
    pub env_steps: usize,
    pub gradient_steps: usize,
}

/// Transitions of one episode plus its undiscounted return.
pub struct Episode {
    pub records: Vec<Record>,
    pub episode_return: f64,
}

/// Rolls one episode of task slot `k`, acting with
/// `softmax(q_fn(input) / temperature)`. The final record of a truncated
/// episode carries a next action drawn from the same policy.
pub fn collect_episode<E, F>(
    env: &E,
    k: usize,
    num_tasks: usize,
    horizon: usize,
    temperature: f64,
    q_fn: F,
    rng: &mut Rng,
) -> Result<Episode>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut state = env.reset(rng);
    let mut input = env.input(&state, Some(k), num_tasks);
    let mut action = sample_action(&softmax_row(&q_fn(&input)?, temperature), rng);
    let mut records = Vec::with_capacity(horizon);
    let mut total = 0.0;
    for t in 0..horizon {
        let out = env.step(&state, action, rng)?;
        total += out.reward;
        let next_input = env.input(&out.next, Some(k), num_tasks);
        let next_action = if out.terminal {
            0
        } else {
            sample_action(&softmax_row(&q_fn(&next_input)?, temperature), rng)
        };
        records.push(Record {
            obs: SparseVec::from_dense(&input),
            action,
            reward: out.reward,
            next_obs: SparseVec::from_dense(&next_input),
            next_action,
            task: k,
            done: out.terminal,
        });
        if out.done() || t + 1 == horizon {
            break;
        }
        state = out.next;
        input = next_input;
        action = next_action;
    }
    Ok(Episode {
        records,
        episode_return: total,
    })
}

/// Undiscounted return of one greedy episode.
pub fn greedy_episode<E, F>(env: &E, k: usize, num_tasks: usize, horizon: usize, q_fn: F, rng: &mut Rng) -> Result<f64>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut state = env.reset(rng);
    let mut total = 0.0;
    for _ in 0..horizon {
        let q = q_fn(&env.input(&state, Some(k), num_tasks))?;
        let out = env.step(&state, crate::mdp::argmax(&q), rng)?;
        total += out.reward;
        if out.done() {
            break;
        }
        state = out.next;
    }
    Ok(total)
}

/// Adam states for the three pre-training losses.
struct Optimizers {
    q: Adam,
    reward: Adam,
    itd: Adam,
}

/// Multi-task RL pre-training. Each iteration samples a task uniformly,
/// collects one episode with the Boltzmann policy of `psi . w_k`, and then
/// runs gradient steps that apply the soft Bellman loss, the reward loss
/// and the ITD loss on independent batches.
pub fn run_pretraining<E>(env: &E, tasks: &[TaskSpec], config: &PretrainConfig, seeds: &SeedStreams) -> Result<PretrainResult>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    run_pretraining_with(env, tasks, config, Objective::Successor, seeds)
}

/// What the pre-training loop optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Soft Bellman, reward and ITD losses on `phi`, `psi` and `w`.
    Successor,
    /// Soft Bellman loss only, on a model with one cumulant and every
    /// preference fixed at 1, so that the successor head is a plain
    /// task-conditioned Q head.
    QOnly,
}

pub fn run_pretraining_with<E>(
    env: &E,
    tasks: &[TaskSpec],
    config: &PretrainConfig,
    objective: Objective,
    seeds: &SeedStreams,
) -> Result<PretrainResult>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    config.validate()?;
    if tasks.len() != config.num_tasks {
        return Err(Error::validation(format!(
            "{} tasks supplied for num_tasks = {}",
            tasks.len(),
            config.num_tasks
        )));
    }
    let envs: Vec<E> = tasks.iter().map(|t| env.with_task(t)).collect::<Result<_>>()?;
    let horizon = if config.episode_horizon == 0 { env.horizon() } else { config.episode_horizon };
    let hyper = config.hyper();
    let k_total = config.num_tasks;

    let mut spec = config.model_spec(env);
    if objective == Objective::QOnly {
        spec.d = 1;
    }
    let mut model = BasisModel::new(spec, k_total, &mut seeds.rng("init"))?;
    if objective == Objective::QOnly {
        for k in 0..k_total {
            model.set_preference(k, &[1.0])?;
        }
    }
    let n = model.params.values.len();
    let mut opt = Optimizers {
        q: Adam::new(n),
        reward: Adam::new(n),
        itd: Adam::new(n),
    };
    let q_ranges = match objective {
        Objective::Successor => model.block_ranges(&[TRUNK, PSI, W]),
        Objective::QOnly => model.block_ranges(&[TRUNK, PSI]),
    };
    let r_ranges = model.block_ranges(&[TRUNK, PHI, W]);
    let itd_ranges = model.block_ranges(&[TRUNK, PSI]);

    let mut env_rng = seeds.rng("env");
    let mut task_rng = seeds.rng("tasks");
    let mut buffer_rng = seeds.rng("buffer");
    let mut split_rng = seeds.rng("heldout");
    let mut eval_rng = seeds.rng("eval");
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut heldout = ReplayBuffer::new((config.buffer_capacity / 10).max(config.batch_size))?;

    let mut log = Vec::with_capacity(config.total_iterations);
    let mut evals = Vec::new();
    let (mut env_steps, mut grad_steps) = (0usize, 0usize);
    for it in 0..config.total_iterations {
        let k = task_rng.gen_range(0..k_total);
        let ep = collect_episode(
            &envs[k],
            k,
            k_total,
            horizon,
            hyper.temperature,
            |x| model.task_q_values(x, k),
            &mut env_rng,
        )?;
        env_steps += ep.records.len();
        for r in ep.records {
            if split_rng.gen::<f64>() < config.heldout_fraction {
                heldout.push(r);
            } else {
                buffer.push(r);
            }
        }
        let mut sums = [0.0; 3];
        let mut taken = 0;
        if buffer.len() >= config.batch_size {
            let lr = config.lr * annealed(config.lr_final_fraction, it, config.total_iterations);
            for _ in 0..config.gradient_steps_per_iteration {
                let ranges = [&q_ranges[..], &r_ranges[..], &itd_ranges[..]];
                let losses = gradient_step(&mut model, &mut opt, &buffer, lr, config.batch_size, hyper, &mut buffer_rng, objective, config.taskless_itd, ranges)?;
                grad_steps += 1;
                taken += 1;
                for (s, l) in sums.iter_mut().zip(losses) {
                    *s += l;
                }
                if grad_steps % config.target_update_interval == 0 {
                    model.sync_target();
                }
            }
        }
        let mean = |s: f64| if taken > 0 { s / taken as f64 } else { f64::NAN };
        log.push(LogRow {
            iteration: it,
            task: k,
            episode_return: ep.episode_return,
            loss_q: mean(sums[0]),
            loss_reward: mean(sums[1]),
            loss_itd: mean(sums[2]),
        });
        if config.eval_interval > 0 && (it + 1) % config.eval_interval == 0 {
            for (kk, e) in envs.iter().enumerate() {
                let ret = greedy_episode(e, kk, k_total, horizon, |x| model.task_q_values(x, kk), &mut eval_rng)?;
                evals.push(EvalRow {
                    iteration: it + 1,
                    task: kk,
                    greedy_return: ret,
                });
            }
        }
        log::debug!("iteration {it} task {k} return {:.3}", ep.episode_return);
    }
    model.snap_to_f32();
    let heldout_reward_loss = if heldout.is_empty() || objective == Objective::QOnly {
        f64::NAN
    } else {
        model.loss_reward_with(&model.params.values, &heldout.all(), None)?
    };
    Ok(PretrainResult {
        model,
        log,
        evals,
        heldout_reward_loss,
        env_steps,
        gradient_steps: grad_steps,
    })
}

/// Linear schedule factor from 1 at iteration 0 to `final_fraction` at the last.
pub fn annealed(final_fraction: f64, it: usize, total: usize) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    1.0 - (1.0 - final_fraction) * it as f64 / (total - 1) as f64
}

#[allow(clippy::too_many_arguments)]
fn gradient_step(
    model: &mut BasisModel,
    opt: &mut Optimizers,
    buffer: &ReplayBuffer,
    lr: f64,
    batch_size: usize,
    hyper: Hyper,
    rng: &mut Rng,
    objective: Objective,
    taskless: bool,
    ranges: [&[std::ops::Range<usize>]; 3],
) -> Result<[f64; 3]> {
    let b = buffer.sample(batch_size, rng)?;
    let (lq, g) = model.loss_q(&b, hyper)?;
    opt.q.step(&mut model.params.values, &g.values, lr, ranges[0])?;
    if objective == Objective::QOnly {
        return Ok([lq, f64::NAN, f64::NAN]);
    }

    let b = buffer.sample(batch_size, rng)?;
    let (lrew, g) = model.loss_reward(&b)?;
    opt.reward.step(&mut model.params.values, &g.values, lr, ranges[1])?;

    let mut b = buffer.sample(batch_size, rng)?;
    if taskless {
        let start = model.spec().feature_dim;
        let mut stripped = b.clone();
        for row in stripped.obs.iter_mut().chain(stripped.next_obs.iter_mut()) {
            row[start..].iter_mut().for_each(|v| *v = 0.0);
        }
        b.append(stripped);
    }
    let (li, g) = model.loss_itd(&b, hyper)?;
    opt.itd.step(&mut model.params.values, &g.values, lr, ranges[2])?;
    Ok([lq, lrew, li])
}

/// Writes the training log as CSV.
pub fn write_log<W: Write>(out: W, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Validation(format!("writing training log: {e}"));
    w.write_record(["iteration", "task", "return", "loss_q", "loss_reward", "loss_itd"])
        .map_err(io)?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            r.task.to_string(),
            format!("{:.9}", r.episode_return),
            format!("{:.9}", r.loss_q),
            format!("{:.9}", r.loss_reward),
            format!("{:.9}", r.loss_itd),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Validation(format!("writing training log: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{FruitGrid, FruitGridConfig};
    use crate::rng;

    fn record(i: usize) -> Record {
        Record {
            obs: SparseVec::from_dense(&[i as f64, 1.0]),
            action: 0,
            reward: i as f64,
            next_obs: SparseVec::from_dense(&[0.0, 1.0]),
            next_action: 0,
            task: 0,
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for i in 0..3 {
            b.push(record(i));
        }
        assert_eq!(b.len(), 2);
        let rewards: Vec<f64> = b.records().map(|r| r.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0]);
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..50 {
            b.push(record(i));
        }
        let x = b.sample(20, &mut rng::stream(3, 0)).unwrap();
        let y = b.sample(20, &mut rng::stream(3, 0)).unwrap();
        assert_eq!(x, y);
        let mut r = x.rewards.clone();
        r.sort_by(f64::total_cmp);
        r.dedup();
        assert_eq!(r.len(), 20);
        assert!(b.sample(51, &mut rng::stream(3, 0)).is_err());
        assert!(ReplayBuffer::new(4).unwrap().sample(1, &mut rng::stream(0, 0)).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            b.push(record(i));
        }
        let mut counts = [0usize; 10];
        let mut r = rng::stream(8, 0);
        let n = 100_000;
        for _ in 0..n {
            counts[b.sample(1, &mut r).unwrap().rewards[0] as usize] += 1;
        }
        let se = (0.1f64 * 0.9 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.1).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        let full = PretrainConfig {
            d: 64,
            num_tasks: 10,
            ..PretrainConfig::default()
        };
        assert!(full.validate().is_ok());
        for bad in [
            PretrainConfig {
                gamma: 1.0,
                ..PretrainConfig::default()
            },
            PretrainConfig {
                batch_size: 0,
                ..PretrainConfig::default()
            },
            PretrainConfig {
                exploration_temperature: 0.0,
                ..PretrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn episodes_record_consistent_next_actions() {
        let env = FruitGrid::unrewarded(FruitGridConfig::desk()).unwrap();
        let ep = collect_episode(&env, 1, 3, 10, 1.0, |_| Ok(vec![0.0; 4]), &mut rng::stream(1, 0)).unwrap();
        assert_eq!(ep.records.len(), 10);
        for w in ep.records.windows(2) {
            assert_eq!(w[0].next_obs, w[1].obs);
            assert_eq!(w[0].next_action, w[1].action);
        }
        assert!(ep.records.iter().all(|r| !r.done && r.task == 1));
        // task one-hot sits after the features
        let dense = ep.records[0].obs.to_dense();
        assert_eq!(&dense[env.feature_dim()..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn short_run_is_deterministic_and_logs_every_iteration() {
        let env = FruitGrid::unrewarded(FruitGridConfig::desk()).unwrap();
        let suite = env.task_suite(3, 0).unwrap();
        let cfg = PretrainConfig {
            total_iterations: 6,
            gradient_steps_per_iteration: 2,
            episode_horizon: 20,
            psi_hidden: vec![8],
            eval_interval: 3,
            ..PretrainConfig::default()
        };
        let seeds = SeedStreams::new(5);
        let a = run_pretraining(&env, &suite.train, &cfg, &seeds).unwrap();
        let b = run_pretraining(&env, &suite.train, &cfg, &seeds).unwrap();
        assert_eq!(a.model.params.values, b.model.params.values);
        assert_eq!(a.log.len(), 6);
        assert_eq!(a.evals.len(), 6);
        assert_eq!(a.env_steps, 120);
        // first iteration: 20 records < batch 32, so no gradient step yet
        assert!(a.log[0].loss_q.is_nan());
        assert!(a.gradient_steps > 0);
        assert!(a.model.params.values.iter().all(|&v| v == v as f32 as f64));
        let mut out = Vec::new();
        write_log(&mut out, &a.log).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 7);
    }

    #[test]
    fn mismatched_task_count_is_rejected() {
        let env = FruitGrid::unrewarded(FruitGridConfig::desk()).unwrap();
        let suite = env.task_suite(3, 0).unwrap();
        let cfg = PretrainConfig {
            num_tasks: 2,
            ..PretrainConfig::default()
        };
        assert!(run_pretraining(&env, &suite.train, &cfg, &SeedStreams::new(0)).is_err());
    }
}
