//! Multi-task environments.
//!
//! [`FruitGrid`] is a gridworld where the agent collects coloured fruit and
//! each task weights the colours differently. [`LaneWorld`] is a discrete
//! lane / speed / headway abstraction of highway driving whose tasks prefer
//! different target lanes, speeds and gaps.
//!
//! Both export exact [`TabularMdp`] forms through [`enumerate_tabular`] so
//! that learned policies can be evaluated without Monte Carlo noise.

mod fruitgrid;
mod laneworld;

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub use fruitgrid::{FruitGrid, FruitGridConfig, FruitGridState};
pub use laneworld::{LaneWorld, LaneWorldConfig, LaneWorldState, FASTER, IDLE, LANE_LEFT, LANE_RIGHT, SLOWER};

use crate::error::{Error, Result};
use crate::mdp::{Environment, TabularMdp, TransitionRows};

/// Default cap on enumerated state-space size.
pub const DEFAULT_STATE_CAP: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    FruitGrid,
    LaneWorld,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::FruitGrid => "fruitgrid",
            EnvKind::LaneWorld => "laneworld",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fruitgrid" => Some(EnvKind::FruitGrid),
            "laneworld" => Some(EnvKind::LaneWorld),
            _ => None,
        }
    }
}

/// One reward function of a multi-task environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub reward_weights: Vec<f64>,
    pub description: String,
}

/// Pre-training tasks plus the held-out demonstrated task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSuite {
    pub train: Vec<TaskSpec>,
    pub test: TaskSpec,
}

/// Encoded observation. `task_onehot` is all zeros for IRL consumers.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub task_onehot: Vec<f64>,
}

impl Observation {
    /// Model input: features followed by the task one-hot.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.features.len() + self.task_onehot.len());
        v.extend_from_slice(&self.features);
        v.extend_from_slice(&self.task_onehot);
        v
    }
}

/// One possible result of `(state, action)` with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome<S> {
    pub prob: f64,
    pub next: S,
    /// Index of the collected colour (FruitGrid) or similar reward event.
    pub event: Option<usize>,
    pub terminal: bool,
}

/// Environment with task-weighted rewards, observation encoding and an
/// exact transition model.
pub trait TaskEnvironment: Environment + Clone + Send + Sync
where
    Self::State: Eq + Hash + Send + Sync,
{
    fn kind(&self) -> EnvKind;

    fn task(&self) -> &TaskSpec;

    fn with_task(&self, task: &TaskSpec) -> Result<Self>;

    /// Length of [`TaskSpec::reward_weights`] this environment expects.
    fn reward_terms(&self) -> usize;

    fn feature_dim(&self) -> usize;

    fn encode_features(&self, state: &Self::State, out: &mut Vec<f64>);

    /// Hash of the environment configuration, recorded in demonstration files.
    fn fingerprint(&self) -> u64;

    /// Episode length limit.
    fn horizon(&self) -> usize;

    /// Number of categories in [`TaskEnvironment::behavior_event`].
    fn behavior_bins(&self) -> usize;

    /// Category counted by behavior distributions for taking `action` in
    /// `state`: the colour collected (FruitGrid) or the current lane (LaneWorld).
    fn behavior_event(&self, state: &Self::State, action: usize) -> Option<usize>;

    /// Exact initial distribution over canonical states, or a capacity error
    /// when it has more than `cap` support points.
    fn initial_states(&self, cap: usize) -> Result<Vec<(Self::State, f64)>>;

    /// Pre-training tasks and the held-out test task.
    fn task_suite(&self, k: usize, seed: u64) -> Result<TaskSuite>;

    /// Exact successor distribution of canonical `state` (step counter ignored).
    fn outcomes(&self, state: &Self::State, action: usize) -> Result<Vec<Outcome<Self::State>>>;

    /// Reward of a transition under an arbitrary task.
    fn reward_for(&self, task: &TaskSpec, state: &Self::State, action: usize, outcome: &Outcome<Self::State>) -> f64;

    /// State with the episode step counter cleared.
    fn canonical(&self, state: &Self::State) -> Self::State;

    fn observe(&self, state: &Self::State, task_slot: Option<usize>, num_tasks: usize) -> Observation {
        let mut features = Vec::with_capacity(self.feature_dim());
        self.encode_features(state, &mut features);
        let mut task_onehot = vec![0.0; num_tasks];
        if let Some(k) = task_slot {
            task_onehot[k] = 1.0;
        }
        Observation { features, task_onehot }
    }

    /// Convenience: `observe(..).to_input()`.
    fn input(&self, state: &Self::State, task_slot: Option<usize>, num_tasks: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.feature_dim() + num_tasks);
        self.encode_features(state, &mut v);
        v.resize(self.feature_dim() + num_tasks, 0.0);
        if let Some(k) = task_slot {
            v[self.feature_dim() + k] = 1.0;
        }
        v
    }
}

/// Number of actions of an environment kind.
pub fn action_count(kind: EnvKind) -> usize {
    match kind {
        EnvKind::FruitGrid => fruitgrid::NUM_ACTIONS,
        EnvKind::LaneWorld => laneworld::NUM_ACTIONS,
    }
}

/// `k` pre-training tasks plus a held-out test task for `env`.
pub fn make_task_suite<E>(env: &E, k: usize, seed: u64) -> Result<TaskSuite>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    if k == 0 {
        return Err(Error::validation("task count must be >= 1"));
    }
    env.task_suite(k, seed)
}

/// Exact tabular form of an environment.
#[derive(Clone, Debug)]
pub struct Enumerated<S> {
    pub mdp: TabularMdp,
    pub states: Vec<S>,
    pub index: HashMap<S, usize>,
    /// `events[s * num_actions + a]`
    pub events: Vec<Option<usize>>,
}

impl<S: Eq + Hash> Enumerated<S> {
    pub fn state_index(&self, state: &S) -> Option<usize> {
        self.index.get(state).copied()
    }
}

/// Enumerates all states reachable from the initial distribution and builds
/// the MDP with one reward table per entry of `tasks`.
pub fn enumerate_tabular<E>(env: &E, tasks: &[TaskSpec], gamma: f64, cap: usize) -> Result<Enumerated<E::State>>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    for t in tasks {
        check_task(env, t)?;
    }
    let na = env.num_actions();
    let init = env.initial_states(cap)?;
    let mut states: Vec<E::State> = Vec::with_capacity(init.len());
    let mut index: HashMap<E::State, usize> = HashMap::with_capacity(init.len());
    let mut initial = Vec::with_capacity(init.len());
    for (s, p) in init {
        let c = env.canonical(&s);
        let i = *index.entry(c.clone()).or_insert_with(|| {
            states.push(c);
            initial.push(0.0);
            states.len() - 1
        });
        initial[i] += p;
    }
    let mut rows = TransitionRows::new();
    let mut rewards: Vec<Vec<f64>> = vec![Vec::new(); tasks.len()];
    let mut events = Vec::new();
    let mut terminal = Vec::new();
    let mut cursor = 0;
    while cursor < states.len() {
        let s = states[cursor].clone();
        let mut is_terminal = false;
        for a in 0..na {
            let outs = env.outcomes(&s, a)?;
            let mut row = Vec::with_capacity(outs.len());
            let mut expected = vec![0.0; tasks.len()];
            for o in &outs {
                let c = env.canonical(&o.next);
                let j = match index.get(&c) {
                    Some(&j) => j,
                    None => {
                        if states.len() >= cap {
                            return Err(Error::Capacity {
                                states: states.len() + 1,
                                cap,
                            });
                        }
                        states.push(c.clone());
                        initial.push(0.0);
                        index.insert(c, states.len() - 1);
                        states.len() - 1
                    }
                };
                row.push((j, o.prob));
                for (e, t) in expected.iter_mut().zip(tasks) {
                    *e += o.prob * env.reward_for(t, &s, a, o);
                }
            }
            // Absorbing states report a single self-loop outcome flagged terminal.
            if outs.len() == 1 && outs[0].terminal && env.canonical(&outs[0].next) == s {
                is_terminal = true;
            }
            rows.push_row(row);
            for (r, e) in rewards.iter_mut().zip(expected) {
                r.push(e);
            }
            events.push(env.behavior_event(&s, a));
        }
        terminal.push(is_terminal);
        cursor += 1;
    }
    let ns = states.len();
    if is_any(&terminal) {
        for s in (0..ns).filter(|&s| terminal[s]) {
            for r in rewards.iter_mut() {
                for a in 0..na {
                    r[s * na + a] = 0.0;
                }
            }
        }
    }
    let mdp = TabularMdp::new(ns, na, rows, rewards, gamma, initial, terminal)?;
    Ok(Enumerated {
        mdp,
        states,
        index,
        events,
    })
}

fn is_any(v: &[bool]) -> bool {
    v.iter().any(|&b| b)
}

pub(crate) fn check_task<E>(env: &E, task: &TaskSpec) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    if task.reward_weights.len() != env.reward_terms() {
        return Err(Error::validation(format!(
            "task {} has {} reward weights, environment expects {}",
            task.id,
            task.reward_weights.len(),
            env.reward_terms()
        )));
    }
    if task.reward_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::validation(format!("task {} has non-finite weights", task.id)));
    }
    Ok(())
}
