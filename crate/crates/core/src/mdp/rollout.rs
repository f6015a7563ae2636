use rand::Rng;

use super::{PolicyTable, TabularMdp};
use crate::error::{Error, Result};
use crate::rng::{self, Rng as StreamRng};

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome<S> {
    pub next: S,
    pub reward: f64,
    /// True episode end (absorbing state). Time-limit truncation is `truncated`.
    pub terminal: bool,
    pub truncated: bool,
}

impl<S> StepOutcome<S> {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Episodic environment bound to one reward function.
pub trait Environment {
    type State: Clone;

    fn num_actions(&self) -> usize;

    fn reset(&self, rng: &mut StreamRng) -> Self::State;

    fn step(&self, state: &Self::State, action: usize, rng: &mut StreamRng) -> Result<StepOutcome<Self::State>>;
}

/// A stochastic policy over environment states.
pub trait Policy<S> {
    fn action_probs(&self, state: &S) -> Vec<f64>;
}

impl<S, F: Fn(&S) -> Vec<f64>> Policy<S> for F {
    fn action_probs(&self, state: &S) -> Vec<f64> {
        self(state)
    }
}

/// Inverse-CDF draw from `probs`.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // Rounding left u above the total; fall back to the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// An ordered list of visited states and actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub steps: Vec<(S, usize)>,
    /// Evaluation-only reward channel, one entry per step.
    pub rewards: Option<Vec<f64>>,
    /// Sum of `rewards` (undiscounted).
    pub episode_return: f64,
    /// State reached after the last step.
    pub final_state: Option<S>,
    pub terminated: bool,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.rewards
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .rev()
            .fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// One episode with a fresh generator seeded from `seed`.
pub fn rollout<E, P>(env: &E, policy: &P, horizon: usize, seed: u64) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: Policy<E::State> + ?Sized,
{
    rollout_with(env, policy, horizon, &mut rng::stream(seed, 0))
}

pub fn rollout_with<E, P>(env: &E, policy: &P, horizon: usize, rng: &mut StreamRng) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: Policy<E::State> + ?Sized,
{
    if horizon == 0 {
        return Err(Error::validation("horizon must be >= 1"));
    }
    let mut state = env.reset(rng);
    let mut steps = Vec::new();
    let mut rewards = Vec::new();
    let mut terminated = false;
    for _ in 0..horizon {
        let probs = policy.action_probs(&state);
        if probs.len() != env.num_actions() {
            return Err(Error::validation("policy returned the wrong number of actions"));
        }
        let action = sample_action(&probs, rng);
        let out = env.step(&state, action, rng)?;
        steps.push((std::mem::replace(&mut state, out.next), action));
        rewards.push(out.reward);
        if out.terminal {
            terminated = true;
            break;
        }
        if out.truncated {
            break;
        }
    }
    Ok(Trajectory {
        episode_return: rewards.iter().sum(),
        steps,
        rewards: Some(rewards),
        final_state: Some(state),
        terminated,
    })
}

/// How returns are accumulated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReturnKind {
    Discounted(f64),
    Undiscounted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
}

/// Monte Carlo mean return; episode `i` draws from stream `i` of `seed`.
pub fn expected_return<E, P>(
    env: &E,
    policy: &P,
    episodes: usize,
    horizon: usize,
    kind: ReturnKind,
    seed: u64,
) -> Result<ReturnEstimate>
where
    E: Environment,
    P: Policy<E::State> + ?Sized,
{
    if episodes == 0 {
        return Err(Error::validation("episodes must be >= 1"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let traj = rollout_with(env, policy, horizon, &mut rng::stream(seed, i as u64))?;
        returns.push(match kind {
            ReturnKind::Discounted(g) => traj.discounted_return(g),
            ReturnKind::Undiscounted => traj.episode_return,
        });
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ReturnEstimate {
        mean,
        std_err: (var / n).sqrt(),
        episodes,
    })
}

/// A tabular MDP viewed as an environment for one task.
#[derive(Clone, Copy, Debug)]
pub struct TabularEnv<'a> {
    pub mdp: &'a TabularMdp,
    pub task: usize,
}

impl<'a> TabularEnv<'a> {
    pub fn new(mdp: &'a TabularMdp, task: usize) -> Result<Self> {
        mdp.check_task(task)?;
        Ok(Self { mdp, task })
    }
}

impl Environment for TabularEnv<'_> {
    type State = usize;

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn reset(&self, rng: &mut StreamRng) -> usize {
        sample_action(self.mdp.initial_dist(), rng)
    }

    fn step(&self, state: &usize, action: usize, rng: &mut StreamRng) -> Result<StepOutcome<usize>> {
        let s = *state;
        if action >= self.mdp.num_actions() {
            return Err(Error::validation(format!("action {action} out of range")));
        }
        let (next, prob) = self.mdp.row(s, action);
        let i = sample_action(prob, rng);
        let sn = next[i] as usize;
        Ok(StepOutcome {
            next: sn,
            reward: self.mdp.reward(self.task, s, action),
            terminal: self.mdp.is_terminal(sn),
            truncated: false,
        })
    }
}

impl Policy<usize> for PolicyTable {
    fn action_probs(&self, state: &usize) -> Vec<f64> {
        self.row(*state).to_vec()
    }
}
