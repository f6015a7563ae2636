//! Exact finite MDPs and the solvers used as oracles.
//!
//! Transitions are stored as sparse rows, one per `(state, action)` pair, so
//! that enumerated environments with a few hundred thousand states fit in
//! memory. Dense linear solves are reserved for small instances.

mod rollout;
mod solve;

pub use rollout::{
    expected_return, rollout, rollout_with, sample_action, Environment, Policy, ReturnEstimate, ReturnKind,
    StepOutcome, TabularEnv, Trajectory,
};
pub use solve::{
    discounted_return_exact, exact_successor_features, finite_horizon_sweep, finite_horizon_return,
    iterative_successor_features, logsumexp, policy_q_exact, policy_q_iterative, soft_backup_residual,
    soft_value_iteration, soft_value_iteration_with, softmax_policy, softmax_row, SoftViSolution, DENSE_SOLVE_CAP,
};

use crate::error::{Error, Result};

/// Sparse transition rows in compressed form, appended in `(state, action)` order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionRows {
    row_ptr: Vec<usize>,
    next: Vec<u32>,
    prob: Vec<f64>,
}

impl TransitionRows {
    pub fn new() -> Self {
        Self {
            row_ptr: vec![0],
            next: Vec::new(),
            prob: Vec::new(),
        }
    }

    /// Appends one row; duplicate successors are merged.
    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        let mut row: Vec<(usize, f64)> = entries.into_iter().collect();
        row.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (s, p) in row {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += p,
                _ => merged.push((s, p)),
            }
        }
        for (s, p) in merged {
            self.next.push(s as u32);
            self.prob.push(p);
        }
        self.row_ptr.push(self.next.len());
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.next.len()
    }
}

/// A finite MDP with one reward table per task.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    rows: TransitionRows,
    /// `rewards[task][s * num_actions + a]`
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    initial: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        rows: TransitionRows,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        initial: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mdp = Self {
            num_states,
            num_actions,
            rows,
            rewards,
            gamma,
            initial,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds from a dense `transition[s][a][s']` table and `reward[task][s][a]`.
    pub fn from_dense(
        transition: &[Vec<Vec<f64>>],
        reward: &[Vec<Vec<f64>>],
        gamma: f64,
        initial: Vec<f64>,
        terminal: &[usize],
    ) -> Result<Self> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, |r| r.len());
        let mut rows = TransitionRows::new();
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::validation(format!("state {s} has {} actions", per_action.len())));
            }
            for dist in per_action {
                if dist.len() != num_states {
                    return Err(Error::validation(format!("transition row of length {}", dist.len())));
                }
                if dist.iter().any(|p| *p < 0.0) {
                    return Err(Error::validation(format!("negative probability in state {s}")));
                }
                rows.push_row(dist.iter().copied().enumerate().filter(|e| e.1 != 0.0));
            }
        }
        let rewards = reward
            .iter()
            .map(|task| {
                if task.len() != num_states || task.iter().any(|r| r.len() != num_actions) {
                    return Err(Error::validation("reward table shape does not match transitions"));
                }
                Ok(task.iter().flatten().copied().collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut term = vec![false; num_states];
        for &t in terminal {
            if t >= num_states {
                return Err(Error::validation(format!("terminal state {t} out of range")));
            }
            term[t] = true;
        }
        Self::new(num_states, num_actions, rows, rewards, gamma, initial, term)
    }

    pub fn validate(&self) -> Result<()> {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        if s_n == 0 || a_n == 0 {
            return Err(Error::validation("MDP needs at least one state and one action"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.rows.len() != s_n * a_n {
            return Err(Error::validation(format!(
                "{} transition rows for {} state-action pairs",
                self.rows.len(),
                s_n * a_n
            )));
        }
        for sa in 0..s_n * a_n {
            let (next, prob) = self.row_index(sa);
            let mut sum = 0.0;
            for (&n, &p) in next.iter().zip(prob) {
                if (n as usize) >= s_n {
                    return Err(Error::validation(format!("successor {n} out of range")));
                }
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::validation(format!("invalid probability {p} in row {sa}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "transition row for state {} action {} sums to {sum}",
                    sa / a_n,
                    sa % a_n
                )));
            }
        }
        for (k, r) in self.rewards.iter().enumerate() {
            if r.len() != s_n * a_n {
                return Err(Error::validation(format!("reward table {k} has wrong length")));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("reward table {k} has non-finite entries")));
            }
        }
        if self.initial.len() != s_n {
            return Err(Error::validation("initial distribution length mismatch"));
        }
        let init_sum: f64 = self.initial.iter().sum();
        if self.initial.iter().any(|p| *p < 0.0) || (init_sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("initial distribution sums to {init_sum}")));
        }
        if self.terminal.len() != s_n {
            return Err(Error::validation("terminal mask length mismatch"));
        }
        for s in (0..s_n).filter(|&s| self.terminal[s]) {
            for a in 0..a_n {
                let (next, prob) = self.row(s, a);
                if next.len() != 1 || next[0] as usize != s || (prob[0] - 1.0).abs() > 1e-9 {
                    return Err(Error::validation(format!("terminal state {s} must self-loop")));
                }
                if self.rewards.iter().any(|r| r[s * a_n + a] != 0.0) {
                    return Err(Error::validation(format!("terminal state {s} must have zero reward")));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_tasks(&self) -> usize {
        self.rewards.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// Successors and probabilities of `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> (&[u32], &[f64]) {
        self.row_index(s * self.num_actions + a)
    }

    fn row_index(&self, sa: usize) -> (&[u32], &[f64]) {
        let r = self.rows.row_ptr[sa]..self.rows.row_ptr[sa + 1];
        (&self.rows.next[r.clone()], &self.rows.prob[r])
    }

    pub fn reward(&self, task: usize, s: usize, a: usize) -> f64 {
        self.rewards[task][s * self.num_actions + a]
    }

    pub fn rewards(&self, task: usize) -> &[f64] {
        &self.rewards[task]
    }

    pub fn nnz(&self) -> usize {
        self.rows.nnz()
    }

    pub(crate) fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.rewards.len() {
            return Err(Error::validation(format!(
                "task {task} out of range ({} tasks)",
                self.rewards.len()
            )));
        }
        Ok(())
    }
}

/// State-action values, row-major `values[s * num_actions + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.num_states * self.num_actions {
            return Err(Error::validation("Q table shape mismatch"));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite Q value at state {} action {}",
                i / self.num_actions,
                i % self.num_actions
            )));
        }
        Ok(())
    }
}

/// Per-state action distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub probs: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Builds a table by querying `f(state)` for every state.
    pub fn from_fn<F: FnMut(usize) -> Vec<f64>>(num_states: usize, num_actions: usize, mut f: F) -> Result<Self> {
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            let row = f(s);
            if row.len() != num_actions {
                return Err(Error::validation("policy row has wrong length"));
            }
            probs.extend(row);
        }
        let p = Self {
            num_states,
            num_actions,
            probs,
        };
        p.validate()?;
        Ok(p)
    }

    /// Argmax of each Q row, ties to the lowest action index.
    pub fn greedy(q: &QTable) -> Self {
        let mut probs = vec![0.0; q.values.len()];
        for s in 0..q.num_states {
            probs[s * q.num_actions + argmax(q.row(s))] = 1.0;
        }
        Self {
            num_states: q.num_states,
            num_actions: q.num_actions,
            probs,
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.num_states * self.num_actions {
            return Err(Error::validation("policy table shape mismatch"));
        }
        for s in 0..self.num_states {
            let row = self.row(s);
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                return Err(Error::validation(format!("invalid probability in policy row {s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// Successor features (or cumulants) per state-action pair:
/// `values[(s * num_actions + a) * dim + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl PsiTable {
    pub fn zeros(num_states: usize, num_actions: usize, dim: usize) -> Self {
        Self {
            num_states,
            num_actions,
            dim,
            values: vec![0.0; num_states * num_actions * dim],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.num_actions + a) * self.dim;
        &self.values[o..o + self.dim]
    }

    pub fn get_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let o = (s * self.num_actions + a) * self.dim;
        &mut self.values[o..o + self.dim]
    }

    /// `psi(s, a) . w` for every pair.
    pub fn dot(&self, w: &[f64]) -> QTable {
        assert_eq!(w.len(), self.dim);
        QTable {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self
                .values
                .chunks(self.dim)
                .map(|c| c.iter().zip(w).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    pub fn sup_distance(&self, other: &PsiTable) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("feature dimension must be >= 1"));
        }
        if self.values.len() != self.num_states * self.num_actions * self.dim {
            return Err(Error::validation("feature table shape mismatch"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature entry"));
        }
        Ok(())
    }
}

/// Seeded random MDP with dense transition rows and rewards in `[-1, 1)`,
/// uniform initial distribution and no terminal states.
pub fn random_mdp(seed: u64, num_states: usize, num_actions: usize, tasks: usize, gamma: f64) -> TabularMdp {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, 0);
    let mut rows = TransitionRows::new();
    for _ in 0..num_states * num_actions {
        let raw: Vec<f64> = (0..num_states).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = raw.iter().sum();
        rows.push_row(raw.into_iter().map(|v| v / z).enumerate());
    }
    let rewards = (0..tasks)
        .map(|_| (0..num_states * num_actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let initial = vec![1.0 / num_states as f64; num_states];
    TabularMdp::new(num_states, num_actions, rows, rewards, gamma, initial, vec![false; num_states])
        .expect("random MDP is valid by construction")
}

/// Appends an all-zero reward table as a new task.
pub fn with_zero_task(mut mdp: TabularMdp) -> TabularMdp {
    let n = mdp.num_states * mdp.num_actions;
    mdp.rewards.push(vec![0.0; n]);
    mdp
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rows_not_summing_to_one() {
        let t = vec![vec![vec![0.5, 0.4]], vec![vec![0.0, 1.0]]];
        let r = vec![vec![vec![0.0], vec![0.0]]];
        let err = TabularMdp::from_dense(&t, &r, 0.9, vec![1.0, 0.0], &[]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_gamma_of_one() {
        let t = vec![vec![vec![1.0]]];
        let r = vec![vec![vec![0.0]]];
        assert!(TabularMdp::from_dense(&t, &r, 1.0, vec![1.0], &[]).is_err());
    }

    #[test]
    fn rejects_rewarding_terminal() {
        let t = vec![vec![vec![1.0]]];
        let r = vec![vec![vec![1.0]]];
        assert!(TabularMdp::from_dense(&t, &r, 0.5, vec![1.0], &[0]).is_err());
        let r0 = vec![vec![vec![0.0]]];
        assert!(TabularMdp::from_dense(&t, &r0, 0.5, vec![1.0], &[0]).is_ok());
    }

    #[test]
    fn merges_duplicate_successors() {
        let mut rows = TransitionRows::new();
        rows.push_row([(1, 0.25), (0, 0.5), (1, 0.25)]);
        assert_eq!(rows.nnz(), 2);
        assert_eq!(rows.prob, vec![0.5, 0.5]);
    }

    #[test]
    fn greedy_ties_to_lowest_index() {
        let q = QTable {
            num_states: 1,
            num_actions: 3,
            values: vec![1.0, 1.0, 0.5],
        };
        assert_eq!(PolicyTable::greedy(&q).row(0), &[1.0, 0.0, 0.0]);
    }
}
