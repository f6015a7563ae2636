use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_task, EnvKind, Outcome, TaskEnvironment, TaskSpec, TaskSuite};
use crate::error::{Error, Result};
use crate::mdp::{Environment, StepOutcome};
use crate::rng::{self, Rng};

pub(crate) const NUM_ACTIONS: usize = 4;

/// Row / column offsets of up, down, left, right.
const MOVES: [(i32, i32); NUM_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FruitGridConfig {
    pub grid_size: usize,
    pub colors: usize,
    pub fruits_per_color: usize,
    pub horizon: usize,
    pub respawn: bool,
}

impl Default for FruitGridConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            colors: 3,
            fruits_per_color: 3,
            horizon: 100,
            respawn: true,
        }
    }
}

impl FruitGridConfig {
    /// 5x5 grid with one fruit of each colour. Small enough to enumerate.
    pub fn desk() -> Self {
        Self {
            grid_size: 5,
            colors: 3,
            fruits_per_color: 1,
            horizon: 50,
            respawn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 || self.grid_size > 64 {
            return Err(Error::validation("grid_size must be in 2..=64"));
        }
        if self.colors == 0 || self.fruits_per_color == 0 {
            return Err(Error::validation("colors and fruits_per_color must be >= 1"));
        }
        if self.grid_size * self.grid_size <= self.colors * self.fruits_per_color + 1 {
            return Err(Error::validation("grid too small for the agent and all fruit"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon must be >= 1"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.grid_size * self.grid_size
    }
}

/// Agent cell, sorted fruit cells per colour and the step counter.
/// Cells are `row * grid_size + col`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FruitGridState {
    pub agent: u16,
    pub fruits: Vec<Vec<u16>>,
    pub step: u32,
}

impl FruitGridState {
    pub fn agent_pos(&self, grid_size: usize) -> (usize, usize) {
        (self.agent as usize / grid_size, self.agent as usize % grid_size)
    }

    fn color_at(&self, cell: u16) -> Option<(usize, usize)> {
        self.fruits
            .iter()
            .enumerate()
            .find_map(|(c, v)| v.binary_search(&cell).ok().map(|i| (c, i)))
    }

    fn occupied(&self, cell: u16) -> bool {
        cell == self.agent || self.color_at(cell).is_some()
    }

    fn exhausted(&self) -> bool {
        self.fruits.iter().all(|v| v.is_empty())
    }
}

#[derive(Clone, Debug)]
pub struct FruitGrid {
    config: FruitGridConfig,
    task: TaskSpec,
}

impl FruitGrid {
    pub fn new(config: FruitGridConfig, task: TaskSpec) -> Result<Self> {
        config.validate()?;
        let env = Self { config, task };
        check_task(&env, &env.task)?;
        Ok(env)
    }

    /// Environment with an all-zero reward, for tasks supplied later.
    pub fn unrewarded(config: FruitGridConfig) -> Result<Self> {
        let task = TaskSpec {
            id: 0,
            reward_weights: vec![0.0; config.colors],
            description: "no reward".into(),
        };
        Self::new(config, task)
    }

    pub fn config(&self) -> &FruitGridConfig {
        &self.config
    }

    fn destination(&self, agent: u16, action: usize) -> u16 {
        let n = self.config.grid_size as i32;
        let (r, c) = (agent as i32 / n, agent as i32 % n);
        let (dr, dc) = MOVES[action];
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nr >= n || nc < 0 || nc >= n {
            agent
        } else {
            (nr * n + nc) as u16
        }
    }

    fn check_action(action: usize) -> Result<()> {
        if action >= NUM_ACTIONS {
            return Err(Error::validation(format!("action {action} out of range for fruitgrid")));
        }
        Ok(())
    }

    /// Moves the agent and removes any collected fruit. Returns the moved
    /// state and the collected colour; respawning is left to the caller.
    fn advance(&self, state: &FruitGridState, action: usize) -> (FruitGridState, Option<usize>) {
        let mut next = state.clone();
        next.agent = self.destination(state.agent, action);
        next.step = state.step + 1;
        let hit = state.color_at(next.agent);
        if let Some((c, i)) = hit {
            next.fruits[c].remove(i);
        }
        (next, hit.map(|h| h.0))
    }

    fn empty_cells(&self, state: &FruitGridState) -> Vec<u16> {
        (0..self.config.cells() as u16).filter(|&c| !state.occupied(c)).collect()
    }

    fn place(fruits: &[u16], cell: u16) -> Vec<u16> {
        let mut v = fruits.to_vec();
        let at = v.binary_search(&cell).unwrap_err();
        v.insert(at, cell);
        v
    }
}

impl Environment for FruitGrid {
    type State = FruitGridState;

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn reset(&self, rng: &mut Rng) -> FruitGridState {
        let cells = self.config.cells() as u16;
        let mut state = FruitGridState {
            agent: rng.gen_range(0..cells),
            fruits: vec![Vec::new(); self.config.colors],
            step: 0,
        };
        for c in 0..self.config.colors {
            for _ in 0..self.config.fruits_per_color {
                let empty = self.empty_cells(&state);
                let cell = empty[rng.gen_range(0..empty.len())];
                state.fruits[c] = Self::place(&state.fruits[c], cell);
            }
        }
        state
    }

    fn step(&self, state: &FruitGridState, action: usize, rng: &mut Rng) -> Result<StepOutcome<FruitGridState>> {
        Self::check_action(action)?;
        if !self.config.respawn && state.exhausted() {
            let mut next = state.clone();
            next.step += 1;
            return Ok(StepOutcome {
                next,
                reward: 0.0,
                terminal: true,
                truncated: false,
            });
        }
        let (mut next, hit) = self.advance(state, action);
        let mut reward = 0.0;
        if let Some(c) = hit {
            reward = self.task.reward_weights[c];
            if self.config.respawn {
                let empty = self.empty_cells(&next);
                let cell = *empty.choose(rng).expect("validated grid always has an empty cell");
                next.fruits[c] = Self::place(&next.fruits[c], cell);
            }
        }
        let terminal = !self.config.respawn && next.exhausted();
        let truncated = !terminal && next.step as usize >= self.config.horizon;
        Ok(StepOutcome {
            next,
            reward,
            terminal,
            truncated,
        })
    }
}

impl TaskEnvironment for FruitGrid {
    fn kind(&self) -> EnvKind {
        EnvKind::FruitGrid
    }

    fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn with_task(&self, task: &TaskSpec) -> Result<Self> {
        Self::new(self.config.clone(), task.clone())
    }

    fn reward_terms(&self) -> usize {
        self.config.colors
    }

    /// Per colour, a one-hot plane over fruit offsets relative to the agent
    /// (`(2n-1)^2` cells), then the agent's absolute cell (`n^2`).
    fn feature_dim(&self) -> usize {
        let n = self.config.grid_size;
        let v = 2 * n - 1;
        self.config.colors * v * v + n * n
    }

    fn encode_features(&self, state: &FruitGridState, out: &mut Vec<f64>) {
        let n = self.config.grid_size;
        let v = 2 * n - 1;
        let base = out.len();
        out.resize(base + self.feature_dim(), 0.0);
        let (ar, ac) = state.agent_pos(n);
        for (c, cells) in state.fruits.iter().enumerate() {
            for &cell in cells {
                let (fr, fc) = (cell as usize / n, cell as usize % n);
                let dr = fr + n - 1 - ar;
                let dc = fc + n - 1 - ac;
                out[base + c * v * v + dr * v + dc] = 1.0;
            }
        }
        out[base + self.config.colors * v * v + state.agent as usize] = 1.0;
    }

    fn fingerprint(&self) -> u64 {
        rng::crc64(format!("fruitgrid {:?}", self.config).as_bytes())
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn behavior_bins(&self) -> usize {
        self.config.colors
    }

    fn behavior_event(&self, state: &FruitGridState, action: usize) -> Option<usize> {
        if action >= NUM_ACTIONS {
            return None;
        }
        state.color_at(self.destination(state.agent, action)).map(|h| h.0)
    }

    fn initial_states(&self, cap: usize) -> Result<Vec<(FruitGridState, f64)>> {
        let cells = self.config.cells();
        // n^2 * prod_c C(free_c, k)
        let mut count = cells as f64;
        let mut free = cells - 1;
        for _ in 0..self.config.colors {
            count *= binomial(free, self.config.fruits_per_color);
            free -= self.config.fruits_per_color;
        }
        if count > cap as f64 {
            return Err(Error::Capacity {
                states: count.min(usize::MAX as f64) as usize,
                cap,
            });
        }
        let mut out = Vec::with_capacity(count as usize);
        for agent in 0..cells as u16 {
            let mut state = FruitGridState {
                agent,
                fruits: vec![Vec::new(); self.config.colors],
                step: 0,
            };
            self.fill_color(&mut state, 0, 0, &mut out);
        }
        let p = 1.0 / out.len() as f64;
        Ok(out.into_iter().map(|s| (s, p)).collect())
    }

    fn task_suite(&self, k: usize, seed: u64) -> Result<TaskSuite> {
        let colors = self.config.colors;
        let names = color_names(colors);
        let mut train = Vec::with_capacity(k);
        for c in 0..k.min(colors) {
            let mut w = vec![0.0; colors];
            w[c] = 1.0;
            train.push(TaskSpec {
                id: c,
                reward_weights: w,
                description: format!("collect {}", names[c]),
            });
        }
        let mut test_w = vec![0.0; colors];
        test_w[0] = 0.8;
        if colors > 1 {
            test_w[1] = 0.2;
        }
        let levels = [0.0, 0.5, 1.0];
        let mut rng = rng::stream(seed, 0);
        let mut attempts = 0usize;
        while train.len() < k {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::validation(format!("cannot draw {k} distinct fruitgrid tasks")));
            }
            let w: Vec<f64> = (0..colors).map(|_| *levels.choose(&mut rng).unwrap()).collect();
            if w.iter().all(|&x| x == 0.0) || w == test_w || train.iter().any(|t| t.reward_weights == w) {
                continue;
            }
            train.push(TaskSpec {
                id: train.len(),
                description: format!("mixed {w:?}"),
                reward_weights: w,
            });
        }
        let test = TaskSpec {
            id: k,
            description: format!("{:.0}% {}, {:.0}% {}", 80.0, names[0], 20.0, names.get(1).map_or("none", |s| s)),
            reward_weights: test_w,
        };
        Ok(TaskSuite { train, test })
    }

    fn outcomes(&self, state: &FruitGridState, action: usize) -> Result<Vec<Outcome<FruitGridState>>> {
        Self::check_action(action)?;
        let canon = self.canonical(state);
        if !self.config.respawn && canon.exhausted() {
            return Ok(vec![Outcome {
                prob: 1.0,
                next: canon,
                event: None,
                terminal: true,
            }]);
        }
        let (mut next, hit) = self.advance(&canon, action);
        next.step = 0;
        match hit {
            Some(c) if self.config.respawn => {
                let empty = self.empty_cells(&next);
                let p = 1.0 / empty.len() as f64;
                Ok(empty
                    .into_iter()
                    .map(|cell| {
                        let mut s = next.clone();
                        s.fruits[c] = Self::place(&next.fruits[c], cell);
                        Outcome {
                            prob: p,
                            next: s,
                            event: Some(c),
                            terminal: false,
                        }
                    })
                    .collect())
            }
            _ => {
                let terminal = !self.config.respawn && next.exhausted();
                Ok(vec![Outcome {
                    prob: 1.0,
                    next,
                    event: hit,
                    terminal,
                }])
            }
        }
    }

    fn reward_for(&self, task: &TaskSpec, _state: &FruitGridState, _action: usize, outcome: &Outcome<FruitGridState>) -> f64 {
        outcome.event.map_or(0.0, |c| task.reward_weights[c])
    }

    fn canonical(&self, state: &FruitGridState) -> FruitGridState {
        FruitGridState {
            step: 0,
            ..state.clone()
        }
    }
}

impl FruitGrid {
    fn fill_color(&self, state: &mut FruitGridState, color: usize, min_cell: u16, out: &mut Vec<FruitGridState>) {
        if color == self.config.colors {
            out.push(state.clone());
            return;
        }
        let k = self.config.fruits_per_color;
        if state.fruits[color].len() == k {
            self.fill_color(state, color + 1, 0, out);
            return;
        }
        for cell in min_cell..self.config.cells() as u16 {
            if state.occupied(cell) {
                continue;
            }
            state.fruits[color].push(cell);
            self.fill_color(state, color, cell + 1, out);
            state.fruits[color].pop();
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn color_names(colors: usize) -> Vec<String> {
    const NAMES: [&str; 3] = ["red", "orange", "green"];
    (0..colors)
        .map(|c| NAMES.get(c).map_or_else(|| format!("color{c}"), |s| s.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::envs::enumerate_tabular;
    use crate::mdp::sample_action;

    fn task(w: &[f64]) -> TaskSpec {
        TaskSpec {
            id: 0,
            reward_weights: w.to_vec(),
            description: String::new(),
        }
    }

    fn tiny(respawn: bool) -> FruitGridConfig {
        FruitGridConfig {
            grid_size: 3,
            colors: 1,
            fruits_per_color: 1,
            horizon: 20,
            respawn,
        }
    }

    fn state(agent: u16, fruits: &[&[u16]]) -> FruitGridState {
        FruitGridState {
            agent,
            fruits: fruits.iter().map(|f| f.to_vec()).collect(),
            step: 0,
        }
    }

    #[test]
    fn reset_is_seeded_and_places_every_fruit() {
        let env = FruitGrid::unrewarded(FruitGridConfig::default()).unwrap();
        let a = env.reset(&mut rng::stream(5, 0));
        let b = env.reset(&mut rng::stream(5, 0));
        assert_eq!(a, b);
        assert_eq!(a.fruits.len(), 3);
        let mut cells: Vec<u16> = a.fruits.iter().flatten().copied().collect();
        assert!(a.fruits.iter().all(|f| f.len() == 3));
        cells.push(a.agent);
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 10);
    }

    #[test]
    fn rewards_follow_collected_color() {
        let cfg = FruitGridConfig::desk();
        // agent at (1,1), red above, orange below, green to the left
        let s = state(6, &[&[1], &[11], &[5]]);
        let red_only = FruitGrid::new(cfg.clone(), task(&[1.0, 0.0, 0.0])).unwrap();
        let mut r = rng::stream(0, 0);
        assert_eq!(red_only.step(&s, 2, &mut r).unwrap().reward, 0.0);
        assert_eq!(red_only.step(&s, 0, &mut r).unwrap().reward, 1.0);
        let mixed = FruitGrid::new(cfg, task(&[0.8, 0.2, 0.0])).unwrap();
        assert_eq!(mixed.step(&s, 0, &mut r).unwrap().reward, 0.8);
        assert_eq!(mixed.step(&s, 1, &mut r).unwrap().reward, 0.2);
        assert_eq!(mixed.step(&s, 3, &mut r).unwrap().reward, 0.0);
    }

    #[test]
    fn walls_block_movement_and_bad_actions_fail() {
        let env = FruitGrid::new(FruitGridConfig::desk(), task(&[1.0, 0.0, 0.0])).unwrap();
        let s = state(0, &[&[24], &[23], &[22]]);
        let mut r = rng::stream(0, 0);
        assert_eq!(env.step(&s, 0, &mut r).unwrap().next.agent, 0);
        assert_eq!(env.step(&s, 2, &mut r).unwrap().next.agent, 0);
        assert_eq!(env.step(&s, 3, &mut r).unwrap().next.agent, 1);
        assert!(env.step(&s, 4, &mut r).is_err());
    }

    #[test]
    fn horizon_truncates_without_terminating() {
        let mut cfg = FruitGridConfig::desk();
        cfg.horizon = 3;
        let env = FruitGrid::unrewarded(cfg).unwrap();
        let mut r = rng::stream(2, 0);
        let mut s = env.reset(&mut r);
        for t in 0..3 {
            let out = env.step(&s, 3, &mut r).unwrap();
            assert!(!out.terminal);
            assert_eq!(out.truncated, t == 2);
            s = out.next;
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny(true);
        cfg.grid_size = 2;
        cfg.colors = 3;
        assert!(FruitGrid::unrewarded(cfg).is_err());
        let mut cfg = tiny(true);
        cfg.horizon = 0;
        assert!(FruitGrid::unrewarded(cfg).is_err());
        assert!(FruitGrid::new(tiny(true), task(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn features_have_fixed_length_and_locate_fruit() {
        let env = FruitGrid::unrewarded(FruitGridConfig::desk()).unwrap();
        assert_eq!(env.feature_dim(), 3 * 81 + 25);
        let s = state(12, &[&[7], &[13], &[0]]);
        let obs = env.observe(&s, None, 3);
        assert_eq!(obs.features.len(), env.feature_dim());
        assert!(obs.task_onehot.iter().all(|&x| x == 0.0));
        // red one row above the centre: offset (-1, 0) -> (3, 4) in a 9x9 plane
        assert_eq!(obs.features[3 * 9 + 4], 1.0);
        // orange one column right: (4, 5)
        assert_eq!(obs.features[81 + 4 * 9 + 5], 1.0);
        assert_eq!(obs.features.iter().sum::<f64>(), 4.0);
        let inp = env.input(&s, Some(1), 3);
        assert_eq!(inp.len(), env.feature_dim() + 3);
        assert_eq!(&inp[env.feature_dim()..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn tiny_enumeration_matches_brute_force() {
        let env = FruitGrid::new(tiny(false), task(&[1.0])).unwrap();
        let e = enumerate_tabular(&env, &[task(&[1.0])], 0.9, 1000).unwrap();
        // agent on any of 9 cells; fruit on one of the other 8 cells or gone
        let mut expected = 0;
        for agent in 0..9 {
            for fruit in 0..=9 {
                if fruit != agent {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 81);
        assert_eq!(e.mdp.num_states(), expected);
        let terminals = (0..e.mdp.num_states()).filter(|&s| e.mdp.is_terminal(s)).count();
        assert_eq!(terminals, 9);
        for s in 0..e.mdp.num_states() {
            for a in 0..4 {
                let total: f64 = e.mdp.row(s, a).1.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn desk_enumeration_size() {
        let env = FruitGrid::unrewarded(FruitGridConfig::desk()).unwrap();
        let init = env.initial_states(400_000).unwrap();
        assert_eq!(init.len(), 25 * 24 * 23 * 22);
        assert!(matches!(env.initial_states(1000), Err(Error::Capacity { .. })));
        let big = FruitGrid::unrewarded(FruitGridConfig::default()).unwrap();
        assert!(matches!(
            enumerate_tabular(&big, &[], 0.9, 200_000),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn respawn_keeps_fruit_counts() {
        let env = FruitGrid::new(FruitGridConfig::default(), task(&[1.0, 0.5, 0.0])).unwrap();
        let mut r = rng::stream(3, 0);
        let mut s = env.reset(&mut r);
        let mut collected = 0;
        for _ in 0..2000 {
            let a = r.gen_range(0..4);
            let out = env.step(&s, a, &mut r).unwrap();
            if out.reward != 0.0 {
                collected += 1;
            }
            s = out.next;
            s.step = 0;
            assert!(s.fruits.iter().all(|f| f.len() == 3));
            let mut cells: Vec<u16> = s.fruits.iter().flatten().copied().collect();
            cells.push(s.agent);
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), 10);
        }
        assert!(collected > 0);
    }

    #[test]
    fn outcomes_match_sampled_transitions() {
        // 4x4 grid, 2 colours, respawn on: each collected fruit respawns on one
        // of the empty cells. Compare frequencies with the exact distribution.
        let cfg = FruitGridConfig {
            grid_size: 4,
            colors: 2,
            fruits_per_color: 1,
            horizon: 50,
            respawn: true,
        };
        let env = FruitGrid::new(cfg, task(&[1.0, 1.0])).unwrap();
        let s = state(5, &[&[1], &[6]]);
        let exact = env.outcomes(&s, 0).unwrap();
        assert_eq!(exact.len(), 14);
        let n = 100_000;
        let mut counts: HashMap<FruitGridState, usize> = HashMap::new();
        let mut r = rng::stream(11, 0);
        for _ in 0..n {
            let out = env.step(&s, 0, &mut r).unwrap();
            *counts.entry(env.canonical(&out.next)).or_default() += 1;
        }
        let mut within = 0;
        for o in &exact {
            let f = *counts.get(&o.next).unwrap_or(&0) as f64 / n as f64;
            let se = (o.prob * (1.0 - o.prob) / n as f64).sqrt();
            assert!((f - o.prob).abs() < 5.0 * se, "freq {f} vs {}", o.prob);
            within += usize::from((f - o.prob).abs() < 3.0 * se);
        }
        assert!(within as f64 >= 0.9 * exact.len() as f64);
        assert_eq!(counts.len(), exact.len());
    }

    #[test]
    fn enumerated_rows_match_live_frequencies() {
        let cfg = FruitGridConfig {
            grid_size: 3,
            colors: 2,
            fruits_per_color: 1,
            horizon: 50,
            respawn: true,
        };
        let env = FruitGrid::new(cfg, task(&[1.0, 0.0])).unwrap();
        let e = enumerate_tabular(&env, &[task(&[1.0, 0.0])], 0.9, 10_000).unwrap();
        let mut r = rng::stream(21, 0);
        let mut s = env.reset(&mut r);
        let mut counts: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut visits: HashMap<(usize, usize), usize> = HashMap::new();
        let steps = 100_000;
        for _ in 0..steps {
            let a = sample_action(&[0.25; 4], &mut r);
            let i = e.state_index(&env.canonical(&s)).unwrap();
            let out = env.step(&s, a, &mut r).unwrap();
            let j = e.state_index(&env.canonical(&out.next)).unwrap();
            *counts.entry((i, a, j)).or_default() += 1;
            *visits.entry((i, a)).or_default() += 1;
            s = out.next;
            s.step = 0;
        }
        let mut checked = 0;
        let mut within = 0;
        for (&(i, a), &n) in &visits {
            if n < 30 {
                continue;
            }
            let (next, prob) = e.mdp.row(i, a);
            for (&j, &p) in next.iter().zip(prob) {
                let f = *counts.get(&(i, a, j as usize)).unwrap_or(&0) as f64 / n as f64;
                let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
                assert!((f - p).abs() <= 5.0 * se + 1.0 / n as f64, "({i},{a})->{j}: {f} vs {p}");
                within += usize::from((f - p).abs() <= 3.0 * se + 1.0 / n as f64);
                checked += 1;
            }
        }
        assert!(checked > 0);
        // A 3-sigma band holds for about 99.7% of cells; allow a few misses.
        assert!(within as f64 >= 0.98 * checked as f64, "{within}/{checked}");
    }

    #[test]
    fn task_suite_shapes() {
        let env = FruitGrid::unrewarded(FruitGridConfig::default()).unwrap();
        let suite = env.task_suite(3, 0).unwrap();
        assert_eq!(suite.train.len(), 3);
        assert_eq!(suite.train[1].reward_weights, vec![0.0, 1.0, 0.0]);
        assert_eq!(suite.test.reward_weights, vec![0.8, 0.2, 0.0]);
        let big = env.task_suite(6, 4).unwrap();
        assert_eq!(big.train.len(), 6);
        for t in &big.train {
            assert_ne!(t.reward_weights, big.test.reward_weights);
        }
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn respawn_keeps_counts_and_rewards_match_the_collected_colour(
            grid_size in 3usize..6,
            colors in 1usize..4,
            fruits_per_color in 1usize..3,
            weights in prop::collection::vec(-1.0f64..1.0, 3),
            actions in prop::collection::vec(0usize..4, 1..60),
            seed in 0u64..1000,
        ) {
            let cfg = FruitGridConfig { grid_size, colors, fruits_per_color, horizon: 100, respawn: true };
            let task = TaskSpec { id: 0, reward_weights: weights[..colors].to_vec(), description: String::new() };
            let env = FruitGrid::new(cfg, task).unwrap();
            let mut r = rng::stream(seed, 0);
            let mut s = env.reset(&mut r);
            let width = env.observe(&s, None, 3).features.len();
            for a in actions {
                let out = env.step(&s, a, &mut r).unwrap();
                let n = &out.next;
                let expected = s.color_at(n.agent).map_or(0.0, |(c, _)| weights[c]);
                prop_assert_eq!(out.reward, expected);
                prop_assert!(n.fruits.iter().all(|f| f.len() == fruits_per_color));
                let mut cells: Vec<u16> = n.fruits.iter().flatten().copied().collect();
                cells.push(n.agent);
                cells.sort_unstable();
                cells.dedup();
                prop_assert_eq!(cells.len(), colors * fruits_per_color + 1);
                prop_assert!(n.fruits.iter().all(|f| f.windows(2).all(|w| w[0] < w[1])));
                let obs = env.observe(n, None, 3);
                prop_assert_eq!(obs.features.len(), width);
                prop_assert!(obs.task_onehot.iter().all(|&x| x == 0.0));
                s = out.next;
            }
        }
    }
}
