use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_task, EnvKind, Outcome, TaskEnvironment, TaskSpec, TaskSuite};
use crate::error::{Error, Result};
use crate::mdp::{sample_action, Environment, StepOutcome};
use crate::rng::{self, Rng};

pub(crate) const NUM_ACTIONS: usize = 5;

pub const LANE_LEFT: usize = 0;
pub const LANE_RIGHT: usize = 1;
pub const FASTER: usize = 2;
pub const SLOWER: usize = 3;
pub const IDLE: usize = 4;

/// Reward weight layout: `[alpha, beta, kappa, target_speed, target_lane, target_headway]`.
const REWARD_TERMS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneWorldConfig {
    pub lanes: usize,
    pub speed_bins: usize,
    pub headway_bins: usize,
    pub horizon: usize,
    pub collision_penalty: f64,
    /// Speed of the slowest and fastest bin in m/s.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Metres per headway bin. Bin 0 is a collision.
    pub headway_unit: f64,
    /// Speed bin of the traffic ahead in each lane. Empty means lane 0 is
    /// fastest and each lane to the right is one bin slower.
    pub traffic_speeds: Vec<usize>,
    /// Probability that the gap grows (or shrinks) by one extra bin.
    pub drift_prob: f64,
}

impl Default for LaneWorldConfig {
    fn default() -> Self {
        Self {
            lanes: 3,
            speed_bins: 5,
            headway_bins: 6,
            horizon: 50,
            collision_penalty: 10.0,
            min_speed: 20.0,
            max_speed: 30.0,
            headway_unit: 5.0,
            traffic_speeds: Vec::new(),
            drift_prob: 0.2,
        }
    }
}

impl LaneWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes < 2 || self.speed_bins < 2 || self.headway_bins < 2 {
            return Err(Error::validation("lanes, speed_bins and headway_bins must be >= 2"));
        }
        if self.lanes > 255 || self.speed_bins > 255 || self.headway_bins > 255 {
            return Err(Error::validation("laneworld dimensions must be <= 255"));
        }
        if self.horizon == 0 {
            return Err(Error::validation("horizon must be >= 1"));
        }
        if !(self.drift_prob >= 0.0 && self.drift_prob <= 0.5) {
            return Err(Error::validation("drift_prob must be in [0, 0.5]"));
        }
        if !self.collision_penalty.is_finite() || !(self.max_speed > self.min_speed) || !(self.headway_unit > 0.0) {
            return Err(Error::validation("invalid laneworld speed, headway or penalty settings"));
        }
        if !self.traffic_speeds.is_empty()
            && (self.traffic_speeds.len() != self.lanes || self.traffic_speeds.iter().any(|&b| b >= self.speed_bins))
        {
            return Err(Error::validation("traffic_speeds needs one valid speed bin per lane"));
        }
        Ok(())
    }

    pub fn traffic_speed(&self, lane: usize) -> usize {
        if let Some(&b) = self.traffic_speeds.get(lane) {
            return b;
        }
        let mid = (self.speed_bins - 1) / 2 + (self.lanes - 1) / 2;
        mid.saturating_sub(lane).min(self.speed_bins - 1)
    }

    pub fn speed_of_bin(&self, bin: usize) -> f64 {
        self.min_speed + bin as f64 * (self.max_speed - self.min_speed) / (self.speed_bins - 1) as f64
    }

    /// Nearest speed bin to a speed in m/s.
    pub fn speed_bin(&self, speed: f64) -> usize {
        let step = (self.max_speed - self.min_speed) / (self.speed_bins - 1) as f64;
        (((speed - self.min_speed) / step).round().max(0.0) as usize).min(self.speed_bins - 1)
    }

    /// Nearest non-colliding headway bin to a gap in metres.
    pub fn headway_bin(&self, metres: f64) -> usize {
        ((metres / self.headway_unit).round().max(1.0) as usize).min(self.headway_bins - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LaneWorldState {
    pub lane: u8,
    pub speed: u8,
    pub headway: u8,
    pub crashed: bool,
    pub step: u32,
}

#[derive(Clone, Debug)]
pub struct LaneWorld {
    config: LaneWorldConfig,
    task: TaskSpec,
}

impl LaneWorld {
    pub fn new(config: LaneWorldConfig, task: TaskSpec) -> Result<Self> {
        config.validate()?;
        let env = Self { config, task };
        check_task(&env, &env.task)?;
        Ok(env)
    }

    pub fn unrewarded(config: LaneWorldConfig) -> Result<Self> {
        let task = TaskSpec {
            id: 0,
            reward_weights: vec![0.0; REWARD_TERMS],
            description: "no reward".into(),
        };
        Self::new(config, task)
    }

    pub fn config(&self) -> &LaneWorldConfig {
        &self.config
    }

    /// Task with unit coefficients and the given target bins.
    pub fn target_task(id: usize, lane: usize, speed: usize, headway: usize) -> TaskSpec {
        TaskSpec {
            id,
            reward_weights: vec![1.0, 1.0, 1.0, speed as f64, lane as f64, headway as f64],
            description: format!("lane {lane}, speed bin {speed}, headway bin {headway}"),
        }
    }

    fn check_action(action: usize) -> Result<()> {
        if action >= NUM_ACTIONS {
            return Err(Error::validation(format!("action {action} out of range for laneworld")));
        }
        Ok(())
    }

    /// Exact distribution over successors of a live state.
    fn transitions(&self, s: &LaneWorldState, action: usize) -> Vec<(f64, LaneWorldState)> {
        let c = &self.config;
        let mut lane = s.lane as usize;
        let mut speed = s.speed as usize;
        match action {
            LANE_LEFT => lane = lane.saturating_sub(1),
            LANE_RIGHT => lane = (lane + 1).min(c.lanes - 1),
            FASTER => speed = (speed + 1).min(c.speed_bins - 1),
            SLOWER => speed = speed.saturating_sub(1),
            _ => {}
        }
        let next = |headway: usize| LaneWorldState {
            lane: lane as u8,
            speed: speed as u8,
            headway: headway as u8,
            crashed: headway == 0,
            step: s.step + 1,
        };
        if lane != s.lane as usize {
            // A new lane means a new leading vehicle at a random gap.
            let p = 1.0 / (c.headway_bins - 1) as f64;
            return (1..c.headway_bins).map(|h| (p, next(h))).collect();
        }
        let closing = c.traffic_speed(lane) as i64 - speed as i64;
        let base = s.headway as i64 + closing;
        let mut out: Vec<(f64, LaneWorldState)> = Vec::with_capacity(3);
        for (noise, p) in [(-1i64, c.drift_prob), (0, 1.0 - 2.0 * c.drift_prob), (1, c.drift_prob)] {
            if p <= 0.0 {
                continue;
            }
            let h = (base + noise).clamp(0, c.headway_bins as i64 - 1) as usize;
            match out.iter_mut().find(|(_, st)| st.headway as usize == h) {
                Some(e) => e.0 += p,
                None => out.push((p, next(h))),
            }
        }
        out
    }

    fn reward_of(&self, w: &[f64], next: &LaneWorldState) -> f64 {
        let (alpha, beta, kappa) = (w[0], w[1], w[2]);
        let (ts, tl, th) = (w[3], w[4], w[5]);
        let mut r = -alpha * (next.speed as f64 - ts).abs()
            - beta * (next.lane as f64 - tl).abs()
            - kappa * (next.headway as f64 - th).abs();
        if next.crashed {
            r -= self.config.collision_penalty;
        }
        r
    }
}

impl Environment for LaneWorld {
    type State = LaneWorldState;

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn reset(&self, rng: &mut Rng) -> LaneWorldState {
        let c = &self.config;
        LaneWorldState {
            lane: rng.gen_range(0..c.lanes) as u8,
            speed: rng.gen_range(0..c.speed_bins) as u8,
            headway: rng.gen_range(1..c.headway_bins) as u8,
            crashed: false,
            step: 0,
        }
    }

    fn step(&self, state: &LaneWorldState, action: usize, rng: &mut Rng) -> Result<StepOutcome<LaneWorldState>> {
        Self::check_action(action)?;
        if state.crashed {
            let mut next = *state;
            next.step += 1;
            return Ok(StepOutcome {
                next,
                reward: 0.0,
                terminal: true,
                truncated: false,
            });
        }
        let outs = self.transitions(state, action);
        let probs: Vec<f64> = outs.iter().map(|o| o.0).collect();
        let next = outs[sample_action(&probs, rng)].1;
        Ok(StepOutcome {
            next,
            reward: self.reward_of(&self.task.reward_weights, &next),
            terminal: next.crashed,
            truncated: !next.crashed && next.step as usize >= self.config.horizon,
        })
    }
}

impl TaskEnvironment for LaneWorld {
    fn kind(&self) -> EnvKind {
        EnvKind::LaneWorld
    }

    fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn with_task(&self, task: &TaskSpec) -> Result<Self> {
        Self::new(self.config.clone(), task.clone())
    }

    fn reward_terms(&self) -> usize {
        REWARD_TERMS
    }

    /// One-hot lane, speed bin and headway bin.
    fn feature_dim(&self) -> usize {
        self.config.lanes + self.config.speed_bins + self.config.headway_bins
    }

    fn encode_features(&self, s: &LaneWorldState, out: &mut Vec<f64>) {
        let c = &self.config;
        let base = out.len();
        out.resize(base + self.feature_dim(), 0.0);
        out[base + s.lane as usize] = 1.0;
        out[base + c.lanes + s.speed as usize] = 1.0;
        out[base + c.lanes + c.speed_bins + s.headway as usize] = 1.0;
    }

    fn fingerprint(&self) -> u64 {
        rng::crc64(format!("laneworld {:?}", self.config).as_bytes())
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn behavior_bins(&self) -> usize {
        self.config.lanes
    }

    fn behavior_event(&self, s: &LaneWorldState, _action: usize) -> Option<usize> {
        (!s.crashed).then_some(s.lane as usize)
    }

    fn initial_states(&self, cap: usize) -> Result<Vec<(LaneWorldState, f64)>> {
        let c = &self.config;
        let n = c.lanes * c.speed_bins * (c.headway_bins - 1);
        if n > cap {
            return Err(Error::Capacity { states: n, cap });
        }
        let p = 1.0 / n as f64;
        let mut out = Vec::with_capacity(n);
        for lane in 0..c.lanes {
            for speed in 0..c.speed_bins {
                for headway in 1..c.headway_bins {
                    let s = LaneWorldState {
                        lane: lane as u8,
                        speed: speed as u8,
                        headway: headway as u8,
                        crashed: false,
                        step: 0,
                    };
                    out.push((s, p));
                }
            }
        }
        Ok(out)
    }

    fn task_suite(&self, k: usize, seed: u64) -> Result<TaskSuite> {
        let c = &self.config;
        // 10 m gap and 28 m/s in the fastest lane.
        let test = TaskSpec {
            description: "held out: lane 0, 28 m/s, 10 m gap".into(),
            ..Self::target_task(k, 0, c.speed_bin(28.0), c.headway_bin(10.0))
        };
        let coefficients = [0.5, 1.0, 2.0];
        let mut rng = rng::stream(seed, 0);
        let mut train: Vec<TaskSpec> = Vec::with_capacity(k);
        let mut attempts = 0usize;
        while train.len() < k {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::validation(format!("cannot draw {k} distinct laneworld tasks")));
            }
            let lane = rng.gen_range(0..c.lanes);
            let speed = rng.gen_range(0..c.speed_bins);
            let headway = rng.gen_range(1..c.headway_bins);
            let alpha = *coefficients.choose(&mut rng).unwrap();
            let mut t = Self::target_task(train.len(), lane, speed, headway);
            t.reward_weights[0] = alpha;
            t.description = format!("{} (speed weight {alpha})", t.description);
            let same_targets = |a: &TaskSpec| a.reward_weights[3..] == t.reward_weights[3..];
            if same_targets(&test) || train.iter().any(|u| u.reward_weights == t.reward_weights) {
                continue;
            }
            train.push(t);
        }
        Ok(TaskSuite { train, test })
    }

    fn outcomes(&self, state: &LaneWorldState, action: usize) -> Result<Vec<Outcome<LaneWorldState>>> {
        Self::check_action(action)?;
        let s = self.canonical(state);
        if s.crashed {
            return Ok(vec![Outcome {
                prob: 1.0,
                next: s,
                event: None,
                terminal: true,
            }]);
        }
        Ok(self
            .transitions(&s, action)
            .into_iter()
            .map(|(prob, mut next)| {
                next.step = 0;
                Outcome {
                    prob,
                    next,
                    event: None,
                    terminal: next.crashed,
                }
            })
            .collect())
    }

    fn reward_for(&self, task: &TaskSpec, _state: &LaneWorldState, _action: usize, outcome: &Outcome<LaneWorldState>) -> f64 {
        self.reward_of(&task.reward_weights, &outcome.next)
    }

    fn canonical(&self, state: &LaneWorldState) -> LaneWorldState {
        LaneWorldState { step: 0, ..*state }
    }
}
