//! Reward inference from demonstrations.
//!
//! Starting from a pre-trained [`BasisModel`], a single preference vector
//! `w_e` (initialised to the mean of the task preferences) and the successor
//! head are fitted to reward-free demonstrations with behavioral cloning
//! through `softmax(psi . w_e / temperature)` plus an ITD consistency loss.
//! The recovered reward is `phi(s, a) . w_e`.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::mdp::softmax_row;
use crate::model::{BasisModel, Hyper, ModelSpec, SparseVec, TransitionBatch, PHI, PSI, PSI_TARGET, TRUNK, W};
use crate::nn::Adam;
use crate::pretrain::annealed;
use crate::rng::{Rng, SeedStreams};

/// One demonstrated step: the learner-facing observation and the action.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoStep {
    pub obs: SparseVec,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Demonstration {
    pub steps: Vec<DemoStep>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Where a demonstration set came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoMeta {
    pub env: EnvKind,
    pub env_fingerprint: u64,
    pub task_id: usize,
    /// Full observation length, task slots included.
    pub obs_dim: usize,
    /// Trailing task one-hot entries of each observation (always zero).
    pub task_slots: usize,
}

/// Reward-free trajectories plus an evaluation-only reward channel.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    trajectories: Vec<Demonstration>,
    meta: DemoMeta,
    sealed: Option<Vec<Vec<f64>>>,
}

impl DemoSet {
    pub fn new(trajectories: Vec<Demonstration>, meta: DemoMeta, rewards: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if meta.task_slots > meta.obs_dim {
            return Err(Error::validation("task slots exceed observation length"));
        }
        let task_start = (meta.obs_dim - meta.task_slots) as u32;
        for (i, t) in trajectories.iter().enumerate() {
            for s in &t.steps {
                if s.obs.dim != meta.obs_dim {
                    return Err(Error::validation(format!(
                        "trajectory {i}: observation length {} != {}",
                        s.obs.dim, meta.obs_dim
                    )));
                }
                if s.obs.entries.iter().any(|&(j, _)| j >= task_start) {
                    return Err(Error::validation(format!("trajectory {i} exposes a task identity")));
                }
            }
        }
        if let Some(r) = &rewards {
            if r.len() != trajectories.len() || r.iter().zip(&trajectories).any(|(r, t)| r.len() != t.len()) {
                return Err(Error::validation("reward channel does not match the trajectories"));
            }
        }
        Ok(Self {
            trajectories,
            meta,
            sealed: rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Demonstration] {
        &self.trajectories
    }

    pub fn meta(&self) -> &DemoMeta {
        &self.meta
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn has_rewards(&self) -> bool {
        self.sealed.is_some()
    }

    /// The first `n` trajectories (with their sealed rewards).
    pub fn prefix(&self, n: usize) -> DemoSet {
        let n = n.min(self.len());
        DemoSet {
            trajectories: self.trajectories[..n].to_vec(),
            meta: self.meta.clone(),
            sealed: self.sealed.as_ref().map(|r| r[..n].to_vec()),
        }
    }

    /// Copy without the reward channel.
    pub fn learner_view(&self) -> DemoSet {
        DemoSet {
            sealed: None,
            ..self.clone()
        }
    }

    /// Evaluation-only access to the per-step rewards.
    pub(crate) fn sealed_rewards(&self) -> Option<&[Vec<f64>]> {
        self.sealed.as_deref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrlConfig {
    pub demo_counts: Vec<usize>,
    /// Passes over the demonstration steps, subject to the step bounds below.
    pub epochs: usize,
    pub min_gradient_steps: usize,
    pub max_gradient_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final_fraction: f64,
    pub gamma: f64,
    /// Temperature of the demonstrator model `softmax(Q / temperature)`.
    pub temperature: f64,
    pub bc_weight: f64,
    pub itd_weight: f64,
    /// Multiplier of the BC step size on the trunk and successor head;
    /// `w_e` always takes the full step.
    pub bc_psi_lr_scale: f64,
    pub freeze_phi: bool,
    pub target_update_interval: usize,
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self {
            demo_counts: vec![1, 10, 100, 1000],
            epochs: 10,
            min_gradient_steps: 500,
            max_gradient_steps: 20_000,
            batch_size: 32,
            lr: 1e-3,
            lr_final_fraction: 1.0,
            gamma: 0.9,
            temperature: 1.0,
            bc_weight: 1.0,
            itd_weight: 1.0,
            bc_psi_lr_scale: 1.0,
            freeze_phi: true,
            target_update_interval: 100,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<()> {
        Hyper::new(self.gamma, self.temperature)?;
        if self.epochs == 0 || self.batch_size == 0 || self.target_update_interval == 0 {
            return Err(Error::validation("irl.epochs, batch_size and target_update_interval must be >= 1"));
        }
        if self.max_gradient_steps == 0 || self.min_gradient_steps > self.max_gradient_steps {
            return Err(Error::validation("irl gradient step bounds are inconsistent"));
        }
        if !(self.bc_weight >= 0.0 && self.itd_weight >= 0.0 && self.bc_psi_lr_scale >= 0.0) {
            return Err(Error::validation("irl loss weights must be >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::validation("irl learning rate settings are invalid"));
        }
        if self.demo_counts.iter().any(|&n| n == 0) {
            return Err(Error::validation("irl.demo_counts entries must be >= 1"));
        }
        Ok(())
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            gamma: self.gamma,
            temperature: self.temperature,
        }
    }
}

/// Successor model with a single preference vector `w_e`.
#[derive(Clone, Debug)]
pub struct IrlModel {
    pub model: BasisModel,
    pub freeze_phi: bool,
    pub temperature: f64,
}

impl IrlModel {
    /// Copies the trunk and heads of `basis` and sets `w_e` to the mean of its
    /// preference vectors. The successor target is synced.
    pub fn init_from_checkpoint(basis: &BasisModel, freeze_phi: bool, temperature: f64) -> Result<Self> {
        let mut model = BasisModel::zeros(basis.spec().clone(), 1)?;
        for name in [TRUNK, PHI, PSI] {
            let src = basis.params.block(name);
            let dst = model.params.block_mut(name);
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!("block {name} has an unexpected length")));
            }
            dst.copy_from_slice(src);
        }
        let d = basis.d();
        let k = basis.num_prefs();
        let mut w = vec![0.0; d];
        for i in 0..k {
            for (acc, v) in w.iter_mut().zip(basis.preference(i)) {
                *acc += v;
            }
        }
        for v in &mut w {
            *v /= k as f64;
        }
        model.set_preference(0, &w)?;
        model.sync_target();
        Ok(Self {
            model,
            freeze_phi,
            temperature,
        })
    }

    /// Randomly initialised heads and a zero preference vector.
    pub fn random(spec: ModelSpec, freeze_phi: bool, temperature: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            model: BasisModel::new(spec, 1, rng)?,
            freeze_phi,
            temperature,
        })
    }

    pub fn w_e(&self) -> &[f64] {
        self.model.preference(0)
    }

    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.model.task_q_values(input, 0)
    }

    /// `phi_e(s, a) . w_e`.
    pub fn predict_reward(&self, input: &[f64], action: usize) -> Result<f64> {
        self.model.predict_reward(input, action, self.w_e())
    }

    fn hyper(&self, gamma: f64) -> Hyper {
        Hyper {
            gamma,
            temperature: self.temperature,
        }
    }

    /// Behavioral cloning loss and its gradient (trunk, `psi`, `w_e`).
    pub fn loss_bc(&self, batch: &TransitionBatch) -> Result<(f64, crate::nn::GradBuffer)> {
        self.model.loss_bc(batch, self.hyper(0.0))
    }

    /// ITD loss on demonstration transitions; `phi` receives gradient only
    /// when it is not frozen.
    pub fn loss_itd_e(&self, batch: &TransitionBatch, gamma: f64) -> Result<(f64, crate::nn::GradBuffer)> {
        let p = &self.model.params.values;
        let mut g = self.model.params.zero_grad();
        let loss = self
            .model
            .loss_itd_with(p, p, batch, self.hyper(gamma), !self.freeze_phi, Some(&mut g.values))?;
        Ok((loss, g))
    }

    fn bc_ranges(&self) -> Vec<Range<usize>> {
        self.model.block_ranges(&[TRUNK, PSI, W])
    }

    fn itd_ranges(&self) -> Vec<Range<usize>> {
        if self.freeze_phi {
            self.model.block_ranges(&[TRUNK, PSI])
        } else {
            self.model.block_ranges(&[TRUNK, PSI, PHI])
        }
    }
}

/// How to act from inferred Q-values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Argmax, ties to the lowest action index.
    Greedy,
    /// `softmax(Q / temperature)` with the model temperature.
    Softmax,
}

/// Action probabilities from Q-values.
pub fn policy_from_q(q: &[f64], mode: PolicyMode, temperature: f64) -> Vec<f64> {
    match mode {
        PolicyMode::Greedy => {
            let mut p = vec![0.0; q.len()];
            p[crate::mdp::argmax(q)] = 1.0;
            p
        }
        PolicyMode::Softmax => softmax_row(q, temperature),
    }
}

/// Policy over model inputs.
pub fn extract_policy(model: &IrlModel, mode: PolicyMode) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
    move |input| Ok(policy_from_q(&model.q_values(input)?, mode, model.temperature))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrlLogRow {
    pub epoch: usize,
    pub bc_loss: f64,
    pub itd_loss: f64,
}

#[derive(Clone, Debug)]
pub struct IrlResult {
    pub model: IrlModel,
    pub log: Vec<IrlLogRow>,
    pub gradient_steps: usize,
}

/// Row `(trajectory, step)` of a demonstration as a transition. The final
/// step of each trajectory is terminal.
pub(crate) fn demo_batch(demos: &DemoSet, rows: &[(usize, usize)]) -> TransitionBatch {
    let mut b = TransitionBatch::default();
    for &(i, t) in rows {
        let steps = &demos.trajectories()[i].steps;
        let obs = steps[t].obs.to_dense();
        let (next, next_action, done) = match steps.get(t + 1) {
            Some(n) => (n.obs.to_dense(), n.action, false),
            None => (obs.clone(), 0, true),
        };
        b.push(obs, steps[t].action, 0.0, next, next_action, 0, done);
    }
    b
}

/// Step sizes for the BC ranges `[trunk, psi, w]`.
pub(crate) fn bc_groups(ranges: &[Range<usize>], lr: f64, psi_scale: f64) -> Vec<(Range<usize>, f64)> {
    let last = ranges.len() - 1;
    ranges
        .iter()
        .enumerate()
        .map(|(i, r)| (r.clone(), if i == last { lr } else { lr * psi_scale }))
        .collect()
}

/// Number of gradient steps for `rows` demonstration steps.
pub fn planned_steps(config: &IrlConfig, rows: usize) -> usize {
    let per_epoch = rows.div_ceil(config.batch_size);
    (config.epochs * per_epoch).clamp(config.min_gradient_steps, config.max_gradient_steps)
}

/// Alternates a BC update and an ITD update per batch of shuffled
/// demonstration steps.
pub fn run_irl(init: IrlModel, demos: &DemoSet, config: &IrlConfig, seeds: &SeedStreams) -> Result<IrlResult> {
    config.validate()?;
    if demos.is_empty() || demos.total_steps() == 0 {
        return Err(Error::validation("no demonstrations"));
    }
    if demos.meta().obs_dim != init.model.spec().input_dim() {
        return Err(Error::validation(format!(
            "demonstration observations have length {}, model expects {}",
            demos.meta().obs_dim,
            init.model.spec().input_dim()
        )));
    }
    let mut model = init;
    model.temperature = config.temperature;
    let hyper = config.hyper();
    let rows: Vec<(usize, usize)> = demos
        .trajectories()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |s| (i, s)))
        .collect();
    let short: Vec<bool> = demos.trajectories().iter().map(|t| t.len() < 2).collect();
    let skipped = short.iter().filter(|&&s| s).count();
    if skipped > 0 {
        log::warn!("{skipped} demonstrations shorter than 2 steps are left out of the ITD loss");
    }
    let total = planned_steps(config, rows.len());
    let n = model.model.params.values.len();
    let (mut bc_opt, mut itd_opt) = (Adam::new(n), Adam::new(n));
    let (bc_ranges, itd_ranges) = (model.bc_ranges(), model.itd_ranges());
    let mut rng = seeds.rng("irl");
    let mut order = rows.clone();
    let mut log = Vec::new();
    let mut step = 0;
    let mut epoch = 0;
    while step < total {
        order.shuffle(&mut rng);
        let (mut bc_sum, mut itd_sum, mut bc_n, mut itd_n) = (0.0, 0.0, 0, 0);
        for chunk in order.chunks(config.batch_size) {
            if step >= total {
                break;
            }
            let lr = config.lr * annealed(config.lr_final_fraction, step, total);
            let batch = demo_batch(demos, chunk);
            if config.bc_weight > 0.0 {
                let (l, g) = model.loss_bc(&batch)?;
                let groups = bc_groups(&bc_ranges, lr * config.bc_weight, config.bc_psi_lr_scale);
                bc_opt.step_groups(&mut model.model.params.values, &g.values, &groups)?;
                bc_sum += l;
                bc_n += 1;
            }
            let itd_rows: Vec<(usize, usize)> = chunk.iter().copied().filter(|&(i, _)| !short[i]).collect();
            if config.itd_weight > 0.0 && !itd_rows.is_empty() {
                let batch = if itd_rows.len() == chunk.len() { batch } else { demo_batch(demos, &itd_rows) };
                let (l, g) = model.loss_itd_e(&batch, hyper.gamma)?;
                itd_opt.step(&mut model.model.params.values, &g.values, lr * config.itd_weight, &itd_ranges)?;
                itd_sum += l;
                itd_n += 1;
            }
            step += 1;
            if step % config.target_update_interval == 0 {
                model.model.sync_target();
            }
        }
        let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { f64::NAN };
        log.push(IrlLogRow {
            epoch,
            bc_loss: mean(bc_sum, bc_n),
            itd_loss: mean(itd_sum, itd_n),
        });
        epoch += 1;
    }
    model.model.snap_to_f32();
    Ok(IrlResult {
        model,
        log,
        gradient_steps: step,
    })
}

/// Mean behavioral cloning loss over every step of `demos`.
pub fn bc_loss_on(model: &IrlModel, demos: &DemoSet) -> Result<f64> {
    let rows: Vec<(usize, usize)> = demos
        .trajectories()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |s| (i, s)))
        .collect();
    if rows.is_empty() {
        return Err(Error::validation("no demonstration steps"));
    }
    let mut total = 0.0;
    for chunk in rows.chunks(256) {
        let b = demo_batch(demos, chunk);
        total += model.model.loss_bc_with(&model.model.params.values, &b, model.hyper(0.0), None)? * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Names of the blocks that `run_irl` may change.
pub fn trained_blocks(freeze_phi: bool) -> Vec<&'static str> {
    let mut v = vec![TRUNK, PSI, PSI_TARGET, W];
    if !freeze_phi {
        v.push(PHI);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng;
    use rand::Rng as _;

    fn spec() -> ModelSpec {
        ModelSpec {
            feature_dim: 4,
            task_slots: 3,
            num_actions: 4,
            d: 2,
            trunk_hidden: vec![],
            psi_hidden: vec![],
            activation: Activation::Tanh,
            task_crossed: true,
        }
    }

    fn basis(seed: u64) -> BasisModel {
        let mut r = rng::stream(seed, 0);
        let mut m = BasisModel::new(spec(), 3, &mut r).unwrap();
        m.set_preference(0, &[1.0, 0.0]).unwrap();
        m.set_preference(1, &[0.0, 1.0]).unwrap();
        m.set_preference(2, &[0.0, 0.0]).unwrap();
        m
    }

    fn demos(seed: u64, n: usize, len: usize) -> DemoSet {
        let mut r = rng::stream(seed, 0);
        let trajs = (0..n)
            .map(|_| Demonstration {
                steps: (0..len)
                    .map(|_| {
                        let mut obs = vec![0.0; 7];
                        obs[r.gen_range(0..4)] = 1.0;
                        DemoStep {
                            obs: SparseVec::from_dense(&obs),
                            // state i prefers action i
                            action: obs.iter().position(|&x| x == 1.0).unwrap(),
                        }
                    })
                    .collect(),
            })
            .collect();
        let meta = DemoMeta {
            env: EnvKind::FruitGrid,
            env_fingerprint: 1,
            task_id: 3,
            obs_dim: 7,
            task_slots: 3,
        };
        DemoSet::new(trajs, meta, None).unwrap()
    }

    #[test]
    fn init_averages_preferences_and_copies_heads() {
        let b = basis(1);
        let m = IrlModel::init_from_checkpoint(&b, true, 1.0).unwrap();
        assert_eq!(m.w_e(), &[1.0 / 3.0, 1.0 / 3.0]);
        for name in [TRUNK, PHI, PSI] {
            assert_eq!(m.model.params.block(name), b.params.block(name));
        }
        assert_eq!(m.model.params.block(PSI), m.model.params.block(PSI_TARGET));
        let x = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(m.q_values(&x).unwrap(), b.q_values(&x, m.w_e()).unwrap());

        let mut single = BasisModel::new(ModelSpec { task_slots: 1, ..spec() }, 1, &mut rng::stream(2, 0)).unwrap();
        single.set_preference(0, &[0.3, -0.7]).unwrap();
        let m = IrlModel::init_from_checkpoint(&single, true, 1.0).unwrap();
        assert_eq!(m.w_e(), &[0.3, -0.7]);
    }

    #[test]
    fn demo_sets_reject_task_identity_and_bad_rewards() {
        let d = demos(1, 2, 3);
        let mut t = d.trajectories().to_vec();
        let mut obs = vec![0.0; 7];
        obs[5] = 1.0;
        t[0].steps[0].obs = SparseVec::from_dense(&obs);
        assert!(DemoSet::new(t, d.meta().clone(), None).is_err());
        assert!(DemoSet::new(d.trajectories().to_vec(), d.meta().clone(), Some(vec![vec![0.0; 3]])).is_err());
        let sealed = DemoSet::new(d.trajectories().to_vec(), d.meta().clone(), Some(vec![vec![0.0; 3]; 2])).unwrap();
        assert!(sealed.has_rewards());
        assert!(!sealed.learner_view().has_rewards());
        assert_eq!(sealed.prefix(1).len(), 1);
        assert_eq!(sealed.prefix(1).sealed_rewards().unwrap().len(), 1);
    }

    #[test]
    fn final_demo_step_is_terminal() {
        let d = demos(2, 1, 3);
        let b = demo_batch(&d, &[(0, 0), (0, 2)]);
        assert_eq!(b.dones, vec![false, true]);
        assert_eq!(b.next_obs[0], d.trajectories()[0].steps[1].obs.to_dense());
        assert_eq!(b.next_actions[0], d.trajectories()[0].steps[1].action);
    }

    #[test]
    fn bc_gradient_skips_phi_and_itd_respects_freeze() {
        let b = basis(3);
        let d = demos(4, 2, 5);
        let batch = demo_batch(&d, &[(0, 0), (0, 1), (1, 4)]);
        let m = IrlModel::init_from_checkpoint(&b, true, 0.5).unwrap();
        let (_, g) = m.loss_bc(&batch).unwrap();
        assert!(g.block_is_zero(PHI) && g.block_is_zero(PSI_TARGET));
        let (_, g) = m.loss_itd_e(&batch, 0.9).unwrap();
        assert!(g.block_is_zero(PHI) && g.block_is_zero(W));
        let unfrozen = IrlModel {
            freeze_phi: false,
            ..m.clone()
        };
        let (_, g) = unfrozen.loss_itd_e(&batch, 0.9).unwrap();
        assert!(!g.block_is_zero(PHI));
    }

    #[test]
    fn uniform_q_gives_log_four() {
        let mut b = basis(5);
        for k in 0..3 {
            b.set_preference(k, &[0.0, 0.0]).unwrap();
        }
        let m = IrlModel::init_from_checkpoint(&b, true, 1.0).unwrap();
        let d = demos(6, 3, 4);
        assert!((bc_loss_on(&m, &d).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn training_fits_demonstrations_and_keeps_phi() {
        let b = basis(7);
        let d = demos(8, 20, 10);
        let init = IrlModel::init_from_checkpoint(&b, true, 1.0).unwrap();
        let before = bc_loss_on(&init, &d).unwrap();
        let cfg = IrlConfig {
            epochs: 30,
            lr: 1e-2,
            ..IrlConfig::default()
        };
        let seeds = SeedStreams::new(3);
        let res = run_irl(init.clone(), &d, &cfg, &seeds).unwrap();
        let after = bc_loss_on(&res.model, &d).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
        let mut snapped = init.clone();
        snapped.model.snap_to_f32();
        assert_eq!(res.model.model.params.block(PHI), snapped.model.params.block(PHI));
        let again = run_irl(init, &d, &cfg, &seeds).unwrap();
        assert_eq!(again.model.w_e(), res.model.w_e());
        let greedy = extract_policy(&res.model, PolicyMode::Greedy);
        let x = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(greedy(&x).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_demos_are_rejected() {
        let d = demos(9, 0, 0);
        let init = IrlModel::init_from_checkpoint(&basis(1), true, 1.0).unwrap();
        assert!(run_irl(init, &d, &IrlConfig::default(), &SeedStreams::new(0)).is_err());
    }

    #[test]
    fn policy_modes() {
        assert_eq!(policy_from_q(&[1.0, 1.0, 1.0], PolicyMode::Greedy, 1.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(policy_from_q(&[2.0, 2.0], PolicyMode::Softmax, 1.0), vec![0.5, 0.5]);
        let q = [0.3, 1.2, -0.4];
        let shifted: Vec<f64> = q.iter().map(|v| v + 5.0).collect();
        assert_eq!(policy_from_q(&q, PolicyMode::Greedy, 1.0), policy_from_q(&shifted, PolicyMode::Greedy, 1.0));
    }
}
