//! Cumulants, successor features and preferences.
//!
//! One flat parameter vector holds the blocks `trunk`, `phi`, `psi`,
//! `psi_target` and `w`. The trunk reads the observation features; the `phi`
//! head reads the trunk output; the `psi` head reads the trunk output followed
//! by the task one-hot. Both heads emit `d * num_actions` values, and the
//! `d`-vector for action `a` is `out[a * d..(a + 1) * d]`.
//!
//! Every loss is computed from two parameter vectors: `live`, which carries
//! gradients, and `frozen`, which supplies every stop-gradient term (the
//! target network, the cumulants inside the ITD targets, the bootstrap
//! preference vector). The public loss functions pass the same vector twice.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::logsumexp;
use crate::nn::{Activation, GradBuffer, Layout, MlpSpec, ParamVector, Trace};
use crate::rng::Rng;

pub const TRUNK: &str = "trunk";
pub const PHI: &str = "phi";
pub const PSI: &str = "psi";
pub const PSI_TARGET: &str = "psi_target";
pub const W: &str = "w";

/// Architecture of a [`BasisModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Observation features, excluding the task one-hot.
    pub feature_dim: usize,
    /// Length of the task one-hot appended to the features.
    pub task_slots: usize,
    pub num_actions: usize,
    /// Number of cumulants.
    pub d: usize,
    /// Hidden widths of the shared trunk. Empty means the identity.
    pub trunk_hidden: Vec<usize>,
    /// Hidden widths of the successor head.
    pub psi_hidden: Vec<usize>,
    pub activation: Activation,
    /// Also feed the successor head one copy of the trunk output per task
    /// slot, multiplied by that slot's one-hot entry. A linear head then has
    /// shared weights plus per-task weights; an all-zero task input keeps
    /// only the shared part.
    #[serde(default)]
    pub task_crossed: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_actions == 0 || self.d == 0 {
            return Err(Error::validation("feature_dim, num_actions and d must be >= 1"));
        }
        if self.trunk_hidden.iter().chain(&self.psi_hidden).any(|&h| h == 0) {
            return Err(Error::validation("hidden widths must be >= 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.task_slots
    }

    pub fn trunk(&self) -> Option<MlpSpec> {
        let (&last, rest) = self.trunk_hidden.split_last()?;
        Some(MlpSpec {
            input_dim: self.feature_dim,
            hidden: rest.to_vec(),
            activation: self.activation,
            output_dim: last,
            activate_output: true,
        })
    }

    pub fn trunk_out(&self) -> usize {
        self.trunk_hidden.last().copied().unwrap_or(self.feature_dim)
    }

    pub fn phi_head(&self) -> MlpSpec {
        MlpSpec::linear(self.trunk_out(), self.d * self.num_actions)
    }

    pub fn psi_input_dim(&self) -> usize {
        let t = self.trunk_out();
        t + self.task_slots + if self.task_crossed { t * self.task_slots } else { 0 }
    }

    pub fn psi_head(&self) -> MlpSpec {
        MlpSpec::new(
            self.psi_input_dim(),
            self.psi_hidden.clone(),
            self.activation,
            self.d * self.num_actions,
        )
    }

    /// Parameter layout with `prefs` preference vectors.
    pub fn layout(&self, prefs: usize) -> Layout {
        let mut l = Layout::new();
        l.push(TRUNK, self.trunk().map_or(0, |t| t.param_count()));
        l.push(PHI, self.phi_head().param_count());
        let psi = self.psi_head().param_count();
        l.push(PSI, psi);
        l.push(PSI_TARGET, psi);
        l.push(W, prefs * self.d);
        l
    }
}

/// Discount and soft-max temperature shared by the losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub gamma: f64,
    pub temperature: f64,
}

impl Hyper {
    pub fn new(gamma: f64, temperature: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::validation(format!("gamma must be in [0, 1), got {gamma}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::validation(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { gamma, temperature })
    }
}

/// Sparse observation storage for replay buffers and demonstrations.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_dense(v: &[f64]) -> Self {
        Self {
            dim: v.len(),
            entries: v
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, &x)| (i as u32, x))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i as usize] = x;
        }
        v
    }
}

/// Rows of `(s, a, r, s', a', task, done)`. `obs` rows are full model inputs
/// (features and task one-hot); `tasks` index preference vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub next_actions: Vec<usize>,
    pub tasks: Vec<usize>,
    pub dones: Vec<bool>,
    /// Optional per-row weights; losses become weighted means.
    pub weights: Option<Vec<f64>>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: usize, reward: f64, next_obs: Vec<f64>, next_action: usize, task: usize, done: bool) {
        self.obs.push(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.next_obs.push(next_obs);
        self.next_actions.push(next_action);
        self.tasks.push(task);
        self.dones.push(done);
    }

    /// Appends the rows of `other`.
    pub fn append(&mut self, mut other: TransitionBatch) {
        let (n, m) = (self.len(), other.len());
        self.weights = match (self.weights.take(), other.weights.take()) {
            (None, None) => None,
            (a, b) => {
                let mut w = a.unwrap_or_else(|| vec![1.0; n]);
                w.extend(b.unwrap_or_else(|| vec![1.0; m]));
                Some(w)
            }
        };
        self.obs.append(&mut other.obs);
        self.actions.append(&mut other.actions);
        self.rewards.append(&mut other.rewards);
        self.next_obs.append(&mut other.next_obs);
        self.next_actions.append(&mut other.next_actions);
        self.tasks.append(&mut other.tasks);
        self.dones.append(&mut other.dones);
    }

    /// Copy of rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> TransitionBatch {
        TransitionBatch {
            obs: idx.iter().map(|&i| self.obs[i].clone()).collect(),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: idx.iter().map(|&i| self.next_obs[i].clone()).collect(),
            next_actions: idx.iter().map(|&i| self.next_actions[i]).collect(),
            tasks: idx.iter().map(|&i| self.tasks[i]).collect(),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
            weights: self.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn total_weight(&self) -> f64 {
        self.weights.as_ref().map_or(self.len() as f64, |w| w.iter().sum())
    }

    pub fn validate(&self, model: &BasisModel) -> Result<()> {
        let n = self.obs.len();
        if n == 0 {
            return Err(Error::validation("empty batch"));
        }
        let lens = [
            self.actions.len(),
            self.rewards.len(),
            self.next_obs.len(),
            self.next_actions.len(),
            self.tasks.len(),
            self.dones.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.weights.as_ref().is_some_and(|w| w.len() != n) {
            return Err(Error::validation("batch columns have unequal lengths"));
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || !(self.total_weight() > 0.0) {
                return Err(Error::validation("batch weights must be non-negative with positive sum"));
            }
        }
        let na = model.spec.num_actions;
        if self.actions.iter().chain(&self.next_actions).any(|&a| a >= na) {
            return Err(Error::validation("batch action out of range"));
        }
        if self.tasks.iter().any(|&k| k >= model.num_prefs) {
            return Err(Error::validation("batch task id has no preference vector"));
        }
        let dim = model.spec.input_dim();
        if self.obs.iter().chain(&self.next_obs).any(|o| o.len() != dim) {
            return Err(Error::validation(format!("batch observation length differs from {dim}")));
        }
        Ok(())
    }
}

/// Forward pass shared by the heads for one input.
struct Pass {
    trunk_trace: Option<Trace>,
    trunk_out: Vec<f64>,
    psi_in: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Ranges {
    trunk: Range<usize>,
    phi: Range<usize>,
    psi: Range<usize>,
    psi_target: Range<usize>,
    w: Range<usize>,
}

/// Cumulant head, successor head with target copy, and preference vectors.
#[derive(Clone, Debug)]
pub struct BasisModel {
    spec: ModelSpec,
    num_prefs: usize,
    pub params: ParamVector,
    trunk: Option<MlpSpec>,
    phi: MlpSpec,
    psi: MlpSpec,
    ranges: Ranges,
}

impl BasisModel {
    /// Randomly initialised heads, target synced, preferences at zero.
    pub fn new(spec: ModelSpec, num_prefs: usize, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(spec, num_prefs)?;
        if let Some(t) = &m.trunk {
            t.init(rng, &mut m.params.values[m.ranges.trunk.clone()]);
        }
        m.phi.init(rng, &mut m.params.values[m.ranges.phi.clone()]);
        m.psi.init(rng, &mut m.params.values[m.ranges.psi.clone()]);
        m.sync_target();
        Ok(m)
    }

    pub fn zeros(spec: ModelSpec, num_prefs: usize) -> Result<Self> {
        spec.validate()?;
        if num_prefs == 0 {
            return Err(Error::validation("a model needs at least one preference vector"));
        }
        let layout = spec.layout(num_prefs);
        let ranges = Ranges {
            trunk: layout.range(TRUNK),
            phi: layout.range(PHI),
            psi: layout.range(PSI),
            psi_target: layout.range(PSI_TARGET),
            w: layout.range(W),
        };
        Ok(Self {
            trunk: spec.trunk(),
            phi: spec.phi_head(),
            psi: spec.psi_head(),
            params: ParamVector::zeros(layout),
            num_prefs,
            spec,
            ranges,
        })
    }

    pub fn from_params(spec: ModelSpec, num_prefs: usize, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(spec, num_prefs)?;
        m.params = ParamVector::from_values(m.params.layout().clone(), values)?;
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_prefs(&self) -> usize {
        self.num_prefs
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions
    }

    pub fn preference(&self, k: usize) -> &[f64] {
        let d = self.spec.d;
        &self.params.block(W)[k * d..(k + 1) * d]
    }

    pub fn set_preference(&mut self, k: usize, w: &[f64]) -> Result<()> {
        let d = self.spec.d;
        if w.len() != d || k >= self.num_prefs {
            return Err(Error::validation("preference index or length mismatch"));
        }
        self.params.block_mut(W)[k * d..(k + 1) * d].copy_from_slice(w);
        Ok(())
    }

    /// Index ranges of the named blocks, for restricting optimizer updates.
    pub fn block_ranges(&self, names: &[&str]) -> Vec<Range<usize>> {
        names.iter().map(|n| self.params.layout().range(n)).collect()
    }

    /// Copies the successor parameters into the target block.
    pub fn sync_target(&mut self) {
        let (psi, target) = (self.ranges.psi.clone(), self.ranges.psi_target.clone());
        self.params.values.copy_within(psi, target.start);
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn snap_to_f32(&mut self) {
        for v in &mut self.params.values {
            *v = *v as f32 as f64;
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::validation(format!(
                "input length {} does not match model input {}",
                input.len(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.spec.d {
            return Err(Error::validation(format!("preference length {} != d = {}", w.len(), self.spec.d)));
        }
        Ok(())
    }

    fn pass(&self, params: &[f64], input: &[f64], want_trace: bool) -> Result<Pass> {
        self.check_input(input)?;
        let (features, task) = input.split_at(self.spec.feature_dim);
        let (trunk_trace, trunk_out) = match &self.trunk {
            None => (None, features.to_vec()),
            Some(t) => {
                let p = &params[self.ranges.trunk.clone()];
                if want_trace {
                    let tr = t.forward_trace(p, features)?;
                    let out = tr.output().to_vec();
                    (Some(tr), out)
                } else {
                    (None, t.forward(p, features)?)
                }
            }
        };
        let mut psi_in = Vec::with_capacity(self.spec.psi_input_dim());
        psi_in.extend_from_slice(&trunk_out);
        psi_in.extend_from_slice(task);
        if self.spec.task_crossed {
            for &t in task {
                if t == 0.0 {
                    psi_in.resize(psi_in.len() + trunk_out.len(), 0.0);
                } else {
                    psi_in.extend(trunk_out.iter().map(|h| h * t));
                }
            }
        }
        Ok(Pass {
            trunk_trace,
            trunk_out,
            psi_in,
        })
    }

    fn phi_out(&self, params: &[f64], pass: &Pass) -> Result<Vec<f64>> {
        self.phi.forward(&params[self.ranges.phi.clone()], &pass.trunk_out)
    }

    fn psi_out(&self, params: &[f64], pass: &Pass, target: bool) -> Result<Vec<f64>> {
        let r = if target { self.ranges.psi_target.clone() } else { self.ranges.psi.clone() };
        self.psi.forward(&params[r], &pass.psi_in)
    }

    fn per_action(&self, flat: Vec<f64>) -> Vec<Vec<f64>> {
        flat.chunks(self.spec.d).map(|c| c.to_vec()).collect()
    }

    /// `phi(s, a)` for every action.
    pub fn cumulants(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = &self.params.values;
        let pass = self.pass(p, input, false)?;
        Ok(self.per_action(self.phi_out(p, &pass)?))
    }

    /// `psi(s, a)` for every action, from the online or the target block.
    pub fn successor(&self, input: &[f64], use_target: bool) -> Result<Vec<Vec<f64>>> {
        let p = &self.params.values;
        let pass = self.pass(p, input, false)?;
        Ok(self.per_action(self.psi_out(p, &pass, use_target)?))
    }

    /// `Q(s, a) = psi(s, a) . w` for every action.
    pub fn q_values(&self, input: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_w(w)?;
        let p = &self.params.values;
        let pass = self.pass(p, input, false)?;
        Ok(dot_actions(&self.psi_out(p, &pass, false)?, w))
    }

    /// Q-values under preference vector `k`.
    pub fn task_q_values(&self, input: &[f64], k: usize) -> Result<Vec<f64>> {
        if k >= self.num_prefs {
            return Err(Error::validation(format!("no preference vector {k}")));
        }
        self.q_values(input, self.preference(k))
    }

    /// `phi(s, a) . w`.
    pub fn predict_reward(&self, input: &[f64], action: usize, w: &[f64]) -> Result<f64> {
        self.check_w(w)?;
        if action >= self.spec.num_actions {
            return Err(Error::validation(format!("action {action} out of range")));
        }
        let p = &self.params.values;
        let pass = self.pass(p, input, false)?;
        let phi = self.phi_out(p, &pass)?;
        let d = self.spec.d;
        Ok(dot(&phi[action * d..(action + 1) * d], w))
    }

    /// Pushes head cotangents back through the heads and trunk.
    fn backprop(
        &self,
        params: &[f64],
        pass: &Pass,
        phi_cot: Option<&[f64]>,
        psi_cot: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Result<()> {
        let need_trunk = self.trunk.is_some();
        let mut trunk_cot = vec![0.0; if need_trunk { self.spec.trunk_out() } else { 0 }];
        if let Some(c) = phi_cot {
            let r = self.ranges.phi.clone();
            let tr = self.phi.forward_trace(&params[r.clone()], &pass.trunk_out)?;
            let dx = self.phi.backward(&params[r.clone()], &tr, c, &mut grad[r], need_trunk)?;
            for (t, g) in trunk_cot.iter_mut().zip(&dx) {
                *t += g;
            }
        }
        if let Some(c) = psi_cot {
            let r = self.ranges.psi.clone();
            let tr = self.psi.forward_trace(&params[r.clone()], &pass.psi_in)?;
            let dx = self.psi.backward(&params[r.clone()], &tr, c, &mut grad[r], need_trunk)?;
            for (t, g) in trunk_cot.iter_mut().zip(&dx) {
                *t += g;
            }
            if need_trunk && self.spec.task_crossed {
                let (tw, slots) = (self.spec.trunk_out(), self.spec.task_slots);
                for k in 0..slots {
                    let tk = pass.psi_in[tw + k];
                    if tk != 0.0 {
                        let block = &dx[tw + slots + k * tw..tw + slots + (k + 1) * tw];
                        for (t, g) in trunk_cot.iter_mut().zip(block) {
                            *t += tk * g;
                        }
                    }
                }
            }
        }
        if let (Some(t), Some(tr)) = (&self.trunk, &pass.trunk_trace) {
            let r = self.ranges.trunk.clone();
            t.backward(&params[r.clone()], tr, &trunk_cot, &mut grad[r], false)?;
        }
        Ok(())
    }

    fn finish(loss: f64, what: &str) -> Result<f64> {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::Divergence(format!("{what} loss is not finite")))
        }
    }

    /// Soft Bellman error of `psi . w_k` against a target built from the
    /// target successor block. Gradients reach the trunk, `psi` and `w`.
    pub fn loss_q_with(
        &self,
        live: &[f64],
        frozen: &[f64],
        batch: &TransitionBatch,
        hyper: Hyper,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        batch.validate(self)?;
        let d = self.spec.d;
        let total_w = batch.total_weight();
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let (k, a) = (batch.tasks[i], batch.actions[i]);
            let wr = self.ranges.w.start + k * d..self.ranges.w.start + (k + 1) * d;
            let mut y = batch.rewards[i];
            if !batch.dones[i] && hyper.gamma > 0.0 {
                let np = self.pass(frozen, &batch.next_obs[i], false)?;
                let q_next = dot_actions(&self.psi_out(frozen, &np, true)?, &frozen[wr.clone()]);
                y += hyper.gamma * soft_value(&q_next, hyper.temperature);
            }
            let pass = self.pass(live, &batch.obs[i], grad.is_some())?;
            let psi = self.psi_out(live, &pass, false)?;
            let w = &live[wr.clone()];
            let q = dot(&psi[a * d..(a + 1) * d], w);
            let err = q - y;
            let scale = batch.weight(i) / total_w;
            loss += scale * err * err;
            if let Some(g) = grad.as_deref_mut() {
                let c = 2.0 * scale * err;
                let mut cot = vec![0.0; psi.len()];
                for j in 0..d {
                    cot[a * d + j] = c * w[j];
                    g[wr.start + j] += c * psi[a * d + j];
                }
                self.backprop(live, &pass, None, Some(&cot), g)?;
            }
        }
        Self::finish(loss, "q")
    }

    /// Squared error of `phi . w_k` against the observed reward. Gradients
    /// reach the trunk, `phi` and `w`.
    pub fn loss_reward_with(&self, live: &[f64], batch: &TransitionBatch, mut grad: Option<&mut [f64]>) -> Result<f64> {
        batch.validate(self)?;
        let d = self.spec.d;
        let total_w = batch.total_weight();
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let (k, a) = (batch.tasks[i], batch.actions[i]);
            let wr = self.ranges.w.start + k * d..self.ranges.w.start + (k + 1) * d;
            let pass = self.pass(live, &batch.obs[i], grad.is_some())?;
            let phi = self.phi_out(live, &pass)?;
            let w = &live[wr.clone()];
            let err = dot(&phi[a * d..(a + 1) * d], w) - batch.rewards[i];
            let scale = batch.weight(i) / total_w;
            loss += scale * err * err;
            if let Some(g) = grad.as_deref_mut() {
                let c = 2.0 * scale * err;
                let mut cot = vec![0.0; phi.len()];
                for j in 0..d {
                    cot[a * d + j] = c * w[j];
                    g[wr.start + j] += c * phi[a * d + j];
                }
                self.backprop(live, &pass, Some(&cot), None, g)?;
            }
        }
        Self::finish(loss, "reward")
    }

    /// `|psi(s,a) - phi(s,a) - gamma psi_target(s',a')|^2`. With `train_phi`
    /// unset the cumulants come from `frozen` and receive no gradient.
    pub fn loss_itd_with(
        &self,
        live: &[f64],
        frozen: &[f64],
        batch: &TransitionBatch,
        hyper: Hyper,
        train_phi: bool,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        batch.validate(self)?;
        let d = self.spec.d;
        let total_w = batch.total_weight();
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let a = batch.actions[i];
            let mut target = vec![0.0; d];
            if !batch.dones[i] && hyper.gamma > 0.0 {
                let np = self.pass(frozen, &batch.next_obs[i], false)?;
                let na = batch.next_actions[i];
                let psi_next = self.psi_out(frozen, &np, true)?;
                for (t, v) in target.iter_mut().zip(&psi_next[na * d..(na + 1) * d]) {
                    *t = hyper.gamma * v;
                }
            }
            let pass = self.pass(live, &batch.obs[i], grad.is_some())?;
            let phi = if train_phi {
                self.phi_out(live, &pass)?
            } else {
                let fp = self.pass(frozen, &batch.obs[i], false)?;
                self.phi_out(frozen, &fp)?
            };
            let psi = self.psi_out(live, &pass, false)?;
            let scale = batch.weight(i) / total_w;
            let err: Vec<f64> = (0..d).map(|j| psi[a * d + j] - phi[a * d + j] - target[j]).collect();
            loss += scale * err.iter().map(|e| e * e).sum::<f64>();
            if let Some(g) = grad.as_deref_mut() {
                let mut psi_cot = vec![0.0; psi.len()];
                for j in 0..d {
                    psi_cot[a * d + j] = 2.0 * scale * err[j];
                }
                let phi_cot: Option<Vec<f64>> = train_phi.then(|| psi_cot.iter().map(|c| -c).collect());
                self.backprop(live, &pass, phi_cot.as_deref(), Some(&psi_cot), g)?;
            }
        }
        Self::finish(loss, "itd")
    }

    /// Cross-entropy of `softmax(psi . w_k / temperature)` against the batch
    /// actions. Gradients reach the trunk, `psi` and `w`.
    pub fn loss_bc_with(&self, live: &[f64], batch: &TransitionBatch, hyper: Hyper, mut grad: Option<&mut [f64]>) -> Result<f64> {
        batch.validate(self)?;
        let (d, na) = (self.spec.d, self.spec.num_actions);
        let total_w = batch.total_weight();
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let (k, a) = (batch.tasks[i], batch.actions[i]);
            let wr = self.ranges.w.start + k * d..self.ranges.w.start + (k + 1) * d;
            let pass = self.pass(live, &batch.obs[i], grad.is_some())?;
            let psi = self.psi_out(live, &pass, false)?;
            let w = &live[wr.clone()];
            let logits: Vec<f64> = dot_actions(&psi, w).iter().map(|q| q / hyper.temperature).collect();
            let lse = logsumexp(&logits);
            let scale = batch.weight(i) / total_w;
            loss += scale * (lse - logits[a]);
            if let Some(g) = grad.as_deref_mut() {
                let mut cot = vec![0.0; psi.len()];
                for b in 0..na {
                    let p = (logits[b] - lse).exp();
                    let dl = scale * (p - f64::from(u8::from(b == a))) / hyper.temperature;
                    for j in 0..d {
                        cot[b * d + j] = dl * w[j];
                        g[wr.start + j] += dl * psi[b * d + j];
                    }
                }
                self.backprop(live, &pass, None, Some(&cot), g)?;
            }
        }
        Self::finish(loss, "bc")
    }

    fn with_grad<F>(&self, f: F) -> Result<(f64, GradBuffer)>
    where
        F: FnOnce(&mut [f64]) -> Result<f64>,
    {
        let mut g = self.params.zero_grad();
        let loss = f(&mut g.values)?;
        Ok((loss, g))
    }

    pub fn loss_q(&self, batch: &TransitionBatch, hyper: Hyper) -> Result<(f64, GradBuffer)> {
        let p = &self.params.values;
        self.with_grad(|g| self.loss_q_with(p, p, batch, hyper, Some(g)))
    }

    pub fn loss_reward(&self, batch: &TransitionBatch) -> Result<(f64, GradBuffer)> {
        let p = &self.params.values;
        self.with_grad(|g| self.loss_reward_with(p, batch, Some(g)))
    }

    pub fn loss_itd(&self, batch: &TransitionBatch, hyper: Hyper) -> Result<(f64, GradBuffer)> {
        let p = &self.params.values;
        self.with_grad(|g| self.loss_itd_with(p, p, batch, hyper, false, Some(g)))
    }

    pub fn loss_bc(&self, batch: &TransitionBatch, hyper: Hyper) -> Result<(f64, GradBuffer)> {
        let p = &self.params.values;
        self.with_grad(|g| self.loss_bc_with(p, batch, hyper, Some(g)))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-action dot products of a flat `d * A` head output with `w`.
pub(crate) fn dot_actions(flat: &[f64], w: &[f64]) -> Vec<f64> {
    flat.chunks(w.len()).map(|c| dot(c, w)).collect()
}

/// `temperature * logsumexp(q / temperature)`.
pub fn soft_value(q: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = q.iter().map(|v| v / temperature).collect();
    temperature * logsumexp(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, random_coords};
    use crate::rng;
    use rand::Rng as _;

    fn spec(trunk: Vec<usize>, psi_hidden: Vec<usize>) -> ModelSpec {
        ModelSpec {
            task_crossed: false,
            feature_dim: 5,
            task_slots: 2,
            num_actions: 3,
            d: 2,
            trunk_hidden: trunk,
            psi_hidden,
            activation: Activation::Tanh,
        }
    }

    fn random_model(spec: ModelSpec, seed: u64) -> BasisModel {
        let mut r = rng::stream(seed, 0);
        let mut m = BasisModel::new(spec, 2, &mut r).unwrap();
        for v in m.params.values.iter_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
        m
    }

    fn input(r: &mut Rng, task: Option<usize>) -> Vec<f64> {
        let mut v: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        v.extend([0.0, 0.0]);
        if let Some(k) = task {
            v[5 + k] = 1.0;
        }
        v
    }

    fn batch(seed: u64, n: usize, irl: bool) -> TransitionBatch {
        let mut r = rng::stream(seed, 1);
        let mut b = TransitionBatch::default();
        for i in 0..n {
            let k = if irl { 0 } else { i % 2 };
            let slot = (!irl).then_some(k);
            b.push(
                input(&mut r, slot),
                r.gen_range(0..3),
                r.gen_range(-1.0..1.0),
                input(&mut r, slot),
                r.gen_range(0..3),
                k,
                i % 4 == 3,
            );
        }
        b
    }

    /// Independent evaluator: explicit matrix loops over the documented layout.
    fn reference_head(params: &[f64], layers: &[(usize, usize)], act: Activation, activate_last: bool, x: &[f64]) -> Vec<f64> {
        let mut x = x.to_vec();
        let mut off = 0;
        for (l, &(i, o)) in layers.iter().enumerate() {
            let mut z = vec![0.0; o];
            for (out, zv) in z.iter_mut().enumerate() {
                let mut s = params[off + i * o + out];
                for inp in 0..i {
                    s += x[inp] * params[off + inp * o + out];
                }
                *zv = s;
            }
            off += i * o + o;
            if l + 1 < layers.len() || activate_last {
                for v in &mut z {
                    *v = match act {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
            x = z;
        }
        x
    }

    #[test]
    fn heads_match_reference_evaluator() {
        let m = random_model(spec(vec![4], vec![3]), 1);
        let mut r = rng::stream(2, 0);
        let x = input(&mut r, Some(1));
        let p = &m.params;
        let h = reference_head(p.block(TRUNK), &[(5, 4)], Activation::Tanh, true, &x[..5]);
        let phi = reference_head(p.block(PHI), &[(4, 6)], Activation::Tanh, false, &h);
        let mut psi_in = h.clone();
        psi_in.extend_from_slice(&x[5..]);
        let psi = reference_head(p.block(PSI), &[(6, 3), (3, 6)], Activation::Tanh, false, &psi_in);
        let got_phi: Vec<f64> = m.cumulants(&x).unwrap().concat();
        let got_psi: Vec<f64> = m.successor(&x, false).unwrap().concat();
        for (a, b) in got_phi.iter().zip(&phi).chain(got_psi.iter().zip(&psi)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_heads_give_zero_outputs() {
        let m = BasisModel::zeros(spec(vec![], vec![]), 2).unwrap();
        let x = input(&mut rng::stream(0, 0), Some(0));
        assert!(m.cumulants(&x).unwrap().concat().iter().all(|&v| v == 0.0));
        assert!(m.q_values(&x, &[1.0, 2.0]).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.cumulants(&[0.0; 3]).is_err());
        assert!(m.q_values(&x, &[1.0]).is_err());
    }

    #[test]
    fn tabular_cumulants_are_rows_of_the_head() {
        // identity trunk, one-hot states: phi(s) is the weight row of s
        let sp = ModelSpec {
            feature_dim: 3,
            task_slots: 0,
            num_actions: 2,
            d: 1,
            trunk_hidden: vec![],
            psi_hidden: vec![],
            activation: Activation::Tanh,
            task_crossed: false,
        };
        let mut m = BasisModel::zeros(sp, 1).unwrap();
        // psi rows: state 0 -> (2, 3)
        m.params.block_mut(PSI)[..2].copy_from_slice(&[2.0, 3.0]);
        m.params.block_mut(PHI)[2..4].copy_from_slice(&[1.0, 0.0]);
        let q = m.q_values(&[1.0, 0.0, 0.0], &[0.5]).unwrap();
        assert_eq!(q, vec![1.0, 1.5]);
        assert_eq!(m.cumulants(&[0.0, 1.0, 0.0]).unwrap(), vec![vec![1.0], vec![0.0]]);
        assert_eq!(m.cumulants(&[0.0, 0.0, 1.0]).unwrap(), vec![vec![0.0], vec![0.0]]);
        assert_eq!(m.predict_reward(&[0.0, 1.0, 0.0], 0, &[0.8]).unwrap(), 0.8);
    }

    #[test]
    fn reward_loss_hand_example() {
        // phi(s, 0) = (1, 0), w = 0, r = 1 -> loss 1, dw = (-2, 0)
        let sp = ModelSpec {
            feature_dim: 1,
            task_slots: 0,
            num_actions: 1,
            d: 2,
            trunk_hidden: vec![],
            psi_hidden: vec![],
            activation: Activation::Tanh,
            task_crossed: false,
        };
        let mut m = BasisModel::zeros(sp, 1).unwrap();
        m.params.block_mut(PHI).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let mut b = TransitionBatch::default();
        b.push(vec![1.0], 0, 1.0, vec![1.0], 0, 0, true);
        let (loss, g) = m.loss_reward(&b).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g.block(W), &[-2.0, 0.0]);
        assert!(g.block_is_zero(PSI) && g.block_is_zero(PSI_TARGET));
    }

    #[test]
    fn q_loss_discount_free_and_fixed_point() {
        let m = random_model(spec(vec![], vec![]), 3);
        let b = batch(4, 1, false);
        let h = Hyper::new(0.0, 1.0).unwrap();
        let (loss, _) = m.loss_q(&b, h).unwrap();
        let q = m.task_q_values(&b.obs[0], b.tasks[0]).unwrap()[b.actions[0]];
        assert!((loss - (q - b.rewards[0]).powi(2)).abs() < 1e-12);
        // set the reward to the current Q: exact fixed point, zero gradient
        let mut fixed = b.clone();
        fixed.rewards[0] = q;
        let (loss, g) = m.loss_q(&fixed, h).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn itd_gamma_zero_is_distance_to_cumulants() {
        let m = random_model(spec(vec![4], vec![]), 5);
        let b = batch(6, 3, false);
        let (loss, _) = m.loss_itd(&b, Hyper::new(0.0, 1.0).unwrap()).unwrap();
        let mut expect = 0.0;
        for i in 0..3 {
            let a = b.actions[i];
            let phi = &m.cumulants(&b.obs[i]).unwrap()[a];
            let psi = &m.successor(&b.obs[i], false).unwrap()[a];
            expect += phi.iter().zip(psi).map(|(x, y)| (y - x).powi(2)).sum::<f64>() / 3.0;
        }
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn bc_loss_of_uniform_policy_is_log_actions() {
        let m = random_model(spec(vec![], vec![]), 7);
        let b = batch(8, 5, true);
        let mut zero = m.clone();
        zero.set_preference(0, &[0.0, 0.0]).unwrap();
        let (loss, _) = zero.loss_bc(&b, Hyper::new(0.9, 1.0).unwrap()).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn target_sync_is_bit_exact() {
        let mut m = random_model(spec(vec![3], vec![2]), 9);
        assert_ne!(m.params.block(PSI), m.params.block(PSI_TARGET));
        let b = batch(10, 4, false);
        let h = Hyper::new(0.9, 0.5).unwrap();
        let before = m.loss_q(&b, h).unwrap().0;
        m.sync_target();
        assert_eq!(m.params.block(PSI), m.params.block(PSI_TARGET));
        assert_ne!(before, m.loss_q(&b, h).unwrap().0);
        let fresh = BasisModel::new(spec(vec![3], vec![2]), 2, &mut rng::stream(1, 1)).unwrap();
        assert_eq!(fresh.params.block(PSI), fresh.params.block(PSI_TARGET));
        assert!(fresh.params.block(W).iter().all(|&v| v == 0.0));
    }

    fn check_grad<F: Fn(&[f64], Option<&mut [f64]>) -> f64>(m: &BasisModel, f: F, seed: u64) -> GradBuffer {
        let mut g = m.params.zero_grad();
        f(&m.params.values, Some(&mut g.values));
        let coords = random_coords(&mut rng::stream(seed, 0), m.params.values.len(), 200);
        let res = gradcheck(|p| f(p, None), &m.params.values, &g.values, Some(&coords), 1e-5);
        assert!(res.max_rel_error < 1e-4, "gradcheck {res:?}");
        g
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (trunk, psi_h, crossed) in [(vec![], vec![], false), (vec![4], vec![3], false), (vec![4], vec![], true)] {
            let m = random_model(ModelSpec { task_crossed: crossed, ..spec(trunk, psi_h) }, 11);
            let base = m.params.values.clone();
            let b = batch(12, 6, false);
            let h = Hyper::new(0.9, 0.7).unwrap();

            let g = check_grad(&m, |p, g| m.loss_q_with(p, &base, &b, h, g).unwrap(), 1);
            assert!(g.block_is_zero(PHI) && g.block_is_zero(PSI_TARGET));

            let g = check_grad(&m, |p, g| m.loss_reward_with(p, &b, g).unwrap(), 2);
            assert!(g.block_is_zero(PSI) && g.block_is_zero(PSI_TARGET));

            let g = check_grad(&m, |p, g| m.loss_itd_with(p, &base, &b, h, false, g).unwrap(), 3);
            assert!(g.block_is_zero(PHI) && g.block_is_zero(PSI_TARGET) && g.block_is_zero(W));

            let g = check_grad(&m, |p, g| m.loss_itd_with(p, &base, &b, h, true, g).unwrap(), 4);
            assert!(!g.block_is_zero(PHI) && g.block_is_zero(PSI_TARGET));

            let irl = batch(13, 6, true);
            let g = check_grad(&m, |p, g| m.loss_bc_with(p, &irl, h, g).unwrap(), 5);
            assert!(g.block_is_zero(PHI) && g.block_is_zero(PSI_TARGET));
        }
    }

    #[test]
    fn frozen_cumulants_still_change_the_itd_value() {
        let m = random_model(spec(vec![], vec![]), 14);
        let b = batch(15, 4, false);
        let h = Hyper::new(0.9, 1.0).unwrap();
        let mut shifted = m.clone();
        shifted.params.block_mut(PHI)[0] += 0.3;
        let (l0, g0) = m.loss_itd(&b, h).unwrap();
        let (l1, _) = shifted.loss_itd(&b, h).unwrap();
        assert_ne!(l0, l1);
        assert!(g0.block_is_zero(PHI));
    }

    #[test]
    fn weighted_rows_equal_repeated_rows() {
        let m = random_model(spec(vec![], vec![]), 16);
        let b = batch(17, 2, false);
        let mut w = b.clone();
        w.weights = Some(vec![2.0, 1.0]);
        let mut rep = b.clone();
        rep.push(b.obs[0].clone(), b.actions[0], b.rewards[0], b.next_obs[0].clone(), b.next_actions[0], b.tasks[0], b.dones[0]);
        let h = Hyper::new(0.8, 1.0).unwrap();
        assert!((m.loss_itd(&w, h).unwrap().0 - m.loss_itd(&rep, h).unwrap().0).abs() < 1e-12);
        let mut bad = b.clone();
        bad.tasks[0] = 5;
        assert!(m.loss_q(&bad, h).is_err());
        assert!(m.loss_q(&TransitionBatch::default(), h).is_err());
    }

    #[test]
    fn sparse_round_trip() {
        let v = vec![0.0, 1.0, 0.0, -2.5];
        let s = SparseVec::from_dense(&v);
        assert_eq!(s.entries.len(), 2);
        assert_eq!(s.to_dense(), v);
    }
}
