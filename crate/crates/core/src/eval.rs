//! Evaluation of inferred policies and rewards, and the ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::hash::Hash;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ablation::{pretrain_from_demos, pretrain_q_only, q_only_irl_config};
use crate::config::RunConfig;
use crate::envs::{enumerate_tabular, make_task_suite, EnvKind, Enumerated, TaskEnvironment, TaskSuite};
use crate::error::{Error, Result};
use crate::expert::{exact_expert, format_real, make_expert, sample_demos, Expert, ExpertMode};
use crate::irl::{extract_policy, run_irl, DemoSet, IrlModel, PolicyMode};
use crate::mdp::{expected_return, finite_horizon_return, finite_horizon_sweep, rollout_with, Policy, PolicyTable, ReturnKind};
use crate::model::BasisModel;
use crate::pretrain::run_pretraining;
use crate::rng::{self, SeedStreams};

/// Grid rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Successor pre-training, then reward inference.
    Basis,
    /// Random initialisation, then reward inference.
    NoPretraining,
    /// Q-only pre-training, then behavioral cloning on Q.
    NoSfDqn,
    /// Pre-training from demonstrations of the training tasks.
    IrlPretraining,
    /// `Basis` with the cumulant head trained during inference.
    BasisUnfrozenPhi,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Basis,
        Variant::NoPretraining,
        Variant::NoSfDqn,
        Variant::IrlPretraining,
        Variant::BasisUnfrozenPhi,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Pre-training run this variant starts from, if any. Variants with the
    /// same kind share one run per seed.
    pub fn pretraining(self) -> Option<PretrainKind> {
        match self {
            Variant::Basis | Variant::BasisUnfrozenPhi => Some(PretrainKind::Successor),
            Variant::NoPretraining => None,
            Variant::NoSfDqn => Some(PretrainKind::QOnly),
            Variant::IrlPretraining => Some(PretrainKind::Demonstrations),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Basis => "basis",
            Variant::NoPretraining => "no_pretraining",
            Variant::NoSfDqn => "no_sf_dqn",
            Variant::IrlPretraining => "irl_pretraining",
            Variant::BasisUnfrozenPhi => "basis_unfrozen_phi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PretrainKind {
    Successor,
    QOnly,
    Demonstrations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub variants: Vec<Variant>,
    /// Grid seeds; each derives its own family from the run seed.
    pub seeds: Vec<u64>,
    /// Evaluate on the enumerated MDP when it fits under the state cap;
    /// otherwise Monte Carlo with `episodes` rollouts.
    pub exact: bool,
    pub episodes: usize,
    pub policy_mode: PolicyMode,
    /// Extra expert demonstrations used only to measure reward MSE.
    pub heldout_demos: usize,
    /// Demonstrations per training task for `irl_pretraining`.
    pub pretraining_demos_per_task: usize,
    /// Worker threads for grid cells (0 = available parallelism).
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Basis, Variant::NoPretraining, Variant::NoSfDqn],
            seeds: vec![0, 1, 2, 3, 4],
            exact: true,
            episodes: 200,
            policy_mode: PolicyMode::Greedy,
            heldout_demos: 50,
            pretraining_demos_per_task: 100,
            threads: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::validation("eval.variants and eval.seeds must be non-empty"));
        }
        if self.episodes == 0 || self.heldout_demos == 0 || self.pretraining_demos_per_task == 0 {
            return Err(Error::validation("eval episode and demonstration counts must be >= 1"));
        }
        Ok(())
    }
}

/// Mean squared error of `phi_e . w_e` against the sealed demonstration
/// rewards, over every demonstrated step.
pub fn reward_mse(model: &IrlModel, demos: &DemoSet) -> Result<f64> {
    let rewards = demos
        .sealed_rewards()
        .ok_or_else(|| Error::validation("demonstrations carry no reward channel"))?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, r) in demos.trajectories().iter().zip(rewards) {
        for (s, &rt) in t.steps.iter().zip(r) {
            let pred = model.predict_reward(&s.obs.to_dense(), s.action)?;
            sum += (pred - rt).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::validation("no demonstration steps"));
    }
    Ok(sum / n as f64)
}

/// Evaluates `policy` on the learner input of every enumerated state, on
/// worker threads. Inputs carry `task_slots` zeroed task entries.
pub fn tabulate_policy<E, F>(env: &E, enumerated: &Enumerated<E::State>, task_slots: usize, policy: F) -> Result<PolicyTable>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let ns = enumerated.states.len();
    let na = env.num_actions();
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(ns.max(1));
    let per = ns.div_ceil(workers).max(1);
    let policy = &policy;
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = enumerated
            .states
            .chunks(per)
            .map(|chunk| {
                scope.spawn(move || {
                    let mut out = Vec::with_capacity(chunk.len() * na);
                    for s in chunk {
                        let p = policy(&env.input(s, None, task_slots))?;
                        if p.len() != na {
                            return Err(Error::validation("policy returned the wrong number of actions"));
                        }
                        out.extend(p);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("policy worker panicked")).collect()
    });
    let mut probs = Vec::with_capacity(ns * na);
    for p in parts {
        probs.extend(p?);
    }
    PolicyTable::from_fn(ns, na, |s| probs[s * na..(s + 1) * na].to_vec())
}

/// Exact expected undiscounted return of a tabulated policy.
pub fn exact_return<S>(enumerated: &Enumerated<S>, policy: &PolicyTable, task: usize, horizon: usize) -> Result<f64> {
    finite_horizon_return(&enumerated.mdp, policy, task, horizon)
}

/// Exact expected share of behavior events per bin over `horizon` steps. When
/// no event has positive probability the uniform vector is returned.
pub fn behavior_distribution_exact<S>(
    enumerated: &Enumerated<S>,
    policy: &PolicyTable,
    bins: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let na = enumerated.mdp.num_actions();
    let mut mass = vec![0.0; bins];
    finite_horizon_sweep(&enumerated.mdp, policy, horizon, |s, a, m| {
        if let Some(b) = enumerated.events[s * na + a] {
            mass[b] += m;
        }
    })?;
    Ok(normalize_counts(mass))
}

fn normalize_counts(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        log::warn!("no behavior events observed; reporting a uniform distribution");
        let n = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / n);
    }
    v
}

/// An inferred policy acting on environment states through the learner input
/// (all task entries zero).
pub struct InputPolicy<'a, E, F> {
    env: &'a E,
    task_slots: usize,
    policy: F,
}

impl<'a, E, F> InputPolicy<'a, E, F> {
    pub fn new(env: &'a E, task_slots: usize, policy: F) -> Self {
        Self { env, task_slots, policy }
    }
}

impl<E, F> Policy<E::State> for InputPolicy<'_, E, F>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn action_probs(&self, state: &E::State) -> Vec<f64> {
        (self.policy)(&self.env.input(state, None, self.task_slots)).expect("inferred policy accepts learner inputs")
    }
}

/// Monte Carlo value difference with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueDifference {
    pub value: f64,
    pub std_err: f64,
    pub expert_return: f64,
    pub inferred_return: f64,
}

/// `expected_return(expert) - expected_return(inferred)` under the task bound
/// to `env`, undiscounted over the environment horizon. Both policies get
/// `episodes` rollouts from independent streams of `seed`.
pub fn value_difference_estimate<E, P, Q>(env: &E, inferred: &P, expert: &Q, episodes: usize, seed: u64) -> Result<ValueDifference>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    P: Policy<E::State> + ?Sized,
    Q: Policy<E::State> + ?Sized,
{
    let streams = SeedStreams::new(seed);
    let h = env.horizon();
    let e = expected_return(env, expert, episodes, h, ReturnKind::Undiscounted, streams.rng("expert").gen())?;
    let i = expected_return(env, inferred, episodes, h, ReturnKind::Undiscounted, streams.rng("inferred").gen())?;
    Ok(ValueDifference {
        value: e.mean - i.mean,
        std_err: (e.std_err.powi(2) + i.std_err.powi(2)).sqrt(),
        expert_return: e.mean,
        inferred_return: i.mean,
    })
}

pub fn value_difference<E, P, Q>(env: &E, inferred: &P, expert: &Q, episodes: usize, seed: u64) -> Result<f64>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    P: Policy<E::State> + ?Sized,
    Q: Policy<E::State> + ?Sized,
{
    Ok(value_difference_estimate(env, inferred, expert, episodes, seed)?.value)
}

/// Monte Carlo share of behavior events per bin over `episodes` rollouts.
pub fn behavior_distribution<E, P>(env: &E, policy: &P, episodes: usize, seed: u64) -> Result<Vec<f64>>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
    P: Policy<E::State> + ?Sized,
{
    if episodes == 0 {
        return Err(Error::validation("episodes must be >= 1"));
    }
    let mut counts = vec![0.0; env.behavior_bins()];
    for i in 0..episodes {
        let t = rollout_with(env, policy, env.horizon(), &mut rng::stream(seed, i as u64))?;
        for (s, a) in &t.steps {
            if let Some(b) = env.behavior_event(s, *a) {
                counts[b] += 1.0;
            }
        }
    }
    Ok(normalize_counts(counts))
}

/// Tabulates a policy over environment states.
pub fn tabulate_state_policy<S, P: Policy<S> + ?Sized>(enumerated: &Enumerated<S>, num_actions: usize, policy: &P) -> Result<PolicyTable> {
    PolicyTable::from_fn(enumerated.states.len(), num_actions, |s| policy.action_probs(&enumerated.states[s]))
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub variant: Variant,
    pub env: EnvKind,
    pub n_demos: usize,
    pub seed: u64,
    pub value_difference: f64,
    /// `None` for variants that do not recover a reward.
    pub reward_mse: Option<f64>,
    pub distribution: Vec<f64>,
}

/// Mean and sample standard deviation over seeds of one (variant, N) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub n_demos: usize,
    pub seeds: usize,
    pub value_difference_mean: f64,
    pub value_difference_std: f64,
    pub value_difference_median: f64,
    pub reward_mse_mean: Option<f64>,
    pub reward_mse_std: Option<f64>,
    pub distribution_mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub env: EnvKind,
    pub root_seed: u64,
    /// Returns are undiscounted sums over `horizon` steps.
    pub returns: String,
    pub horizon: usize,
    /// `exact` (enumerated MDP) or `monte_carlo`.
    pub evaluation: String,
    pub episodes: usize,
    pub expert_return: f64,
    pub expert_distribution: Vec<f64>,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub meta: Option<ReportMeta>,
}

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_META: &str = "report_meta.toml";

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv: {e}"))
}

impl MetricsReport {
    /// Rows sorted by variant, demonstration count and seed.
    pub fn new(mut rows: Vec<ReportRow>, meta: Option<ReportMeta>) -> Self {
        rows.sort_by(|a, b| (a.variant, a.n_demos, a.seed).cmp(&(b.variant, b.n_demos, b.seed)));
        Self { rows, meta }
    }

    pub fn bins(&self) -> usize {
        self.rows.first().map_or(0, |r| r.distribution.len())
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(Variant, usize), Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.variant, r.n_demos)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((variant, n_demos), rows)| {
                let vd: Vec<f64> = rows.iter().map(|r| r.value_difference).collect();
                let (vd_mean, vd_std) = mean_std(&vd);
                let mse: Option<Vec<f64>> = rows.iter().map(|r| r.reward_mse).collect();
                let mse = mse.map(|m| mean_std(&m));
                let bins = rows[0].distribution.len();
                let distribution_mean = (0..bins)
                    .map(|b| rows.iter().map(|r| r.distribution[b]).sum::<f64>() / rows.len() as f64)
                    .collect();
                SummaryRow {
                    variant,
                    n_demos,
                    seeds: rows.len(),
                    value_difference_mean: vd_mean,
                    value_difference_std: vd_std,
                    value_difference_median: median(&vd),
                    reward_mse_mean: mse.map(|m| m.0),
                    reward_mse_std: mse.map(|m| m.1),
                    distribution_mean,
                }
            })
            .collect()
    }

    /// Summary entry for `(variant, n_demos)`.
    pub fn cell(&self, variant: Variant, n_demos: usize) -> Option<SummaryRow> {
        self.summary().into_iter().find(|s| s.variant == variant && s.n_demos == n_demos)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["variant", "env", "N_demos", "seed", "value_difference", "reward_mse"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.bins()).map(|b| format!("dist_{b}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.variant.name().to_string(),
                r.env.name().to_string(),
                r.n_demos.to_string(),
                r.seed.to_string(),
                format_real(r.value_difference),
                r.reward_mse.map_or_else(|| "NA".to_string(), format_real),
            ];
            rec.extend(r.distribution.iter().map(|&d| format_real(d)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "variant",
            "N_demos",
            "seeds",
            "value_difference_mean",
            "value_difference_std",
            "value_difference_median",
            "reward_mse_mean",
            "reward_mse_std",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..self.bins()).map(|b| format!("dist_{b}_mean")));
        w.write_record(&header).map_err(csv_err)?;
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), format_real);
        for s in self.summary() {
            let mut rec = vec![
                s.variant.name().to_string(),
                s.n_demos.to_string(),
                s.seeds.to_string(),
                format_real(s.value_difference_mean),
                format_real(s.value_difference_std),
                format_real(s.value_difference_median),
                na(s.reward_mse_mean),
                na(s.reward_mse_std),
            ];
            rec.extend(s.distribution_mean.iter().map(|&d| format_real(d)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses the output of [`MetricsReport::to_csv_string`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let fixed = ["variant", "env", "N_demos", "seed", "value_difference", "reward_mse"];
        if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
            return Err(Error::validation("report.csv has an unexpected header"));
        }
        let bins = header.len() - fixed.len();
        let bad = |what: &str, line: usize| Error::validation(format!("report.csv line {line}: bad {what}"));
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            let real = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| bad(what, line));
            rows.push(ReportRow {
                variant: Variant::from_name(&rec[0]).ok_or_else(|| bad("variant", line))?,
                env: EnvKind::from_name(&rec[1]).ok_or_else(|| bad("env", line))?,
                n_demos: rec[2].parse().map_err(|_| bad("N_demos", line))?,
                seed: rec[3].parse().map_err(|_| bad("seed", line))?,
                value_difference: real(4, "value_difference")?,
                reward_mse: if &rec[5] == "NA" { None } else { Some(real(5, "reward_mse")?) },
                distribution: (0..bins).map(|b| real(6 + b, "distribution")).collect::<Result<_>>()?,
            });
        }
        Ok(Self::new(rows, None))
    }

    /// Writes `report.csv`, `summary.csv` and (when present) the metadata.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(REPORT_CSV, self.to_csv_string()?)?;
        write(SUMMARY_CSV, self.summary_csv_string()?)?;
        if let Some(meta) = &self.meta {
            write(REPORT_META, toml::to_string(meta).expect("report metadata serializes"))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let p = dir.join(REPORT_CSV);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut report = Self::from_csv_str(&text)?;
        let m = dir.join(REPORT_META);
        if m.exists() {
            let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
            report.meta = Some(toml::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", m.display())))?);
        }
        Ok(report)
    }

    /// Plain-text table of the summary.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>7} {:>12} {:>10} {:>10}  distribution", "variant", "N", "value diff", "std", "reward mse");
        for s in self.summary() {
            let mse = s.reward_mse_mean.map_or_else(|| "NA".to_string(), |m| format!("{m:.4}"));
            let dist: Vec<String> = s.distribution_mean.iter().map(|d| format!("{d:.3}")).collect();
            let _ = writeln!(
                out,
                "{:<20} {:>7} {:>12.4} {:>10.4} {:>10}  [{}]",
                s.variant.name(),
                s.n_demos,
                s.value_difference_mean,
                s.value_difference_std,
                mse,
                dist.join(", ")
            );
        }
        out
    }
}

/// Runs `f` over `items` on up to `threads` workers; results keep item order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let workers = if threads == 0 {
        std::thread::available_parallelism().map_or(1, |w| w.get())
    } else {
        threads
    }
    .min(items.len())
    .max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item was processed"))
        .collect()
}

/// Demonstrations drawn for one grid seed.
pub struct SeedDemos {
    /// The largest demonstration set; smaller cells use prefixes.
    pub demos: DemoSet,
    /// Held-out expert demonstrations used only for reward MSE.
    pub heldout: DemoSet,
}

/// Result of one grid cell.
pub struct CellOutcome {
    pub row: ReportRow,
    pub model: IrlModel,
    pub gradient_steps: usize,
}

/// Everything shared by the cells of a grid: environment, tasks, the exact
/// MDP (when enumerable) and the demonstrator.
pub struct Setting<E: TaskEnvironment>
where
    E::State: Eq + Hash + Send + Sync,
{
    pub config: RunConfig,
    /// Environment with an all-zero reward.
    pub env: E,
    /// Environment bound to the test task.
    pub test_env: E,
    pub suite: TaskSuite,
    /// Reward table 0 is the test task, table `k + 1` training task `k`.
    pub enumerated: Option<Arc<Enumerated<E::State>>>,
    pub expert: Expert<E>,
    pub expert_return: f64,
    pub expert_distribution: Vec<f64>,
}

impl<E> Setting<E>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    /// Builds the task suite, enumerates the MDP when exact evaluation or an
    /// exact expert is requested, and constructs the expert.
    pub fn prepare(env: E, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedStreams::new(config.seed);
        let suite = make_task_suite(&env, config.pretrain.num_tasks, config.env.task_seed)?;
        let test_env = env.with_task(&suite.test)?;
        let exact_expert_mode = config.expert.mode == ExpertMode::Exact;
        let enumerated = if config.eval.exact || exact_expert_mode {
            let mut tasks = vec![suite.test.clone()];
            tasks.extend(suite.train.iter().cloned());
            match enumerate_tabular(&test_env, &tasks, config.expert.gamma, config.env.state_cap) {
                Ok(e) => Some(Arc::new(e)),
                Err(e @ Error::Capacity { .. }) if !exact_expert_mode => {
                    log::warn!("{e}; falling back to Monte Carlo evaluation");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let expert = match &enumerated {
            Some(en) if exact_expert_mode => exact_expert(&test_env, en.clone(), 0, &config.expert)?,
            _ => make_expert(&env, &suite.test, &config.expert, &seeds)?,
        };
        let mut setting = Self {
            config: config.clone(),
            env,
            test_env,
            suite,
            enumerated,
            expert,
            expert_return: 0.0,
            expert_distribution: Vec::new(),
        };
        let (ret, dist) = match setting.exact_enumeration() {
            Some(en) => {
                let table = match setting.expert.exact_parts() {
                    Some((_, p)) => p.clone(),
                    None => tabulate_state_policy(en, setting.env.num_actions(), &setting.expert)?,
                };
                let h = setting.env.horizon();
                (
                    finite_horizon_return(&en.mdp, &table, 0, h)?,
                    behavior_distribution_exact(en, &table, setting.env.behavior_bins(), h)?,
                )
            }
            None => {
                let ep = config.eval.episodes;
                let (env, expert) = (&setting.test_env, &setting.expert);
                let ret = expected_return(env, expert, ep, env.horizon(), ReturnKind::Undiscounted, seeds.rng("expert_eval").gen())?;
                (ret.mean, behavior_distribution(env, expert, ep, seeds.rng("expert_distribution").gen())?)
            }
        };
        setting.expert_return = ret;
        setting.expert_distribution = dist;
        Ok(setting)
    }

    /// The enumeration, when exact evaluation is enabled.
    pub fn exact_enumeration(&self) -> Option<&Enumerated<E::State>> {
        self.enumerated.as_deref().filter(|_| self.config.eval.exact)
    }

    pub fn task_slots(&self) -> usize {
        self.config.pretrain.num_tasks
    }

    /// Stream family of grid seed `seed`.
    pub fn streams(&self, seed: u64) -> SeedStreams {
        SeedStreams::new(self.config.seed).child_indexed("grid", seed)
    }

    /// `n_max` training and the held-out demonstrations for `seed`.
    pub fn demos(&self, seed: u64, n_max: usize) -> Result<SeedDemos> {
        let fam = self.streams(seed);
        let slots = self.task_slots();
        Ok(SeedDemos {
            demos: sample_demos(&self.expert, n_max, 0, slots, fam.child("demos").root())?,
            heldout: sample_demos(&self.expert, self.config.eval.heldout_demos, 0, slots, fam.child("heldout").root())?,
        })
    }

    /// Exact demonstrators of the training tasks.
    pub fn training_experts(&self) -> Result<Vec<Expert<E>>> {
        let seeds = SeedStreams::new(self.config.seed);
        self.suite
            .train
            .iter()
            .enumerate()
            .map(|(k, task)| {
                let bound = self.env.with_task(task)?;
                match (&self.enumerated, self.config.expert.mode) {
                    (Some(en), ExpertMode::Exact) => exact_expert(&bound, en.clone(), k + 1, &self.config.expert),
                    _ => make_expert(&self.env, task, &self.config.expert, &seeds.child_indexed("train_expert", k as u64)),
                }
            })
            .collect()
    }

    /// Runs the pre-training stage of `kind` for grid seed `seed`.
    pub fn pretrain(&self, kind: PretrainKind, seed: u64) -> Result<BasisModel> {
        let fam = self.streams(seed);
        let cfg = &self.config;
        match kind {
            PretrainKind::Successor => Ok(run_pretraining(&self.env, &self.suite.train, &cfg.pretrain, &fam.child("pretrain"))?.model),
            PretrainKind::QOnly => Ok(pretrain_q_only(&self.env, &self.suite.train, &cfg.pretrain, &fam.child("pretrain_q"))?.model),
            PretrainKind::Demonstrations => pretrain_from_demos(
                cfg.pretrain.model_spec(&self.env),
                &self.training_experts()?,
                cfg.eval.pretraining_demos_per_task,
                &cfg.irl,
                &fam.child("pretrain_demos"),
            ),
        }
    }

    /// IRL settings of `variant`.
    pub fn irl_config(&self, variant: Variant) -> crate::irl::IrlConfig {
        match variant {
            Variant::NoSfDqn => q_only_irl_config(&self.config.irl),
            Variant::BasisUnfrozenPhi => crate::irl::IrlConfig {
                freeze_phi: false,
                ..self.config.irl.clone()
            },
            _ => self.config.irl.clone(),
        }
    }

    /// Infers a reward from the first `n` demonstrations and evaluates it.
    /// `init` is the pre-trained model of `variant` (ignored for
    /// `no_pretraining`).
    pub fn run_cell(&self, variant: Variant, init: Option<&BasisModel>, seed: u64, demos: &SeedDemos, n: usize) -> Result<CellOutcome> {
        let fam = self.streams(seed).child(variant.name());
        let cfg = self.irl_config(variant);
        let model = match (variant.pretraining(), init) {
            (None, _) => IrlModel::random(self.config.pretrain.model_spec(&self.env), cfg.freeze_phi, cfg.temperature, &mut fam.rng("init"))?,
            (Some(_), Some(b)) => IrlModel::init_from_checkpoint(b, cfg.freeze_phi, cfg.temperature)?,
            (Some(_), None) => {
                return Err(Error::validation(format!("variant {} needs a pre-trained model", variant.name())));
            }
        };
        if n > demos.demos.len() {
            return Err(Error::validation(format!("{n} demonstrations requested, {} drawn", demos.demos.len())));
        }
        let res = run_irl(model, &demos.demos.prefix(n).learner_view(), &cfg, &fam.child_indexed("irl", n as u64))?;
        let (ret, distribution) = self.evaluate(&res.model, fam.child_indexed("eval", n as u64).root())?;
        let reward_mse = match variant {
            Variant::NoSfDqn => None,
            _ => Some(reward_mse(&res.model, &demos.heldout)?),
        };
        Ok(CellOutcome {
            row: ReportRow {
                variant,
                env: self.env.kind(),
                n_demos: n,
                seed,
                value_difference: self.expert_return - ret,
                reward_mse,
                distribution,
            },
            model: res.model,
            gradient_steps: res.gradient_steps,
        })
    }

    /// Undiscounted return and behavior distribution of the policy extracted
    /// from `model`; exact when enumerated, otherwise Monte Carlo from `seed`.
    pub fn evaluate(&self, model: &IrlModel, seed: u64) -> Result<(f64, Vec<f64>)> {
        let policy = extract_policy(model, self.config.eval.policy_mode);
        let h = self.env.horizon();
        match self.exact_enumeration() {
            Some(en) => {
                let table = tabulate_policy(&self.test_env, en, self.task_slots(), policy)?;
                Ok((
                    exact_return(en, &table, 0, h)?,
                    behavior_distribution_exact(en, &table, self.env.behavior_bins(), h)?,
                ))
            }
            None => {
                let p = InputPolicy::new(&self.test_env, self.task_slots(), policy);
                let s = SeedStreams::new(seed);
                let ep = self.config.eval.episodes;
                let ret = expected_return(&self.test_env, &p, ep, h, ReturnKind::Undiscounted, s.rng("return").gen())?.mean;
                Ok((ret, behavior_distribution(&self.test_env, &p, ep, s.rng("distribution").gen())?))
            }
        }
    }

    /// Runs every (variant, demonstration count, seed) cell. Pre-training
    /// runs once per (kind, seed) and is shared by variants of that kind.
    pub fn run_grid(&self, variants: &[Variant], demo_counts: &[usize], seeds: &[u64]) -> Result<MetricsReport> {
        if variants.is_empty() || demo_counts.is_empty() || seeds.is_empty() {
            return Err(Error::validation("the grid needs variants, demonstration counts and seeds"));
        }
        if demo_counts.contains(&0) {
            return Err(Error::validation("demonstration counts must be >= 1"));
        }
        let start = Instant::now();
        let threads = self.config.eval.threads;
        let n_max = *demo_counts.iter().max().expect("non-empty");
        let demos = parallel_map(seeds, threads, |&s| self.demos(s, n_max))?;
        let mut kinds: Vec<PretrainKind> = variants.iter().filter_map(|v| v.pretraining()).collect();
        kinds.sort();
        kinds.dedup();
        let jobs: Vec<(PretrainKind, usize)> = kinds.iter().flat_map(|&k| (0..seeds.len()).map(move |i| (k, i))).collect();
        let models = parallel_map(&jobs, threads, |&(k, i)| {
            log::info!("pre-training {k:?} for seed {}", seeds[i]);
            self.pretrain(k, seeds[i])
        })?;
        let model_of = |k: PretrainKind, i: usize| {
            jobs.iter().position(|&j| j == (k, i)).map(|p| &models[p])
        };
        let mut cells = Vec::new();
        for &v in variants {
            for &n in demo_counts {
                for i in 0..seeds.len() {
                    cells.push((v, n, i));
                }
            }
        }
        let rows = parallel_map(&cells, threads, |&(v, n, i)| {
            let init = v.pretraining().and_then(|k| model_of(k, i));
            let out = self.run_cell(v, init, seeds[i], &demos[i], n)?;
            log::info!(
                "{} N={n} seed={}: value difference {:.4}",
                v.name(),
                seeds[i],
                out.row.value_difference
            );
            Ok(out.row)
        })?;
        Ok(MetricsReport::new(rows, Some(self.meta(start.elapsed().as_secs_f64()))))
    }

    pub fn meta(&self, runtime_seconds: f64) -> ReportMeta {
        ReportMeta {
            env: self.env.kind(),
            root_seed: self.config.seed,
            returns: "undiscounted".into(),
            horizon: self.env.horizon(),
            evaluation: if self.exact_enumeration().is_some() { "exact" } else { "monte_carlo" }.into(),
            episodes: self.config.eval.episodes,
            expert_return: self.expert_return,
            expert_distribution: self.expert_distribution.clone(),
            runtime_seconds,
        }
    }
}

/// Prepares the setting and runs the grid of `config.eval` over
/// `config.irl.demo_counts`.
pub fn run_experiment_grid<E>(env: E, config: &RunConfig) -> Result<MetricsReport>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let setting = Setting::prepare(env, config)?;
    setting.run_grid(&config.eval.variants, &config.irl.demo_counts, &config.eval.seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{FruitGrid, FruitGridConfig};
    use crate::expert::ExpertConfig;
    use crate::irl::IrlConfig;
    use crate::mdp::{Environment, PolicyTable};
    use crate::pretrain::PretrainConfig;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn small_grid() -> FruitGridConfig {
        FruitGridConfig {
            grid_size: 3,
            colors: 2,
            fruits_per_color: 1,
            horizon: 10,
            respawn: true,
        }
    }

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env.fruitgrid = small_grid();
        cfg.pretrain = PretrainConfig {
            num_tasks: 2,
            d: 4,
            total_iterations: 20,
            psi_hidden: vec![],
            task_crossed: true,
            exploration_temperature: 0.2,
            ..PretrainConfig::default()
        };
        cfg.irl = IrlConfig {
            min_gradient_steps: 20,
            epochs: 2,
            temperature: 0.2,
            ..IrlConfig::default()
        };
        cfg.expert = ExpertConfig {
            temperature: 0.2,
            ..ExpertConfig::default()
        };
        cfg.eval.heldout_demos = 5;
        cfg.eval.pretraining_demos_per_task = 5;
        cfg
    }

    fn setting() -> &'static Setting<FruitGrid> {
        static S: OnceLock<Setting<FruitGrid>> = OnceLock::new();
        S.get_or_init(|| Setting::prepare(FruitGrid::unrewarded(small_grid()).unwrap(), &small_config()).unwrap())
    }

    fn uniform(input: &[f64]) -> Result<Vec<f64>> {
        let _ = input;
        Ok(vec![0.25; 4])
    }

    #[test]
    fn reward_mse_hand_computation() {
        let s = setting();
        let sampled = sample_demos(&s.expert, 6, 0, 2, 3).unwrap();
        let rewards: Vec<Vec<f64>> = sampled
            .trajectories()
            .iter()
            .map(|t| (0..t.len()).map(|i| if i == 0 { 0.8 } else { 0.0 }).collect())
            .collect();
        assert!(sampled.trajectories().iter().all(|t| t.len() == 10));
        let demos = DemoSet::new(sampled.trajectories().to_vec(), sampled.meta().clone(), Some(rewards)).unwrap();
        let zero = IrlModel::random(s.config.pretrain.model_spec(&s.env), true, 0.2, &mut rng::stream(0, 0)).unwrap();
        assert!(zero.w_e().iter().all(|&w| w == 0.0));
        assert!((reward_mse(&zero, &demos).unwrap() - 0.064).abs() < 1e-12);
        assert!(reward_mse(&zero, &demos.learner_view()).is_err());
    }

    #[test]
    fn exact_predictions_give_zero_mse() {
        let s = setting();
        let mut m = IrlModel::random(s.config.pretrain.model_spec(&s.env), true, 0.2, &mut rng::stream(1, 0)).unwrap();
        m.model.set_preference(0, &[0.3, -0.2, 0.5, 0.1]).unwrap();
        let sampled = sample_demos(&s.expert, 3, 0, 2, 4).unwrap();
        let rewards: Vec<Vec<f64>> = sampled
            .trajectories()
            .iter()
            .map(|t| t.steps.iter().map(|st| m.predict_reward(&st.obs.to_dense(), st.action).unwrap()).collect())
            .collect();
        let demos = DemoSet::new(sampled.trajectories().to_vec(), sampled.meta().clone(), Some(rewards)).unwrap();
        assert_eq!(reward_mse(&m, &demos).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn reward_mse_ignores_demo_order(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let s = setting();
            let mut m = IrlModel::random(s.config.pretrain.model_spec(&s.env), true, 0.2, &mut rng::stream(2, 0)).unwrap();
            m.model.set_preference(0, &[1.0, -0.5, 0.25, 2.0]).unwrap();
            let demos = sample_demos(&s.expert, 8, 0, 2, 5).unwrap();
            let rewards = demos.sealed_rewards().unwrap().to_vec();
            let mut order: Vec<usize> = (0..demos.len()).collect();
            order.shuffle(&mut rng::stream(seed, 0));
            let permuted = DemoSet::new(
                order.iter().map(|&i| demos.trajectories()[i].clone()).collect(),
                demos.meta().clone(),
                Some(order.iter().map(|&i| rewards[i].clone()).collect()),
            ).unwrap();
            let a = reward_mse(&m, &demos).unwrap();
            let b = reward_mse(&m, &permuted).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn expert_against_itself_is_zero_within_noise() {
        let s = setting();
        let vd = value_difference_estimate(&s.test_env, &s.expert, &s.expert, 400, 11).unwrap();
        assert!(vd.value.abs() <= 3.0 * vd.std_err, "{vd:?}");
        assert!((vd.expert_return - s.expert_return).abs() < 0.2 * s.expert_return.abs().max(1.0));
    }

    #[test]
    fn uniform_policy_value_difference_matches_tabular_evaluation() {
        let s = setting();
        let en = s.enumerated.as_deref().unwrap();
        let na = s.env.num_actions();
        let table = PolicyTable::from_fn(en.states.len(), na, |_| vec![1.0 / na as f64; na]).unwrap();
        let oracle = s.expert_return - finite_horizon_return(&en.mdp, &table, 0, s.env.horizon()).unwrap();
        let p = InputPolicy::new(&s.test_env, 2, uniform);
        let vd = value_difference_estimate(&s.test_env, &p, &s.expert, 2000, 12).unwrap();
        assert!((vd.value - oracle).abs() <= 3.0 * vd.std_err, "{vd:?} vs {oracle}");
        assert_eq!(tabulate_policy(&s.test_env, en, 2, uniform).unwrap(), table);
    }

    #[test]
    fn behavior_distributions_agree_and_are_symmetric_for_uniform_play() {
        let s = setting();
        let en = s.enumerated.as_deref().unwrap();
        let table = tabulate_policy(&s.test_env, en, 2, uniform).unwrap();
        let exact = behavior_distribution_exact(en, &table, 2, s.env.horizon()).unwrap();
        let p = InputPolicy::new(&s.test_env, 2, uniform);
        let mc = behavior_distribution(&s.test_env, &p, 3000, 13).unwrap();
        for (e, m) in exact.iter().zip(&mc) {
            assert!((e - 0.5).abs() < 1e-9, "{exact:?}");
            assert!((e - m).abs() < 0.03, "{exact:?} {mc:?}");
        }
        assert!((mc.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let exp = &s.expert_distribution;
        assert!((exp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(exp[0] > exp[1], "{exp:?}");
    }

    #[test]
    fn empty_event_mass_reports_uniform() {
        assert_eq!(normalize_counts(vec![0.0; 4]), vec![0.25; 4]);
        assert_eq!(normalize_counts(vec![1.0, 3.0]), vec![0.25, 0.75]);
    }

    fn row(variant: Variant, n: usize, seed: u64, vd: f64, mse: Option<f64>) -> ReportRow {
        ReportRow {
            variant,
            env: EnvKind::FruitGrid,
            n_demos: n,
            seed,
            value_difference: vd,
            reward_mse: mse,
            distribution: vec![0.7, 0.2, 0.1],
        }
    }

    #[test]
    fn report_csv_round_trip_and_summary() {
        let rows = vec![
            row(Variant::NoSfDqn, 10, 0, 2.0, None),
            row(Variant::Basis, 10, 1, 1.5, Some(0.25)),
            row(Variant::Basis, 10, 0, 0.5, Some(0.125)),
            row(Variant::Basis, 100, 0, 0.1, Some(0.0625)),
            row(Variant::NoSfDqn, 10, 1, 4.0, None),
        ];
        let report = MetricsReport::new(rows, None);
        assert_eq!(report.rows[0].seed, 0);
        assert_eq!(report.rows[0].variant, Variant::Basis);
        let text = report.to_csv_string().unwrap();
        assert!(text.starts_with("variant,env,N_demos,seed,value_difference,reward_mse,dist_0,dist_1,dist_2\n"));
        assert!(text.contains("no_sf_dqn,fruitgrid,10,1,4,NA,0.7,0.2,0.1"));
        assert_eq!(MetricsReport::from_csv_str(&text).unwrap(), report);
        let summary = report.summary();
        assert_eq!(summary.len(), 3);
        let b = report.cell(Variant::Basis, 10).unwrap();
        assert_eq!(b.value_difference_mean, 1.0);
        assert!((b.value_difference_std - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(b.reward_mse_mean, Some(0.1875));
        let q = report.cell(Variant::NoSfDqn, 10).unwrap();
        assert_eq!(q.reward_mse_mean, None);
        assert_eq!(q.value_difference_median, 3.0);
        assert!(report.summary_csv_string().unwrap().lines().count() == 4);
    }

    #[test]
    fn malformed_reports_are_rejected() {
        assert!(MetricsReport::from_csv_str("a,b\n1,2\n").is_err());
        let bad = "variant,env,N_demos,seed,value_difference,reward_mse,dist_0\nbasis,fruitgrid,ten,0,1,NA,1\n";
        assert!(MetricsReport::from_csv_str(bad).is_err());
        let bad = "variant,env,N_demos,seed,value_difference,reward_mse,dist_0\nmystery,fruitgrid,10,0,1,NA,1\n";
        assert!(MetricsReport::from_csv_str(bad).is_err());
    }

    #[test]
    fn parallel_map_keeps_order_and_reports_errors() {
        let items: Vec<u32> = (0..37).collect();
        for threads in [0, 1, 3, 64] {
            let out = parallel_map(&items, threads, |&i| Ok(i * 2)).unwrap();
            assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
        }
        let err = parallel_map(&items, 2, |&i| if i == 5 { Err(Error::validation("five")) } else { Ok(i) });
        assert!(err.is_err());
    }

    #[test]
    fn grid_has_one_row_per_cell_and_is_deterministic() {
        let s = setting();
        let variants = Variant::ALL;
        let run = || s.run_grid(&variants, &[2, 4], &[0, 1]).unwrap();
        let a = run();
        assert_eq!(a.rows.len(), variants.len() * 2 * 2);
        assert_eq!(a.summary().len(), variants.len() * 2);
        for r in &a.rows {
            assert_eq!(r.reward_mse.is_none(), r.variant == Variant::NoSfDqn);
            assert!((r.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.value_difference.is_finite());
        }
        let meta = a.meta.as_ref().unwrap();
        assert_eq!(meta.returns, "undiscounted");
        assert_eq!(meta.evaluation, "exact");
        assert_eq!(a.to_csv_string().unwrap(), run().to_csv_string().unwrap());
        let dir = tempfile::tempdir().unwrap();
        a.write_dir(dir.path()).unwrap();
        let back = MetricsReport::read_dir(dir.path()).unwrap();
        assert_eq!(back.to_csv_string().unwrap(), a.to_csv_string().unwrap());
        assert_eq!(back.meta.unwrap().expert_distribution, meta.expert_distribution);
    }

    #[test]
    fn monte_carlo_fallback_is_used_without_exact_evaluation() {
        let mut cfg = small_config();
        cfg.eval.exact = false;
        cfg.eval.episodes = 50;
        let s = Setting::prepare(FruitGrid::unrewarded(small_grid()).unwrap(), &cfg).unwrap();
        assert!(s.exact_enumeration().is_none());
        let report = s.run_grid(&[Variant::NoPretraining], &[3], &[0]).unwrap();
        assert_eq!(report.meta.unwrap().evaluation, "monte_carlo");
        assert_eq!(report.rows.len(), 1);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
        }
        assert_eq!(Variant::from_name("dqn"), None);
    }
}
