//! Command-line front end: pre-training, demonstrations, reward inference,
//! evaluation grids, figures and the oracle checks.

use std::fs;
use std::hash::Hash;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use basis::checkpoint::{self, CheckpointMeta, ModelKind};
use basis::config::{EnvVisitor, RunConfig};
use basis::envs::{make_task_suite, TaskEnvironment};
use basis::eval::{self, MetricsReport, ReportRow, Setting, Variant};
use basis::expert::{read_demos, sample_demos, write_demos};
use basis::irl::{run_irl, DemoSet, IrlModel, IrlResult};
use basis::oracle::run_oracle_suite;
use basis::plot::render_report;
use basis::pretrain::{run_pretraining, write_log};
use basis::rng::SeedStreams;
use basis::{Error, Result};

const ORACLE_FAILED: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "basis", version, about = "Successor-feature reward inference")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only warnings and errors on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multi-task pre-training; writes basis.ckpt and pretrain_log.csv.
    Pretrain,
    /// Builds the demonstrator of the test task; writes expert.toml.
    Expert,
    /// Samples expert demonstrations; writes demos.txt and heldout.txt.
    GenDemos {
        /// Number of trajectories (default: the largest irl.demo_counts).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Infers a reward from demonstrations; writes irl.ckpt and irl_log.csv.
    Irl {
        /// Demonstration file.
        #[arg(long)]
        demos: PathBuf,
        /// Pre-trained checkpoint to start from.
        #[arg(long, required_unless_present = "no_pretraining")]
        checkpoint: Option<PathBuf>,
        /// Start from a random model instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        no_pretraining: bool,
        /// Use only the first N trajectories.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluates an inferred reward, or runs the whole grid of the config
    /// when no checkpoint is given. Writes report.csv and summary.csv.
    Eval {
        /// Inferred-reward checkpoint from `irl`.
        #[arg(long)]
        irl: Option<PathBuf>,
        /// Demonstrations with rewards for the reward MSE (default: freshly
        /// sampled held-out demonstrations).
        #[arg(long, requires = "irl")]
        heldout: Option<PathBuf>,
    },
    /// Renders the figures of a report directory.
    Report {
        /// Directory holding report.csv (default: --out).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Runs the numerical self-checks; exits 5 if any fails.
    OracleCheck,
}

/// What `irl` records next to its checkpoint for `eval`.
#[derive(Debug, Serialize, Deserialize)]
struct IrlRunInfo {
    variant: String,
    n_demos: usize,
    gradient_steps: usize,
}

const IRL_INFO: &str = "irl.toml";

#[derive(Debug, Serialize)]
struct ExpertInfo {
    env: String,
    mode: String,
    temperature: f64,
    task: Vec<f64>,
    reference_return: f64,
    distribution: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.display().to_string(),
        source: e,
    })?;
    config.write_resolved(&cli.out)?;
    match &cli.command {
        Command::Report { input } => report(input.as_deref().unwrap_or(&cli.out), &cli.out).map(|_| 0),
        Command::OracleCheck => oracle_check(&config, &cli.out),
        _ => config.env.visit(Stage { cli, config: &config }).map(|_| 0),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn report(input: &Path, out: &Path) -> Result<()> {
    let report = MetricsReport::read_dir(input)?;
    println!("{}", report.summary_table());
    for p in render_report(&report, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn oracle_check(config: &RunConfig, out: &Path) -> Result<u8> {
    let report = run_oracle_suite(config)?;
    let lines: Vec<String> = report.checks.iter().map(|c| c.line()).collect();
    for l in &lines {
        println!("{l}");
    }
    write_file(&out.join("oracle.txt"), &(lines.join("\n") + "\n"))?;
    Ok(if report.passed() { 0 } else { ORACLE_FAILED })
}

/// The stages that need the configured environment.
struct Stage<'a> {
    cli: &'a Cli,
    config: &'a RunConfig,
}

impl EnvVisitor for Stage<'_> {
    type Output = ();

    fn visit<E>(self, env: E) -> Result<()>
    where
        E: TaskEnvironment + 'static,
        E::State: Eq + Hash + Send + Sync,
    {
        let (cfg, out) = (self.config, self.cli.out.as_path());
        match &self.cli.command {
            Command::Pretrain => pretrain(&env, cfg, out),
            Command::Expert => expert(env, cfg, out),
            Command::GenDemos { n } => gen_demos(env, cfg, out, *n),
            Command::Irl {
                demos,
                checkpoint,
                n,
                ..
            } => irl(&env, cfg, out, demos, checkpoint.as_deref(), *n),
            Command::Eval { irl, heldout } => match irl {
                Some(ckpt) => eval_single(env, cfg, out, ckpt, heldout.as_deref()),
                None => eval_grid(env, cfg, out),
            },
            Command::Report { .. } | Command::OracleCheck => unreachable!("handled without an environment"),
        }
    }
}

fn pretrain<E>(env: &E, cfg: &RunConfig, out: &Path) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let suite = make_task_suite(env, cfg.pretrain.num_tasks, cfg.env.task_seed)?;
    let start = Instant::now();
    let res = run_pretraining(env, &suite.train, &cfg.pretrain, &SeedStreams::new(cfg.seed).child("pretrain"))?;
    let meta = CheckpointMeta {
        kind: ModelKind::Basis,
        freeze_phi: true,
        temperature: cfg.pretrain.exploration_temperature,
    };
    checkpoint::save(&out.join("basis.ckpt"), &res.model, &meta)?;
    let log_path = out.join("pretrain_log.csv");
    let file = fs::File::create(&log_path).map_err(|e| Error::Io {
        path: log_path.display().to_string(),
        source: e,
    })?;
    write_log(file, &res.log)?;
    println!(
        "pre-training: {} environment steps, {} gradient steps, held-out reward loss {:.3e}, {:.1}s",
        res.env_steps,
        res.gradient_steps,
        res.heldout_reward_loss,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn expert<E>(env: E, cfg: &RunConfig, out: &Path) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let setting = Setting::prepare(env, cfg)?;
    let info = ExpertInfo {
        env: setting.env.kind().name().into(),
        mode: format!("{:?}", cfg.expert.mode).to_lowercase(),
        temperature: cfg.expert.temperature,
        task: setting.suite.test.reward_weights.clone(),
        reference_return: setting.expert_return,
        distribution: setting.expert_distribution.clone(),
    };
    let text = toml::to_string(&info).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("expert.toml"), &text)?;
    println!(
        "expert return {:.4}, behavior distribution {:?}",
        info.reference_return, info.distribution
    );
    Ok(())
}

fn gen_demos<E>(env: E, cfg: &RunConfig, out: &Path, n: Option<usize>) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let n = n.unwrap_or_else(|| cfg.irl.demo_counts.iter().copied().max().unwrap_or(1));
    let setting = Setting::prepare(env, cfg)?;
    let seeds = SeedStreams::new(cfg.seed);
    let slots = setting.task_slots();
    let demos = sample_demos(&setting.expert, n, 0, slots, seeds.child("demos").root())?;
    let heldout = sample_demos(&setting.expert, cfg.eval.heldout_demos, 0, slots, seeds.child("heldout").root())?;
    write_demos(&out.join("demos.txt"), &demos)?;
    write_demos(&out.join("heldout.txt"), &heldout)?;
    println!("{} demonstrations ({} steps), {} held out", demos.len(), demos.total_steps(), heldout.len());
    Ok(())
}

/// Demonstrations must come from the configured environment and match the
/// model's input layout.
fn check_demos<E>(env: &E, demos: &DemoSet, model: &IrlModel, path: &Path) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let m = demos.meta();
    let spec = model.model.spec();
    let problem = if m.env != env.kind() {
        Some(format!("recorded in {}, configured {}", m.env.name(), env.kind().name()))
    } else if m.env_fingerprint != env.fingerprint() {
        Some("environment settings differ from the configuration".to_string())
    } else if m.obs_dim != spec.input_dim() || m.task_slots != spec.task_slots {
        Some(format!(
            "observation layout {}+{} does not match the model's {}+{}",
            m.obs_dim - m.task_slots,
            m.task_slots,
            spec.feature_dim,
            spec.task_slots
        ))
    } else {
        None
    };
    match problem {
        Some(p) => Err(Error::DemoFormat(format!("{}: {p}", path.display()))),
        None => Ok(()),
    }
}

fn irl<E>(env: &E, cfg: &RunConfig, out: &Path, demos_path: &Path, ckpt: Option<&Path>, n: Option<usize>) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let demos = read_demos(demos_path)?;
    let n = n.unwrap_or(demos.len());
    if n == 0 || n > demos.len() {
        return Err(Error::DemoFormat(format!(
            "{}: {n} trajectories requested, file has {}",
            demos_path.display(),
            demos.len()
        )));
    }
    let seeds = SeedStreams::new(cfg.seed);
    let irl_cfg = &cfg.irl;
    let (init, variant) = match ckpt {
        Some(p) => {
            let (model, meta) = checkpoint::load(p)?;
            if meta.kind != ModelKind::Basis {
                return Err(Error::Checkpoint(format!("{}: not a pre-trained checkpoint", p.display())));
            }
            let v = if irl_cfg.freeze_phi { Variant::Basis } else { Variant::BasisUnfrozenPhi };
            (IrlModel::init_from_checkpoint(&model, irl_cfg.freeze_phi, irl_cfg.temperature)?, v)
        }
        None => {
            let spec = cfg.pretrain.model_spec(env);
            let init = IrlModel::random(spec, irl_cfg.freeze_phi, irl_cfg.temperature, &mut seeds.rng("irl_init"))?;
            (init, Variant::NoPretraining)
        }
    };
    check_demos(env, &demos, &init, demos_path)?;
    let start = Instant::now();
    let IrlResult { model, log, gradient_steps } =
        run_irl(init, &demos.prefix(n).learner_view(), irl_cfg, &seeds.child("irl"))?;
    checkpoint::save_irl(&out.join("irl.ckpt"), &model)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("writing IRL log: {e}"));
    w.write_record(["epoch", "bc_loss", "itd_loss"]).map_err(csv_err)?;
    for r in &log {
        w.write_record([r.epoch.to_string(), format!("{:.9}", r.bc_loss), format!("{:.9}", r.itd_loss)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    write_file(&out.join("irl_log.csv"), &String::from_utf8_lossy(&bytes))?;
    let info = IrlRunInfo {
        variant: variant.name().into(),
        n_demos: n,
        gradient_steps,
    };
    write_file(&out.join(IRL_INFO), &toml::to_string(&info).map_err(|e| Error::Config(e.to_string()))?)?;
    println!(
        "inferred w_e {:?} from {n} demonstrations, {gradient_steps} gradient steps, {:.1}s",
        model.w_e(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn eval_single<E>(env: E, cfg: &RunConfig, out: &Path, ckpt: &Path, heldout: Option<&Path>) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let start = Instant::now();
    let model = checkpoint::load_irl(ckpt)?;
    let info_path = ckpt.with_file_name(IRL_INFO);
    let info: Option<IrlRunInfo> = match fs::read_to_string(&info_path) {
        Ok(text) => Some(toml::from_str(&text).map_err(|e| Error::DemoFormat(format!("{}: {e}", info_path.display())))?),
        Err(_) => None,
    };
    let variant = info
        .as_ref()
        .and_then(|i| Variant::from_name(&i.variant))
        .unwrap_or(Variant::Basis);
    let setting = Setting::prepare(env, cfg)?;
    let heldout = match heldout {
        Some(p) => {
            let d = read_demos(p)?;
            if !d.has_rewards() {
                return Err(Error::DemoFormat(format!("{}: no reward file next to it", p.display())));
            }
            check_demos(&setting.env, &d, &model, p)?;
            d
        }
        None => sample_demos(
            &setting.expert,
            cfg.eval.heldout_demos,
            0,
            setting.task_slots(),
            SeedStreams::new(cfg.seed).child("heldout").root(),
        )?,
    };
    let (ret, distribution) = setting.evaluate(&model, SeedStreams::new(cfg.seed).child("eval").root())?;
    let row = ReportRow {
        variant,
        env: setting.env.kind(),
        n_demos: info.map_or(0, |i| i.n_demos),
        seed: cfg.seed,
        value_difference: setting.expert_return - ret,
        reward_mse: Some(eval::reward_mse(&model, &heldout)?),
        distribution,
    };
    let report = MetricsReport::new(vec![row], Some(setting.meta(start.elapsed().as_secs_f64())));
    report.write_dir(out)?;
    println!("{}", report.summary_table());
    Ok(())
}

fn eval_grid<E>(env: E, cfg: &RunConfig, out: &Path) -> Result<()>
where
    E: TaskEnvironment,
    E::State: Eq + Hash + Send + Sync,
{
    let report = eval::run_experiment_grid(env, cfg)?;
    report.write_dir(out)?;
    println!("{}", report.summary_table());
    for p in render_report(&report, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
