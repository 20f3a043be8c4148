use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dispatch_core::assignment::{action_space_lower_bound, count_action_space, NoiseSpec};
use dispatch_core::harness::{
    evaluate, match_bench, mean_reward, write_metrics_csv, EpisodeRecord, GreedyNearest, Policy, RandomPolicy, ScenarioSpec,
    Stage1Policy, Stage2Policy,
};
use dispatch_core::nn::{primitive_checks, ParamStore};
use dispatch_core::policy::{load_policy, save_policy, PolicyConfig, PolicyNet};
use dispatch_core::train::{
    composed_loss_checks, stage1_train, stage2_train, write_train_log_csv, Stage1Config, Stage2Config, TrainLog,
};
use dispatch_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Ride-pooling dispatch: simulate, train and benchmark assignment policies.
#[derive(Parser)]
#[command(name = "dispatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Random,
    Greedy,
    Stage1,
    Stage2,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    None,
    Gaussian,
    Uniform,
    Bsc,
}

impl NoiseKind {
    fn spec(self, magnitude: f64) -> NoiseSpec {
        match self {
            NoiseKind::None => NoiseSpec::None,
            NoiseKind::Gaussian => NoiseSpec::Gaussian { sigma: magnitude },
            NoiseKind::Uniform => NoiseSpec::Uniform { a: magnitude },
            NoiseKind::Bsc => NoiseSpec::Bsc { epsilon: magnitude },
        }
    }
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario TOML; the bundled desk scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioSpec> {
        Ok(match &self.scenario {
            Some(p) => ScenarioSpec::load(p)?,
            None => ScenarioSpec::desk(),
        })
    }
}

#[derive(clap::Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "greedy")]
    policy: PolicyKind,
    /// Checkpoint for the stage1/stage2 policies.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Seed of the random policy.
    #[arg(long, default_value_t = 0)]
    policy_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and write the metrics CSV (stdout when --out is omitted).
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Episode seeds; defaults to the scenario's seed list.
        #[arg(long = "seed", num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy on the scenario's evaluation seeds and print the mean reward.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train encoders and scoring head with independent double Q-learning.
    TrainStage1 {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Stage1Config TOML; desk settings when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// PolicyConfig TOML; desk architecture when omitted.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a checkpoint every K episodes as well as at the end.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long, default_value = "runs/stage1")]
        out_dir: PathBuf,
    },
    /// Fine-tune with twin critics, from a stage-1 checkpoint or from scratch.
    TrainStage2 {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Stage2Config TOML; desk settings when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stage-1 checkpoint to start from; a fresh network otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        /// PolicyConfig TOML for a fresh network.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long, default_value = "runs/stage2")]
        out_dir: PathBuf,
    },
    /// Size of the joint action space for n workers and m orders.
    CountActions {
        #[arg(long)]
        workers: u64,
        #[arg(long)]
        orders: u64,
    },
    /// Finite-difference check of every graph primitive and the composed
    /// actor, critic and double-Q losses.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Time perturbation plus stage-2 matching on a random probability matrix.
    MatchBench {
        #[arg(long, default_value_t = 2000)]
        workers: usize,
        #[arg(long, default_value_t = 500)]
        orders: usize,
        #[arg(long, value_enum, default_value = "bsc")]
        noise: NoiseKind,
        #[arg(long, default_value_t = 0.1)]
        magnitude: f64,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Exit with the numeric-failure code when the worst trial exceeds this many seconds.
        #[arg(long)]
        limit: Option<f64>,
    },
}

/// Wrapper so one `evaluate` call covers every policy kind.
#[derive(Clone)]
enum AnyPolicy {
    Random(RandomPolicy),
    Greedy(GreedyNearest),
    Stage1(Stage1Policy),
    Stage2(Stage2Policy),
}

impl Policy for AnyPolicy {
    fn name(&self) -> &str {
        match self {
            AnyPolicy::Random(p) => p.name(),
            AnyPolicy::Greedy(p) => p.name(),
            AnyPolicy::Stage1(p) => p.name(),
            AnyPolicy::Stage2(p) => p.name(),
        }
    }

    fn act(&mut self, obs: &dispatch_core::sim::Observation) -> dispatch_core::Result<dispatch_core::assignment::AssignmentAction> {
        match self {
            AnyPolicy::Random(p) => p.act(obs),
            AnyPolicy::Greedy(p) => p.act(obs),
            AnyPolicy::Stage1(p) => p.act(obs),
            AnyPolicy::Stage2(p) => p.act(obs),
        }
    }

    fn reset(&mut self, seed: u64) {
        match self {
            AnyPolicy::Random(p) => p.reset(seed),
            AnyPolicy::Greedy(p) => p.reset(seed),
            AnyPolicy::Stage1(p) => p.reset(seed),
            AnyPolicy::Stage2(p) => p.reset(seed),
        }
    }
}

fn build_policy(args: &PolicyArgs) -> Result<AnyPolicy> {
    let model = || -> Result<(Arc<PolicyNet>, Arc<ParamStore>)> {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("model policies need --checkpoint".into()))?;
        let (net, store, _) = load_policy(path).with_context(|| format!("loading {}", path.display()))?;
        Ok((Arc::new(net), Arc::new(store)))
    };
    Ok(match args.policy {
        PolicyKind::Random => AnyPolicy::Random(RandomPolicy::new(args.policy_seed)),
        PolicyKind::Greedy => AnyPolicy::Greedy(GreedyNearest),
        PolicyKind::Stage1 => {
            let (net, store) = model()?;
            AnyPolicy::Stage1(Stage1Policy::new(net, store))
        }
        PolicyKind::Stage2 => {
            let (net, store) = model()?;
            AnyPolicy::Stage2(Stage2Policy::new(net, store))
        }
    })
}

fn write_metrics(records: &[EpisodeRecord], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut buf = Vec::new();
            write_metrics_csv(records, &mut buf)?;
            fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_metrics_csv(records, io::stdout().lock())?,
    }
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
}

fn arch(path: Option<&PathBuf>) -> Result<PolicyConfig> {
    Ok(match path {
        Some(p) => read_toml(p)?,
        None => PolicyConfig::desk(),
    })
}

struct RunFiles {
    dir: PathBuf,
    every: Option<usize>,
    config: PolicyConfig,
    stage: u8,
}

impl RunFiles {
    fn checkpoint(&self, row: &TrainLog, store: &ParamStore) -> dispatch_core::Result<()> {
        if let Some(k) = self.every.filter(|&k| k > 0) {
            if (row.episode + 1) % k == 0 {
                let path = self.dir.join(format!("stage{}_ep{:05}.ckpt", self.stage, row.episode + 1));
                save_policy(path, &self.config, store, json!({ "stage": self.stage, "episode": row.episode + 1 }))?;
            }
        }
        eprintln!(
            "episode {:>4}  reward {:>9.2}  served {:>4}/{:<4}  loss {}",
            row.episode,
            row.reward,
            row.served,
            row.requested,
            row.loss.map_or("-".into(), |l| format!("{l:.5}"))
        );
        Ok(())
    }

    fn finish(&self, logs: &[TrainLog], store: &ParamStore, spec: &ScenarioSpec, policy: AnyPolicy) -> Result<()> {
        let mut buf = Vec::new();
        write_train_log_csv(logs, &mut buf)?;
        fs::write(self.dir.join("train_log.csv"), buf)?;
        let path = self.dir.join(format!("stage{}.ckpt", self.stage));
        save_policy(&path, &self.config, store, json!({ "stage": self.stage, "episodes": logs.len() }))?;
        let records = evaluate(spec, &policy, &spec.seeds)?;
        write_metrics(&records, Some(&self.dir.join("eval_metrics.csv")))?;
        println!("checkpoint {}", path.display());
        println!("eval mean reward {:.4} over seeds {:?}", mean_reward(&records), spec.seeds);
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, policy, seeds, out } => {
            let spec = scenario.load()?;
            let seeds = if seeds.is_empty() { spec.seeds.clone() } else { seeds };
            let records = evaluate(&spec, &build_policy(&policy)?, &seeds)?;
            write_metrics(&records, out.as_deref())?;
        }
        Command::Evaluate { scenario, policy, out } => {
            let spec = scenario.load()?;
            let p = build_policy(&policy)?;
            let records = evaluate(&spec, &p, &spec.seeds)?;
            if out.is_some() {
                write_metrics(&records, out.as_deref())?;
            }
            for r in &records {
                println!("seed {:>6}  reward {:>10.4}  served {:>4}/{:<4}", r.seed, r.metrics.total_reward, r.metrics.served, r.metrics.requested);
            }
            println!("{} mean reward {:.4}", p.name(), mean_reward(&records));
        }
        Command::TrainStage1 { scenario, config, arch: arch_path, episodes, seed, checkpoint_every, out_dir } => {
            let spec = scenario.load()?;
            let mut cfg: Stage1Config = match &config {
                Some(p) => read_toml(p)?,
                None => Stage1Config::desk(),
            };
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let pc = arch(arch_path.as_ref())?;
            let (net, mut store) = PolicyNet::new(pc, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            fs::create_dir_all(&out_dir)?;
            let files = RunFiles { dir: out_dir, every: checkpoint_every, config: pc, stage: 1 };
            let report = stage1_train(&net, &mut store, &cfg, &spec, |row, s| files.checkpoint(row, s))?;
            let policy = AnyPolicy::Stage1(Stage1Policy::new(Arc::new(net), Arc::new(store.clone())));
            files.finish(&report.logs, &store, &spec, policy)?;
        }
        Command::TrainStage2 { scenario, config, init, arch: arch_path, episodes, seed, checkpoint_every, out_dir } => {
            let spec = scenario.load()?;
            let mut cfg: Stage2Config = match &config {
                Some(p) => read_toml(p)?,
                None => Stage2Config::desk(),
            };
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (net, mut store) = match &init {
                Some(p) => {
                    let (net, store, _) = load_policy(p).with_context(|| format!("loading {}", p.display()))?;
                    (net, store)
                }
                None => PolicyNet::new(arch(arch_path.as_ref())?, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
            };
            fs::create_dir_all(&out_dir)?;
            let files = RunFiles { dir: out_dir, every: checkpoint_every, config: net.config, stage: 2 };
            let report = stage2_train(&net, &mut store, &cfg, &spec, |row, s| files.checkpoint(row, s))?;
            eprintln!("critic updates {}, actor updates {}", report.critic_updates, report.actor_updates);
            let policy = AnyPolicy::Stage2(Stage2Policy::new(Arc::new(net), Arc::new(store.clone())));
            files.finish(&report.logs, &store, &spec, policy)?;
        }
        Command::CountActions { workers, orders } => {
            let count = count_action_space(workers, orders)?;
            let bound = action_space_lower_bound(workers, orders)?;
            let digits = count.to_string();
            let approx: f64 = digits.parse().unwrap_or(f64::INFINITY);
            let mut out = io::stdout().lock();
            writeln!(out, "workers {workers}, orders {orders}")?;
            writeln!(out, "actions {digits}")?;
            writeln!(out, "approx {approx:.6e}")?;
            writeln!(out, "lower bound (n-m+2)^m {bound}")?;
        }
        Command::GradCheck { seed, tolerance } => {
            let mut worst: f64 = 0.0;
            for (name, report) in primitive_checks(seed)? {
                println!("{name:<42} max rel error {:.3e} over {} coordinates", report.max_rel_error, report.checked);
                worst = worst.max(report.max_rel_error);
            }
            for (name, report) in composed_loss_checks(seed)? {
                println!("{name:<42} max rel error {:.3e} over {} coordinates", report.max_rel_error, report.checked);
                worst = worst.max(report.max_rel_error);
            }
            if !(worst < tolerance) {
                return Err(Error::Numeric(format!("gradient check error {worst:.3e} exceeds {tolerance:e}")).into());
            }
        }
        Command::MatchBench { workers, orders, noise, magnitude, trials, seed, limit } => {
            let b = match_bench(workers, orders, noise.spec(magnitude), trials, seed)?;
            println!(
                "{}x{} matrix: mean {:.4} s, worst {:.4} s over {} trials ({} pairs matched)",
                workers,
                orders + 1,
                b.mean().as_secs_f64(),
                b.worst().as_secs_f64(),
                b.times.len(),
                b.assigned
            );
            if let Some(limit) = limit {
                if b.worst().as_secs_f64() > limit {
                    return Err(Error::Numeric(format!("worst trial {:.4} s exceeds {limit} s", b.worst().as_secs_f64())).into());
                }
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) | Some(Error::Checkpoint(_)) => 2,
        Some(Error::Data(_)) | Some(Error::Csv(_)) | Some(Error::Io(_)) => 3,
        Some(Error::Numeric(_)) => 4,
        Some(Error::Constraint(_)) | Some(Error::Shape { .. }) => 4,
        None if err.chain().any(|e| e.downcast_ref::<io::Error>().is_some()) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
