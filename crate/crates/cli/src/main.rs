//! `sspr`: validate, build, grade, and play bug-injection episodes.
//!
//! Exit codes: 0 success or valid, 1 semantic failure, 2 invalid artifact or
//! configuration, 3 system error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sspr_core::builder::{build_solver_task, BuildError};
use sspr_core::evaluator::evaluate;
use sspr_core::orchestrator::config::CampaignConfig;
use sspr_core::orchestrator::{run_campaign, RecordSink};
use sspr_core::par::Parallelism;
use sspr_core::reward::{self, InjectRewardParams};
use sspr_core::sandbox::{LocalPool, Workspace};
use sspr_core::validator::validate;
use sspr_core::{BugArtifact, BugInstance, ValidationConfig};

const EXIT_OK: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_SYSTEM: u8 = 3;

#[derive(Parser)]
#[command(name = "sspr", version, about = "Self-play harness for bug injection and repair")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the consistency checks on an artifact directory.
    Validate {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        /// Report destination.
        #[arg(long, default_value = "validation_report.json")]
        out: PathBuf,
        /// Also write the instance here when the artifact is valid.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Materialize the solver-facing task for an instance.
    Build {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grade a predicted patch against an instance.
    Eval {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        prediction: PathBuf,
        #[arg(long, default_value = "outcome.json")]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Run a campaign described by a JSON or TOML file.
    Selfplay {
        #[arg(long)]
        config: PathBuf,
        /// Directory for episodes.jsonl and derived instances.
        #[arg(long, default_value = "selfplay_out")]
        out: PathBuf,
        #[command(flatten)]
        opts: Options,
    },
    /// Tabulate expected reward against target solve rate.
    RewardCurve {
        #[arg(long, default_value = "reward_curve.csv")]
        out: PathBuf,
        /// Beta reward exponents.
        #[arg(long, default_value_t = 1.0)]
        beta_a: f64,
        #[arg(long, default_value_t = 3.0)]
        beta_b: f64,
        #[command(flatten)]
        opts: Options,
    },
}

/// Shared knobs. Each may also come from `--config`; flags win.
#[derive(Args, Debug, Default, Clone)]
struct Options {
    /// JSON or TOML file with the same keys as the flags (snake_case).
    #[arg(long = "settings")]
    settings: Option<PathBuf>,
    #[arg(long)]
    min_passing_tests: Option<usize>,
    #[arg(long)]
    min_changed_files: Option<usize>,
    #[arg(long)]
    min_failing_tests: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    group_size: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    grid: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileOptions {
    min_passing_tests: Option<usize>,
    min_changed_files: Option<usize>,
    min_failing_tests: Option<usize>,
    timeout_secs: Option<f64>,
    group_size: Option<u32>,
    alpha: Option<f64>,
    seed: Option<u64>,
    parallelism: Option<usize>,
    grid: Option<f64>,
}

/// Invalid input, as opposed to an infrastructure fault.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

fn parse_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let parsed = if is_toml {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| invalid(format!("{}: {e}", path.display())))
}

impl Options {
    /// Flags layered over the settings file.
    fn merged(&self) -> Result<Options> {
        let file: FileOptions = match &self.settings {
            Some(p) => parse_file(p)?,
            None => FileOptions::default(),
        };
        Ok(Options {
            settings: self.settings.clone(),
            min_passing_tests: self.min_passing_tests.or(file.min_passing_tests),
            min_changed_files: self.min_changed_files.or(file.min_changed_files),
            min_failing_tests: self.min_failing_tests.or(file.min_failing_tests),
            timeout_secs: self.timeout_secs.or(file.timeout_secs),
            group_size: self.group_size.or(file.group_size),
            alpha: self.alpha.or(file.alpha),
            seed: self.seed.or(file.seed),
            parallelism: self.parallelism.or(file.parallelism),
            grid: self.grid.or(file.grid),
        })
    }

    fn apply_validation(&self, mut c: ValidationConfig) -> Result<ValidationConfig> {
        if let Some(n) = self.min_passing_tests {
            c.min_passing_tests = n;
        }
        if let Some(n) = self.min_changed_files {
            c.min_changed_files = n;
        }
        if let Some(n) = self.min_failing_tests {
            c.min_failing_tests = n;
        }
        if let Some(t) = self.timeout_secs {
            c.limits.test_timeout =
                Duration::try_from_secs_f64(t).map_err(|e| invalid(format!("--timeout-secs: {e}")))?;
        }
        Ok(c)
    }

    fn alpha(&self) -> Result<InjectRewardParams> {
        InjectRewardParams::new(self.alpha.unwrap_or(reward::DEFAULT_ALPHA)).map_err(|e| invalid(e.to_string()))
    }

    fn parallelism(&self) -> Parallelism {
        Parallelism::from_count(self.parallelism.unwrap_or(1))
    }
}

fn open_repo(path: &Path) -> Result<Workspace> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Workspace::open(path, name).with_context(|| format!("opening repository {}", path.display()))
}

fn pool() -> Result<LocalPool> {
    LocalPool::from_env().context("preparing workspace pool")
}

fn load_instance(path: &Path) -> Result<BugInstance> {
    BugInstance::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_validate(repo: &Path, artifact: &Path, out: &Path, instance: Option<&Path>, opts: &Options) -> Result<u8> {
    let opts = opts.merged()?;
    let config = opts.apply_validation(ValidationConfig::default())?;
    let source = open_repo(repo)?;
    let artifact = BugArtifact::load_unchecked(artifact).map_err(|e| invalid(format!("{}: {e}", artifact.display())))?;
    let report = validate(&artifact, &source, &pool()?, &config);
    write_json(out, &report)?;
    for c in &report.checks {
        println!("{:>2} {:<24} {:?} {}", c.name.number(), c.name.as_str(), c.outcome, c.detail);
    }
    println!("verdict: {:?} ({}/7)", report.verdict, report.passed_count());
    if let Some(e) = &report.error {
        println!("error: {e}");
    }
    if let (Some(path), Some(inst)) = (instance, &report.instance) {
        inst.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report.verdict.exit_code() as u8)
}

fn cmd_build(repo: &Path, instance: &Path, out: &Path) -> Result<u8> {
    let source = open_repo(repo)?;
    let inst = load_instance(instance)?;
    let task = match build_solver_task(&inst, &source, &pool()?) {
        Ok(t) => t,
        Err(e @ (BuildError::PatchConflict(_) | BuildError::Diff(_) | BuildError::Artifact(_))) => {
            eprintln!("cannot build task: {e}");
            return Ok(EXIT_FAILED);
        }
        Err(e) => return Err(e.into()),
    };
    let ws = task.materialize(out)?;
    println!("task workspace: {}", ws.display());
    println!("order: {:?}, hidden tests: {}", inst.artifact.order, inst.fail_to_pass.len() + inst.pass_to_pass.len());
    Ok(EXIT_OK)
}

fn cmd_eval(repo: &Path, instance: &Path, prediction: &Path, out: &Path, opts: &Options) -> Result<u8> {
    let opts = opts.merged()?;
    let limits = opts.apply_validation(ValidationConfig::default())?.limits;
    let source = open_repo(repo)?;
    let inst = load_instance(instance)?;
    let pred = fs::read_to_string(prediction).with_context(|| format!("reading {}", prediction.display()))?;
    let outcome = evaluate(&inst, &source, &pool()?, &pred, &limits);
    write_json(out, &outcome)?;
    let c = &outcome.counts;
    println!(
        "{:?}: fail-to-pass {}/{}, pass-to-pass {}/{}, reward {}",
        outcome.failure_kind, c.f2p_passed, c.f2p_total, c.p2p_passed, c.p2p_total, outcome.reward
    );
    if !outcome.detail.is_empty() {
        println!("{}", outcome.detail);
    }
    Ok(outcome.exit_code() as u8)
}

fn cmd_selfplay(config_path: &Path, out: &Path, opts: &Options) -> Result<u8> {
    let opts = opts.merged()?;
    let mut config: CampaignConfig = parse_file(config_path)?;
    config.resolve_paths(config_path.parent().unwrap_or(Path::new(".")));
    config.episode.validation = opts.apply_validation(config.episode.validation)?;
    if let Some(g) = opts.group_size {
        config.episode.group_size = g;
    }
    if opts.alpha.is_some() {
        config.episode.reward = opts.alpha()?;
    }
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    if let Some(p) = opts.parallelism {
        config.parallelism = p;
    }
    let agents = config.build_agents().map_err(|e| invalid(e.to_string()))?;
    let sources = config.sources.iter().map(|p| open_repo(p)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out.join("instances")).with_context(|| format!("creating {}", out.display()))?;
    let sink = RecordSink::create(&out.join("episodes.jsonl"))?;
    let episodes = run_campaign(
        &sources,
        &pool()?,
        &agents.proposer,
        &agents.solver,
        &config.episode,
        &config.settings(),
        Some(&sink),
    )
    .map_err(|e| match e {
        sspr_core::orchestrator::CampaignError::Sink(_) => anyhow!(e),
        other => invalid(other.to_string()),
    })?;

    let mut rewards = Vec::new();
    let mut derived = 0;
    for ep in &episodes {
        rewards.extend(ep.record.inject_reward);
        for d in &ep.derived {
            d.save(&out.join("instances").join(format!("{}.json", d.id())))?;
            derived += 1;
        }
        if let Some(i) = &ep.instance {
            i.save(&out.join("instances").join(format!("{}.json", i.id())))?;
        }
    }
    let valid = episodes.iter().filter(|e| e.record.verdict.exit_code() == 0).count();
    println!("episodes: {} ({} valid), order-2 bugs: {}", episodes.len(), valid, derived);
    if !rewards.is_empty() {
        println!("mean inject reward: {:.4}", rewards.iter().sum::<f64>() / rewards.len() as f64);
    }
    println!("records: {}", sink.path().display());
    Ok(EXIT_OK)
}

fn cmd_reward_curve(out: &Path, a: f64, b: f64, opts: &Options) -> Result<u8> {
    let opts = opts.merged()?;
    let params = opts.alpha()?;
    let g = opts.group_size.unwrap_or(reward::DEFAULT_GROUP_SIZE);
    let grid = opts.grid.unwrap_or(reward::DEFAULT_GRID);
    let rows = reward::reward_curve(opts.parallelism(), g, &params, a, b, grid).map_err(|e| invalid(e.to_string()))?;

    let mut file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    writeln!(file, "# group_size={g} alpha={} beta_a={a} beta_b={b} grid={grid}", params.alpha())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["p", "R_eq1", "R_beta"])?;
    for r in &rows {
        w.write_record([r.p.to_string(), r.inject.to_string(), r.beta.to_string()])?;
    }
    w.flush()?;

    let best = |f: fn(&reward::CurvePoint) -> f64| {
        rows.iter().fold(&rows[0], |m, r| if f(r) > f(m) { r } else { m })
    };
    let e = best(|r| r.inject);
    let bt = best(|r| r.beta);
    println!("argmax R_eq1: p={} R={:.6}", e.p, e.inject);
    println!("argmax R_beta: p={} R={:.6}", bt.p, bt.beta);
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Validate { repo, artifact, out, instance, opts } => {
            cmd_validate(repo, artifact, out, instance.as_deref(), opts)
        }
        Command::Build { repo, instance, out } => cmd_build(repo, instance, out),
        Command::Eval { repo, instance, prediction, out, opts } => cmd_eval(repo, instance, prediction, out, opts),
        Command::Selfplay { config, out, opts } => cmd_selfplay(config, out, opts),
        Command::RewardCurve { out, beta_a, beta_b, opts } => cmd_reward_curve(out, *beta_a, *beta_b, opts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::from(EXIT_SYSTEM)
            }
        }
    }
}
