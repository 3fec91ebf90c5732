//! The proposer/solver game loop.

pub mod agents;
pub mod config;
pub mod scripted;

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{BugArtifact, BugInstance, BugOrder, ValidationConfig};
use crate::builder::{build_solver_task, derive_higher_order, SolverTask};
use crate::evaluator::{evaluate, FailureKind, SolveOutcome};
use crate::par::{self, Parallelism};
use crate::prompts::{self, InjectionStrategy};
use crate::reward::{self, InjectRewardParams, RewardMode, SolveRate};
use crate::sandbox::{Workspace, WorkspaceProvider};
use crate::validator::{validate, ValidationReport, Verdict};

pub use agents::{AgentError, CommandAgent, Proposer, ProposerContext, Solver, SolverContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    #[serde(flatten)]
    pub validation: ValidationConfig,
    pub group_size: u32,
    #[serde(flatten)]
    pub reward: InjectRewardParams,
    pub reward_mode: RewardMode,
    /// Cap on order-2 instances derived per episode.
    pub higher_order_per_episode: usize,
    pub strategy: InjectionStrategy,
    /// Concurrency across the solver attempts of one episode.
    pub attempt_parallelism: Parallelism,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            validation: ValidationConfig::default(),
            group_size: reward::DEFAULT_GROUP_SIZE,
            reward: InjectRewardParams::default(),
            reward_mode: RewardMode::default(),
            higher_order_per_episode: 1,
            strategy: InjectionStrategy::Removal,
            attempt_parallelism: Parallelism::Serial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub repo: String,
    pub seed: u64,
    pub verdict: Verdict,
    /// Absent when the proposer itself failed.
    pub artifact: Option<BugArtifact>,
    pub report: Option<ValidationReport>,
    pub attempts: Vec<SolveOutcome>,
    /// Over attempts that produced a gradable result.
    pub solve_rate: Option<SolveRate>,
    /// Absent for system errors, which yield no training sample.
    pub inject_reward: Option<f64>,
    /// One per gradable attempt, in attempt order.
    pub solver_rewards: Vec<i32>,
    pub higher_order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeRecord {
    pub fn mean_solver_reward(&self) -> Option<f64> {
        reward::mean(&self.solver_rewards)
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub record: EpisodeRecord,
    pub instance: Option<BugInstance>,
    pub derived: Vec<BugInstance>,
}

/// Stable per-call seed. Episodes and attempts draw from distinct ChaCha
/// streams of the campaign seed, so results do not depend on scheduling.
pub fn derive_seed(seed: u64, episode: u64, attempt: Option<u32>) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng.set_word_pos(attempt.map_or(0, |a| 2 * (a as u128 + 1)));
    rng.next_u64()
}

fn scratch() -> Result<(tempfile::TempDir, PathBuf), AgentError> {
    let dir = tempfile::Builder::new()
        .prefix("sspr-agent-")
        .tempdir()
        .map_err(|e| AgentError::Sandbox(crate::sandbox::io_err("creating agent scratch", e)))?;
    let out = dir.path().join("out");
    std::fs::create_dir(&out).map_err(|e| AgentError::Sandbox(crate::sandbox::io_err("creating agent scratch", e)))?;
    Ok((dir, out))
}

fn propose(
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    proposer: &dyn Proposer,
    config: &EpisodeConfig,
    episode: u64,
    seed: u64,
) -> Result<BugArtifact, AgentError> {
    let mut ws = provider.clone_workspace(source)?;
    let (_scratch, out) = scratch()?;
    let prompt = prompts::injection_prompt(config.strategy, &config.validation, &ws.root().display().to_string());
    let mut ctx = ProposerContext {
        workspace: &mut ws,
        output_dir: &out,
        prompt: &prompt,
        episode,
        seed,
    };
    let mut artifact = proposer.propose(&mut ctx)?;
    if artifact.repo_ref.is_empty() {
        artifact.repo_ref = source.repo_ref.clone();
    }
    Ok(artifact)
}

#[allow(clippy::too_many_arguments)]
fn attempt(
    task: &SolverTask,
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    solver: &dyn Solver,
    config: &EpisodeConfig,
    episode: u64,
    index: u32,
    seed: u64,
) -> (SolveOutcome, Option<String>) {
    let prediction = (|| {
        let mut ws = provider.clone_workspace(&task.workspace)?;
        let (_scratch, out) = scratch()?;
        let prompt = task.prompt(&ws.root().display().to_string(), &out.join("pred_patch.diff").display().to_string());
        let mut ctx = SolverContext {
            workspace: &mut ws,
            output_dir: &out,
            spec_patch: &task.spec_patch,
            prompt: &prompt,
            episode,
            attempt: index,
            seed,
        };
        solver.solve(&mut ctx)
    })();
    match prediction {
        Ok(p) => (evaluate(&task.instance, source, provider, &p, &config.validation.limits), Some(p)),
        Err(e) => {
            log::warn!("episode {episode} attempt {index}: {e}");
            (SolveOutcome::system_error(&task.instance, format!("solver: {e}")), None)
        }
    }
}

/// One round: propose, validate, `G` solver attempts, rewards, and order-2
/// derivation from failed attempts.
pub fn run_episode(
    source: &Workspace,
    provider: &dyn WorkspaceProvider,
    proposer: &dyn Proposer,
    solver: &dyn Solver,
    config: &EpisodeConfig,
    episode: u64,
    seed: u64,
) -> Episode {
    let mut record = EpisodeRecord {
        episode,
        repo: source.repo_ref.clone(),
        seed,
        verdict: Verdict::SystemError,
        artifact: None,
        report: None,
        attempts: Vec::new(),
        solve_rate: None,
        inject_reward: None,
        solver_rewards: Vec::new(),
        higher_order: Vec::new(),
        error: None,
    };
    let artifact = match propose(source, provider, proposer, config, episode, seed) {
        Ok(a) => a,
        Err(e) => {
            log::warn!("episode {episode}: proposer failed: {e}");
            record.error = Some(format!("proposer: {e}"));
            return Episode { record, instance: None, derived: Vec::new() };
        }
    };
    let report = validate(&artifact, source, provider, &config.validation);
    record.verdict = report.verdict;
    record.artifact = Some(artifact);
    let instance = report.instance.clone();
    record.report = Some(report);
    let instance = match (record.verdict, instance) {
        (Verdict::Valid, Some(i)) => i,
        (Verdict::Invalid, _) => {
            record.inject_reward = config.reward_mode.inject(false, None, &config.reward);
            return Episode { record, instance: None, derived: Vec::new() };
        }
        _ => return Episode { record, instance: None, derived: Vec::new() },
    };

    let task = match build_solver_task(&instance, source, provider) {
        Ok(t) => t,
        Err(e) => {
            record.error = Some(format!("building solver task: {e}"));
            return Episode { record, instance: Some(instance), derived: Vec::new() };
        }
    };
    let results = par::map(config.attempt_parallelism, (0..config.group_size).collect(), |i| {
        attempt(&task, source, provider, solver, config, episode, i, derive_seed(seed, episode, Some(i)))
    });

    let graded: Vec<&SolveOutcome> = results.iter().map(|(o, _)| o).filter(|o| !o.is_system_error()).collect();
    record.solver_rewards = graded.iter().map(|o| reward::solver_reward(o)).collect();
    let successes = graded.iter().filter(|o| o.success).count() as u32;
    record.solve_rate = SolveRate::new(successes, graded.len() as u32).ok();
    record.inject_reward = config.reward_mode.inject(true, record.solve_rate, &config.reward);

    let mut derived = Vec::new();
    if instance.artifact.order == BugOrder::First {
        let mut tried: Vec<&str> = Vec::new();
        for (outcome, prediction) in &results {
            if derived.len() >= config.higher_order_per_episode {
                break;
            }
            let Some(p) = prediction.as_deref() else { continue };
            if outcome.success || outcome.failure_kind != FailureKind::TestsFailed || tried.contains(&p) {
                continue;
            }
            tried.push(p);
            match derive_higher_order(&instance, source, provider, p, &config.validation) {
                Ok(d) => {
                    record.higher_order.push(d.artifact.id());
                    derived.push(d);
                }
                Err(e) => log::debug!("episode {episode}: no order-2 bug from failed attempt: {e}"),
            }
        }
    }
    record.attempts = results.into_iter().map(|(o, _)| o).collect();
    Episode { record, instance: Some(instance), derived }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("campaign needs at least one source repository")]
    NoSources,
    #[error("campaign needs at least one episode")]
    NoEpisodes,
    #[error("writing records: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignSettings {
    pub episodes: u64,
    pub seed: u64,
    /// Concurrency across episodes.
    pub parallelism: Parallelism,
}

/// Append-only JSON-lines writer, safe to share between workers.
pub struct RecordSink {
    out: Mutex<BufWriter<File>>,
    path: PathBuf,
}

impl RecordSink {
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(RecordSink {
            out: Mutex::new(BufWriter::new(file)),
            path: path.to_owned(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &EpisodeRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        out.write_all(&line)?;
        out.flush()
    }
}

/// Runs `settings.episodes` episodes round-robin over `sources`. Episode
/// `i` uses source `i mod n` and a seed derived from `(seed, i)`; results
/// come back in episode order whatever the scheduling.
pub fn run_campaign(
    sources: &[Workspace],
    provider: &dyn WorkspaceProvider,
    proposer: &dyn Proposer,
    solver: &dyn Solver,
    config: &EpisodeConfig,
    settings: &CampaignSettings,
    sink: Option<&RecordSink>,
) -> Result<Vec<Episode>, CampaignError> {
    if sources.is_empty() {
        return Err(CampaignError::NoSources);
    }
    if settings.episodes == 0 {
        return Err(CampaignError::NoEpisodes);
    }
    let results = par::map(settings.parallelism, (0..settings.episodes).collect(), |i| {
        let source = &sources[(i % sources.len() as u64) as usize];
        let ep = run_episode(source, provider, proposer, solver, config, i, derive_seed(settings.seed, i, None));
        log::info!(
            "episode {i}: {:?} solve_rate={} inject_reward={:?}",
            ep.record.verdict,
            ep.record.solve_rate.map_or("-".into(), |s| s.to_string()),
            ep.record.inject_reward
        );
        let written = sink.map_or(Ok(()), |s| s.append(&ep.record));
        (ep, written)
    });
    let mut episodes = Vec::with_capacity(results.len());
    for (ep, written) in results {
        written?;
        episodes.push(ep);
    }
    Ok(episodes)
}
