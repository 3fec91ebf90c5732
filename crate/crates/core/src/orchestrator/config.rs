//! File-level campaign description and agent construction.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::agents::{CommandAgent, Proposer, Solver};
use super::scripted::*;
use super::{CampaignSettings, EpisodeConfig};
use crate::artifact::BugArtifact;
use crate::par::Parallelism;
use crate::reward::{self, inject_reward};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

fn default_episodes() -> u64 {
    1
}

fn default_timeout_secs() -> f64 {
    3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposerSpec {
    Replay {
        artifacts: Vec<PathBuf>,
    },
    Command {
        argv: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
    /// Without `target`, aims at the optimal solve rate for the configured
    /// group size and alpha.
    FailRandomly {
        artifact: PathBuf,
        bug_files: Vec<String>,
        weaken_file: String,
        #[serde(default)]
        target: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverSpec {
    Oracle,
    Noop,
    Tamper,
    Coinflip {
        p: f64,
    },
    Alternating,
    Replay {
        prediction: PathBuf,
    },
    Command {
        argv: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub sources: Vec<PathBuf>,
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    #[serde(default)]
    pub seed: u64,
    /// Episode workers; 0 or 1 runs serially.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(flatten)]
    pub episode: EpisodeConfig,
    pub proposer: ProposerSpec,
    pub solver: SolverSpec,
    /// Wrap the solver so every attempt also adds a seeded scratch file.
    #[serde(default)]
    pub jitter: bool,
}

pub struct Agents {
    pub proposer: Box<dyn Proposer>,
    pub solver: Box<dyn Solver>,
    pub key: AnswerKey,
}

fn timeout(secs: f64) -> Result<Duration, ConfigError> {
    Duration::try_from_secs_f64(secs).map_err(|e| ConfigError::Invalid(format!("timeout_secs: {e}")))
}

fn command(argv: &[String], secs: f64, role: &str) -> Result<CommandAgent, ConfigError> {
    if argv.is_empty() || argv[0].trim().is_empty() {
        return invalid(format!("{role} command is empty"));
    }
    Ok(CommandAgent::new(argv.to_vec(), timeout(secs)?))
}

fn load_artifact(path: &Path) -> Result<BugArtifact, ConfigError> {
    BugArtifact::load_unchecked(path).map_err(|e| ConfigError::Load {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

impl CampaignConfig {
    pub fn settings(&self) -> CampaignSettings {
        CampaignSettings {
            episodes: self.episodes,
            seed: self.seed,
            parallelism: Parallelism::from_count(self.parallelism),
        }
    }

    /// Relative paths are taken from `base`, normally the config file's
    /// directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.sources.iter_mut().for_each(fix);
        match &mut self.proposer {
            ProposerSpec::Replay { artifacts } => artifacts.iter_mut().for_each(fix),
            ProposerSpec::FailRandomly { artifact, .. } => fix(artifact),
            ProposerSpec::Command { .. } => {}
        }
        if let SolverSpec::Replay { prediction } = &mut self.solver {
            fix(prediction);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.sources.is_empty() {
            return invalid("no sources listed");
        }
        if self.episodes == 0 {
            return invalid("episodes must be at least 1");
        }
        if self.episode.group_size == 0 {
            return invalid("group_size must be at least 1");
        }
        if let SolverSpec::Coinflip { p } = self.solver {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("coinflip p must lie in [0, 1], got {p}"));
            }
        }
        if let ProposerSpec::FailRandomly { target: Some(t), .. } = self.proposer {
            if !(0.0..=1.0).contains(&t) {
                return invalid(format!("fail_randomly target must lie in [0, 1], got {t}"));
            }
        }
        Ok(())
    }

    pub fn build_agents(&self) -> Result<Agents, ConfigError> {
        self.check()?;
        let key = AnswerKey::new();
        let proposer: Box<dyn Proposer> = match &self.proposer {
            ProposerSpec::Replay { artifacts } => {
                if artifacts.is_empty() {
                    return invalid("replay proposer lists no artifacts");
                }
                let artifacts = artifacts.iter().map(|p| load_artifact(p)).collect::<Result<_, _>>()?;
                Box::new(ReplayProposer { artifacts })
            }
            ProposerSpec::Command { argv, timeout_secs } => Box::new(command(argv, *timeout_secs, "proposer")?),
            ProposerSpec::FailRandomly { artifact, bug_files, weaken_file, target } => {
                let target = match target {
                    Some(t) => *t,
                    None => {
                        let params = self.episode.reward;
                        let r = |s| inject_reward(true, s, &params);
                        reward::optimal_target(self.episode.group_size, r, reward::DEFAULT_GRID)
                            .map_err(|e| ConfigError::Invalid(e.to_string()))?
                            .0
                    }
                };
                Box::new(FailRandomly {
                    base: load_artifact(artifact)?,
                    bug_files: bug_files.clone(),
                    weaken_file: weaken_file.clone(),
                    target,
                })
            }
        };
        let proposer = Box::new(Recorded { inner: proposer, key: key.clone() });
        let k = || key.clone();
        let solver: Box<dyn Solver> = match &self.solver {
            SolverSpec::Oracle => Box::new(OracleSolver { key: k() }),
            SolverSpec::Noop => Box::new(NoopSolver),
            SolverSpec::Tamper => Box::new(TamperSolver),
            SolverSpec::Coinflip { p } => Box::new(CoinflipSolver { p: *p, key: k() }),
            SolverSpec::Alternating => Box::new(AlternatingSolver { key: k() }),
            SolverSpec::Replay { prediction } => Box::new(ReplaySolver {
                prediction: fs::read_to_string(prediction).map_err(|e| ConfigError::Load {
                    path: prediction.clone(),
                    message: e.to_string(),
                })?,
            }),
            SolverSpec::Command { argv, timeout_secs } => Box::new(command(argv, *timeout_secs, "solver")?),
        };
        let solver = if self.jitter { Box::new(Jitter { inner: solver }) } else { solver };
        Ok(Agents { proposer, solver, key })
    }
}
