//! Self-play harness for software bug injection and repair.
//!
//! One policy alternates between injecting a bug into a sandboxed repository
//! and repairing bugs it (or an earlier episode) produced. Artifacts are
//! checked for consistency by executing them, repairs are graded by a hidden
//! test run, and both roles receive scalar rewards.

pub mod artifact;
pub mod builder;
pub mod diff;
pub mod evaluator;
pub mod orchestrator;
pub mod par;
pub mod prompts;
pub mod reward;
pub mod runner;
pub mod sandbox;
pub mod status;
pub mod validator;

pub use artifact::{BugArtifact, BugInstance, BugOrder, RunLimits, ValidationConfig};
pub use reward::{InjectRewardParams, RewardMode, SolveRate};
pub use status::{ContractViolation, TestStatus, TestStatusMap};
