//! Bundled prompt templates for LLM-backed agents.
//!
//! Templates use `{name}` placeholders; `{{` and `}}` produce literal braces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::ValidationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionStrategy {
    Removal,
    History,
    Direct,
}

impl InjectionStrategy {
    pub fn template(self) -> &'static str {
        match self {
            InjectionStrategy::Removal => include_str!("../assets/prompts/inject_removal.md"),
            InjectionStrategy::History => include_str!("../assets/prompts/inject_history.md"),
            InjectionStrategy::Direct => include_str!("../assets/prompts/inject_direct.md"),
        }
    }
}

pub const SOLVER_ISSUE: &str = include_str!("../assets/prompts/solver_issue.md");
pub const SOLVER: &str = include_str!("../assets/prompts/solver.md");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value for placeholder {{{0}}}")]
    Missing(String),
    #[error("unbalanced brace at byte {0}")]
    Unbalanced(usize),
}

/// Substitutes `{name}` placeholders from `vars`.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let consumed = if tail.starts_with("{{") {
            out.push('{');
            2
        } else if tail.starts_with("}}") {
            out.push('}');
            2
        } else if tail.starts_with('}') {
            return Err(PromptError::Unbalanced(offset + i));
        } else {
            let close = tail.find('}').ok_or(PromptError::Unbalanced(offset + i))?;
            let name = &tail[1..close];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(PromptError::Unbalanced(offset + i));
            }
            let value = vars
                .get(name)
                .ok_or_else(|| PromptError::Missing(name.to_owned()))?;
            out.push_str(value);
            close + 1
        };
        rest = &tail[consumed..];
        offset += i + consumed;
    }
    out.push_str(rest);
    Ok(out)
}

pub fn injection_prompt(
    strategy: InjectionStrategy,
    config: &ValidationConfig,
    repo_root: &str,
) -> String {
    let vars = BTreeMap::from([
        ("repo_root", repo_root.to_owned()),
        ("min_passing_tests", config.min_passing_tests.to_string()),
        ("min_changed_files", config.min_changed_files.to_string()),
        ("min_num_tests_to_break", config.min_failing_tests.to_string()),
    ]);
    render(strategy.template(), &vars).expect("bundled template is well formed")
}

/// Issue text built from the oracle test specification.
pub fn solver_issue(spec_patch: &str) -> String {
    let vars = BTreeMap::from([("oracle_test_patch", spec_patch.trim_end().to_owned())]);
    render(SOLVER_ISSUE, &vars).expect("bundled template is well formed")
}

pub fn solver_prompt(spec_patch: &str, repo_root: &str, patch_path: &str) -> String {
    let vars = BTreeMap::from([
        ("repo_root", repo_root.to_owned()),
        ("issue", solver_issue(spec_patch)),
        ("patch_path", patch_path.to_owned()),
    ]);
    render(SOLVER, &vars).expect("bundled template is well formed")
}
