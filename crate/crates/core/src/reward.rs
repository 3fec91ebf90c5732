//! Injection and repair rewards, and the expected-reward analysis over a
//! binomially sampled solve rate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::SolveOutcome;
use crate::par::{self, Parallelism};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_GROUP_SIZE: u32 = 8;
pub const DEFAULT_GRID: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("{0}")]
    Domain(String),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, RewardError> {
    Err(RewardError::Domain(msg.into()))
}

/// Exact `successes / attempts`. Kept rational so the `s == 0` and `s == 1`
/// branches never depend on float rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRate")]
pub struct SolveRate {
    successes: u32,
    attempts: u32,
}

#[derive(Deserialize)]
struct RawRate {
    successes: u32,
    attempts: u32,
}

impl TryFrom<RawRate> for SolveRate {
    type Error = RewardError;
    fn try_from(r: RawRate) -> Result<Self, RewardError> {
        SolveRate::new(r.successes, r.attempts)
    }
}

impl SolveRate {
    pub fn new(successes: u32, attempts: u32) -> Result<Self, RewardError> {
        if attempts == 0 {
            return domain("solve rate needs at least one attempt");
        }
        if successes > attempts {
            return domain(format!("{successes} successes out of {attempts} attempts"));
        }
        Ok(SolveRate { successes, attempts })
    }

    pub fn successes(self) -> u32 {
        self.successes
    }

    pub fn attempts(self) -> u32 {
        self.attempts
    }

    pub fn value(self) -> f64 {
        self.successes as f64 / self.attempts as f64
    }

    pub fn is_zero(self) -> bool {
        self.successes == 0
    }

    pub fn is_one(self) -> bool {
        self.successes == self.attempts
    }
}

impl fmt::Display for SolveRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.attempts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct InjectRewardParams {
    alpha: f64,
}

#[derive(Deserialize)]
struct RawParams {
    #[serde(default = "default_alpha")]
    alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl TryFrom<RawParams> for InjectRewardParams {
    type Error = RewardError;
    fn try_from(r: RawParams) -> Result<Self, RewardError> {
        InjectRewardParams::new(r.alpha)
    }
}

impl InjectRewardParams {
    pub fn new(alpha: f64) -> Result<Self, RewardError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return domain(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        Ok(InjectRewardParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for InjectRewardParams {
    fn default() -> Self {
        InjectRewardParams { alpha: DEFAULT_ALPHA }
    }
}

/// `-1` for an inconsistent artifact, `-alpha` when no attempt or every
/// attempt succeeded, `1 - (1 + alpha) s` in between.
pub fn inject_reward(valid: bool, s: SolveRate, params: &InjectRewardParams) -> f64 {
    if !valid {
        -1.0
    } else if s.is_zero() || s.is_one() {
        -params.alpha
    } else {
        1.0 - (1.0 + params.alpha) * s.value()
    }
}

/// Proposer reward variants. `Consistency` ignores solver feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    SolveRate,
    Consistency,
}

impl RewardMode {
    /// `s` is `None` when no attempt produced a gradable result.
    pub fn inject(self, valid: bool, s: Option<SolveRate>, params: &InjectRewardParams) -> Option<f64> {
        match (self, valid) {
            (_, false) => Some(-1.0),
            (RewardMode::Consistency, true) => Some(1.0),
            (RewardMode::SolveRate, true) => s.map(|s| inject_reward(true, s, params)),
        }
    }
}

pub fn solver_reward(outcome: &SolveOutcome) -> i32 {
    if outcome.success {
        1
    } else {
        -1
    }
}

pub fn mean(rewards: &[i32]) -> Option<f64> {
    if rewards.is_empty() {
        return None;
    }
    Some(rewards.iter().map(|&r| r as i64).sum::<i64>() as f64 / rewards.len() as f64)
}

/// `s^a (1 - s)^b` with `0^0 = 1`.
pub fn beta_reward(s: SolveRate, a: f64, b: f64) -> Result<f64, RewardError> {
    if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return domain(format!("beta exponents must be finite and non-negative, got a={a} b={b}"));
    }
    let x = s.value();
    // (1 - k/G) computed from integers keeps s = 1 exact.
    let y = (s.attempts - s.successes) as f64 / s.attempts as f64;
    Ok(x.powf(a) * y.powf(b))
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// `R(p) = sum_k C(G,k) p^k (1-p)^(G-k) r(k/G)`.
pub fn expected_reward<F>(p: f64, group_size: u32, r: F) -> Result<f64, RewardError>
where
    F: Fn(SolveRate) -> f64,
{
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("target solve rate must lie in [0, 1], got {p}"));
    }
    if group_size == 0 {
        return domain("group size must be positive");
    }
    let g = group_size;
    let q = 1.0 - p;
    Ok((0..=g)
        .map(|k| {
            let s = SolveRate { successes: k, attempts: g };
            binomial(g, k) * p.powi(k as i32) * q.powi((g - k) as i32) * r(s)
        })
        .sum())
}

/// `{0, step, 2 step, ...}` up to and including 1.
pub fn grid_points(step: f64) -> Result<Vec<f64>, RewardError> {
    if !(step > 0.0 && step <= 0.5) {
        return domain(format!("grid step must lie in (0, 0.5], got {step}"));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut points: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(1.0)).collect();
    if *points.last().unwrap() < 1.0 - 1e-12 {
        points.push(1.0);
    } else {
        *points.last_mut().unwrap() = 1.0;
    }
    Ok(points)
}

/// Relative slack under which two expected rewards count as tied.
const TIE_EPS: f64 = 1e-12;

/// Grid argmax of `R(p)`; ties go to the smaller `p`.
pub fn optimal_target<F>(group_size: u32, r: F, step: f64) -> Result<(f64, f64), RewardError>
where
    F: Fn(SolveRate) -> f64 + Sync,
{
    optimal_target_with(Parallelism::Serial, group_size, r, step)
}

pub fn optimal_target_with<F>(
    par: Parallelism,
    group_size: u32,
    r: F,
    step: f64,
) -> Result<(f64, f64), RewardError>
where
    F: Fn(SolveRate) -> f64 + Sync,
{
    let points = grid_points(step)?;
    let values = par::map(par, points.clone(), |p| expected_reward(p, group_size, &r));
    let mut best: Option<(f64, f64)> = None;
    for (p, v) in points.into_iter().zip(values) {
        let v = v?;
        match best {
            Some((_, b)) if v <= b + TIE_EPS * b.abs().max(1.0) => {}
            _ => best = Some((p, v)),
        }
    }
    Ok(best.expect("grid is never empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub p: f64,
    pub inject: f64,
    pub beta: f64,
}

/// Expected reward of the injection reward and of a Beta reward on a grid.
pub fn reward_curve(
    par: Parallelism,
    group_size: u32,
    params: &InjectRewardParams,
    a: f64,
    b: f64,
    step: f64,
) -> Result<Vec<CurvePoint>, RewardError> {
    beta_reward(SolveRate::new(0, 1)?, a, b)?;
    let inject = |s| inject_reward(true, s, params);
    let beta = |s| beta_reward(s, a, b).expect("exponents checked");
    par::map(par, grid_points(step)?, |p| {
        Ok(CurvePoint {
            p,
            inject: expected_reward(p, group_size, inject)?,
            beta: expected_reward(p, group_size, beta)?,
        })
    })
    .into_iter()
    .collect()
}
