//! Outcome, process and hybrid rewards.
//!
//! Every component lives on the same [-4, +4] scale with the default
//! configuration, so the hybrid is a plain convex combination.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cases::{ground_truth_calls, ground_truth_profile, CaseKey, CaseRecord, EvidenceItem};
use crate::domain::ValidityClass;
use crate::orchestration::{ToolCall, Trajectory};
use crate::scalar::{clamp, Scalar};

/// Rank distance charged to an output with no usable classification.
pub const PARSE_FAILURE_DISTANCE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RewardConfig<F> {
    pub alpha: F,
    pub sigma: F,
    pub gamma: F,
    pub lambda: F,
    pub beta: F,
    pub clip_low: F,
    pub clip_high: F,
    /// Single agent only: also charge unparseable final objects and dropped
    /// evidence entries, not just malformed tool blocks.
    pub count_format_errors: bool,
}

impl<F: Scalar> Default for RewardConfig<F> {
    fn default() -> Self {
        RewardConfig {
            alpha: F::lit(0.5),
            sigma: F::lit(4.0),
            gamma: F::lit(8.0),
            lambda: F::lit(0.5),
            beta: F::lit(0.5),
            clip_low: F::lit(-4.0),
            clip_high: F::lit(4.0),
            count_format_errors: true,
        }
    }
}

impl<F: Scalar> RewardConfig<F> {
    pub fn validate(&self) -> Result<(), String> {
        let z = F::zero();
        let checks = [
            (self.alpha > z, "alpha must be > 0"),
            (self.sigma > z, "sigma must be > 0"),
            (self.gamma > z, "gamma must be > 0"),
            (self.lambda >= z, "lambda must be >= 0"),
            (self.beta >= z && self.beta <= F::one(), "beta must lie in [0, 1]"),
            (self.clip_low < self.clip_high, "clip_low must be < clip_high"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    OutcomeOnly,
    #[default]
    Hybrid,
}

impl fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardScheme::OutcomeOnly => "outcome_only",
            RewardScheme::Hybrid => "hybrid",
        })
    }
}

impl std::str::FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "outcome_only" | "outcome-only" | "outcome" => Ok(RewardScheme::OutcomeOnly),
            "hybrid" => Ok(RewardScheme::Hybrid),
            other => Err(format!("unknown reward scheme {other:?} (expected outcome_only or hybrid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RewardBreakdown<F> {
    pub r_out: F,
    #[serde(rename = "s")]
    pub s_base: F,
    pub r_proc: F,
    pub n_err: usize,
    pub r_hybrid: F,
    pub scheme: RewardScheme,
}

impl<F: Scalar> RewardBreakdown<F> {
    /// The scalar fed to the optimizer.
    pub fn reward(&self) -> F {
        self.r_hybrid
    }
}

pub fn rank_distance(pred: Option<ValidityClass>, gold: ValidityClass) -> u8 {
    match pred {
        Some(p) => p.rank().abs_diff(gold.rank()),
        None => PARSE_FAILURE_DISTANCE,
    }
}

/// `sigma * (1 - alpha * d)`; `None` is a parse failure.
pub fn outcome_reward<F: Scalar>(pred: Option<ValidityClass>, gold: ValidityClass, cfg: &RewardConfig<F>) -> F {
    let d = F::from_count(rank_distance(pred, gold) as usize);
    cfg.sigma * (F::one() - cfg.alpha * d)
}

/// Set F1 with the vacuous-agreement convention: empty/empty is 1.
pub fn set_f1<T: Ord, F: Scalar>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> F {
    if pred.is_empty() && gold.is_empty() {
        return F::one();
    }
    let hits = pred.intersection(gold).count();
    F::from_count(2 * hits) / F::from_count(pred.len() + gold.len())
}

pub fn call_alignment_f1<F: Scalar>(pred: &BTreeSet<ToolCall>, gold: &BTreeSet<ToolCall>) -> F {
    set_f1(pred, gold)
}

pub fn single_agent_process_base<F: Scalar>(pred: &BTreeSet<EvidenceItem>, gold: &BTreeSet<EvidenceItem>) -> F {
    set_f1(pred, gold)
}

/// Cubic shaping of the base score minus the malformed-output penalty, clipped.
pub fn process_reward<F: Scalar>(s: F, n_err: usize, cfg: &RewardConfig<F>) -> F {
    let raw = cfg.gamma * s * s * s - cfg.gamma / F::lit(2.0) - cfg.lambda * F::from_count(n_err);
    clamp(raw, cfg.clip_low, cfg.clip_high)
}

pub fn hybrid_reward<F: Scalar>(r_out: F, r_proc: F, cfg: &RewardConfig<F>) -> F {
    cfg.beta * r_out + (F::one() - cfg.beta) * r_proc
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trajectory for {trajectory} cannot be graded against case {case}")]
pub struct CaseMismatch {
    pub trajectory: Box<CaseKey>,
    pub case: Box<CaseKey>,
}

pub fn grade_trajectory<F: Scalar>(
    traj: &Trajectory,
    case: &CaseRecord,
    scheme: RewardScheme,
    cfg: &RewardConfig<F>,
) -> Result<RewardBreakdown<F>, CaseMismatch> {
    let key = case.key();
    if traj.case_key() != &key {
        return Err(CaseMismatch { trajectory: Box::new(traj.case_key().clone()), case: Box::new(key) });
    }
    let (s_base, n_err) = match traj {
        Trajectory::Supervisor(t) => (call_alignment_f1(&t.call_set(), &ground_truth_calls(case)), t.n_err),
        Trajectory::Single(t) => (
            single_agent_process_base(&t.fine_evidence, &ground_truth_profile(case)),
            if cfg.count_format_errors { t.n_err } else { t.n_tool_err },
        ),
    };
    let r_out = outcome_reward(traj.predicted_class(), case.gold_class, cfg);
    let r_proc = process_reward(s_base, n_err, cfg);
    let r_hybrid = match scheme {
        RewardScheme::OutcomeOnly => r_out,
        RewardScheme::Hybrid => hybrid_reward(r_out, r_proc, cfg),
    };
    Ok(RewardBreakdown { r_out, s_base, r_proc, n_err, r_hybrid, scheme })
}
