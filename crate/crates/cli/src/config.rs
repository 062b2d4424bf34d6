//! Flat TOML run configuration.
//!
//! Keys mirror the training and reward config field names. The reward clip
//! bounds are spelled `reward_clip_low` / `reward_clip_high` because the
//! training config already owns `clip_low` / `clip_high`.

use std::path::Path;

use gdv_core::reward::{RewardConfig, RewardScheme};
use gdv_core::TrainConfig64;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub group_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clip_low: Option<f64>,
    pub clip_high: Option<f64>,
    pub epochs: Option<usize>,
    pub temperature: Option<f64>,
    pub adv_delta: Option<f64>,
    pub scheme: Option<RewardScheme>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub eval_rollouts: Option<usize>,
    pub eval_every: Option<usize>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub reward_clip_low: Option<f64>,
    pub reward_clip_high: Option<f64>,
    pub count_format_errors: Option<bool>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn reward(&self) -> RewardConfig<f64> {
        let d = RewardConfig::default();
        RewardConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            sigma: self.sigma.unwrap_or(d.sigma),
            gamma: self.gamma.unwrap_or(d.gamma),
            lambda: self.lambda.unwrap_or(d.lambda),
            beta: self.beta.unwrap_or(d.beta),
            clip_low: self.reward_clip_low.unwrap_or(d.clip_low),
            clip_high: self.reward_clip_high.unwrap_or(d.clip_high),
            count_format_errors: self.count_format_errors.unwrap_or(d.count_format_errors),
        }
    }

    pub fn validated_reward(&self) -> Result<RewardConfig<f64>, CliError> {
        let r = self.reward();
        r.validate().map_err(|e| CliError::usage(format!("config: {e}")))?;
        Ok(r)
    }

    pub fn train(&self) -> TrainConfig64 {
        let d = TrainConfig64::default();
        TrainConfig64 {
            group_size: self.group_size.unwrap_or(d.group_size),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            minibatch_size: self.minibatch_size.unwrap_or(d.minibatch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            clip_low: self.clip_low.unwrap_or(d.clip_low),
            clip_high: self.clip_high.unwrap_or(d.clip_high),
            epochs: self.epochs.unwrap_or(d.epochs),
            temperature: self.temperature.unwrap_or(d.temperature),
            adv_delta: self.adv_delta.unwrap_or(d.adv_delta),
            scheme: self.scheme.unwrap_or(d.scheme),
            seed: self.seed.unwrap_or(d.seed),
            max_steps: self.max_steps.or(d.max_steps),
            eval_rollouts: self.eval_rollouts.unwrap_or(d.eval_rollouts),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            reward: self.reward(),
        }
    }
}
