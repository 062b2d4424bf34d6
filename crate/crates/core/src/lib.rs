//! Process-supervised multi-agent curation of gene-disease validity: the
//! evidence schema, case corpora, supervisor and single-agent episodes,
//! sub-agent backends, rewards, metrics and a GRPO trainer for a linear
//! supervisor policy.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod backends;
pub mod cases;
pub mod domain;
pub mod grpo;
pub mod metrics;
pub mod orchestration;
pub mod policies;
pub mod reward;
pub mod scalar;

pub use scalar::Scalar;

pub type RewardConfig64 = reward::RewardConfig<f64>;
pub type RewardConfig32 = reward::RewardConfig<f32>;
pub type RewardBreakdown64 = reward::RewardBreakdown<f64>;
pub type RewardBreakdown32 = reward::RewardBreakdown<f32>;
pub type Policy64 = grpo::ParametricSupervisorPolicy<f64>;
pub type Policy32 = grpo::ParametricSupervisorPolicy<f32>;
pub type TrainConfig64 = grpo::TrainConfig<f64>;
pub type TrainConfig32 = grpo::TrainConfig<f32>;
pub type GroupSample64 = grpo::GroupSample<f64>;
pub type Checkpoint64 = grpo::Checkpoint<f64>;
