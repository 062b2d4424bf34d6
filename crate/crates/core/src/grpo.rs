//! Group-relative policy optimisation of a linear supervisor policy.
//!
//! The supervisor action factorises into one Bernoulli invocation per
//! (category, article) pair and one categorical validity class conditioned on
//! the observed subtype counts. That keeps the trajectory shape (plan, one
//! batch of calls, observations, classification) while making the ratio of
//! new to old trajectory probability and its gradient exact.

use std::collections::HashMap;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::BackendError;
use crate::cases::{article_features, ArticleRecord, CaseKey, CaseRecord};
use crate::domain::{EvidenceCategory, ValidityClass, NUM_CATEGORIES};
use crate::metrics::outcome_accuracy;
use crate::orchestration::{
    run_supervisor_episode, EpisodeInput, EvidenceFinding, Observer, SupervisorPolicy, SupervisorTrajectory, ToolCall,
    Trajectory,
};
use crate::reward::{grade_trajectory, RewardBreakdown, RewardConfig, RewardScheme};
use crate::scalar::{clamp, log_sigmoid, log_softmax, sigmoid, Scalar};

/// Article features plus bias.
pub const ROUTE_DIM: usize = NUM_CATEGORIES + 1;
/// Per-category observed subtype counts plus bias.
pub const OBS_DIM: usize = NUM_CATEGORIES + 1;
pub const NUM_CLASSES: usize = 5;
pub const NUM_PARAMS: usize = NUM_CATEGORIES * ROUTE_DIM + NUM_CLASSES * OBS_DIM;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("trajectory is outside the policy's action space: {0}")]
    UnrepresentableTrajectory(String),
    #[error("{ratios} ratios but {advantages} advantages")]
    LengthMismatch { ratios: usize, advantages: usize },
    #[error("non-finite loss at step {step}, minibatch {minibatch}: {detail}")]
    NonFiniteLoss { step: usize, minibatch: usize, detail: String },
    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ParametricSupervisorPolicy<F> {
    /// Row `k`: logit weights for invoking category `k` on an article.
    pub routing_weights: [[F; ROUTE_DIM]; NUM_CATEGORIES],
    /// Row `c`: logit weights for validity rank `c`.
    pub class_weights: [[F; OBS_DIM]; NUM_CLASSES],
    pub temperature: F,
}

impl<F: Scalar> ParametricSupervisorPolicy<F> {
    /// The untrained policy: every call is a coin flip and every class equally likely.
    pub fn zeros(temperature: F) -> Self {
        ParametricSupervisorPolicy {
            routing_weights: [[F::zero(); ROUTE_DIM]; NUM_CATEGORIES],
            class_weights: [[F::zero(); OBS_DIM]; NUM_CLASSES],
            temperature,
        }
    }

    pub fn random<R: Rng + ?Sized>(temperature: F, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(temperature);
        let flat: Vec<F> = (0..NUM_PARAMS).map(|_| F::lit(rng.random_range(-scale..=scale))).collect();
        p.set_flat(&flat);
        p
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.temperature > F::zero() && self.temperature.is_finite()) {
            return Err(GrpoError::InvalidConfig("temperature must be positive and finite".into()));
        }
        if self.flat().iter().any(|w| !w.is_finite()) {
            return Err(GrpoError::InvalidConfig("policy weights must be finite".into()));
        }
        Ok(())
    }

    /// Routing rows first, then class rows, each row-major.
    pub fn flat(&self) -> Vec<F> {
        self.routing_weights.iter().flatten().chain(self.class_weights.iter().flatten()).copied().collect()
    }

    pub fn set_flat(&mut self, theta: &[F]) {
        assert_eq!(theta.len(), NUM_PARAMS, "parameter vector length");
        let (route, class) = theta.split_at(NUM_CATEGORIES * ROUTE_DIM);
        for (row, chunk) in self.routing_weights.iter_mut().zip(route.chunks(ROUTE_DIM)) {
            row.copy_from_slice(chunk);
        }
        for (row, chunk) in self.class_weights.iter_mut().zip(class.chunks(OBS_DIM)) {
            row.copy_from_slice(chunk);
        }
    }

    /// Invocation logit of `category` on an article, before temperature.
    pub fn routing_logit(&self, category: EvidenceCategory, x: &[F; ROUTE_DIM]) -> F {
        dot(&self.routing_weights[category.index()], x)
    }

    pub fn class_logits(&self, obs: &[F; OBS_DIM]) -> [F; NUM_CLASSES] {
        let mut u = [F::zero(); NUM_CLASSES];
        for (c, row) in self.class_weights.iter().enumerate() {
            u[c] = dot(row, obs);
        }
        u
    }

    fn tempered_class_logprobs(&self, obs: &[F; OBS_DIM]) -> Vec<F> {
        let t = self.temperature;
        log_softmax(&self.class_logits(obs).map(|u| u / t))
    }
}

fn dot<F: Scalar>(w: &[F], x: &[F]) -> F {
    w.iter().zip(x).map(|(&a, &b)| a * b).sum()
}

pub fn article_input<F: Scalar>(article: &ArticleRecord) -> [F; ROUTE_DIM] {
    let mut x = [F::zero(); ROUTE_DIM];
    if let Some(feats) = article_features(article) {
        for (xi, f) in x.iter_mut().zip(feats) {
            *xi = F::lit(f);
        }
    }
    x[NUM_CATEGORIES] = F::one();
    x
}

pub fn observation_input<F: Scalar>(observations: &[EvidenceFinding]) -> [F; OBS_DIM] {
    let mut counts = [0usize; NUM_CATEGORIES];
    for o in observations {
        counts[o.category.index()] += o.subtypes.len();
    }
    let mut x = [F::zero(); OBS_DIM];
    for (xi, n) in x.iter_mut().zip(counts) {
        *xi = F::from_count(n);
    }
    x[NUM_CATEGORIES] = F::one();
    x
}

/// A trajectory in the policy's own coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Action<F> {
    pub inputs: Vec<[F; ROUTE_DIM]>,
    /// `bits[j][k]`: category `k` was invoked on article `j`.
    pub bits: Vec<[bool; NUM_CATEGORIES]>,
    pub obs: [F; OBS_DIM],
    pub class: usize,
}

pub fn encode_action<F: Scalar>(traj: &SupervisorTrajectory, case: &CaseRecord) -> Result<Action<F>, GrpoError> {
    let bad = |m: String| Err(GrpoError::UnrepresentableTrajectory(m));
    if traj.case != case.key() {
        return bad(format!("trajectory for {} paired with case {}", traj.case, case.key()));
    }
    if traj.n_err > 0 {
        return bad(format!("{} malformed block(s)", traj.n_err));
    }
    let Some(class) = traj.predicted_class else {
        return bad("no classification".into());
    };
    let index: HashMap<(&str, &str), usize> =
        case.articles.iter().enumerate().map(|(j, a)| ((a.pmid.as_str(), a.pmcid.as_str()), j)).collect();
    let mut bits = vec![[false; NUM_CATEGORIES]; case.articles.len()];
    for call in &traj.calls {
        if call.gene != case.gene || call.disease != case.disease {
            return bad(format!("call names {} / {}", call.gene, call.disease));
        }
        let Some(&j) = index.get(&(call.pmid.as_str(), call.pmcid.as_str())) else {
            return bad(format!("call targets PMID {} outside the case", call.pmid));
        };
        bits[j][call.category.index()] = true;
    }
    Ok(Action {
        inputs: case.articles.iter().map(article_input).collect(),
        bits,
        obs: observation_input(&traj.observations),
        class: class.rank() as usize,
    })
}

pub fn action_logprob<F: Scalar>(policy: &ParametricSupervisorPolicy<F>, action: &Action<F>) -> F {
    let t = policy.temperature;
    let mut lp = F::zero();
    for (x, bits) in action.inputs.iter().zip(&action.bits) {
        for category in EvidenceCategory::ALL {
            let z = policy.routing_logit(category, x) / t;
            lp += if bits[category.index()] { log_sigmoid(z) } else { log_sigmoid(-z) };
        }
    }
    lp + policy.tempered_class_logprobs(&action.obs)[action.class]
}

/// Log-probability and its gradient in the `flat` layout.
pub fn action_logprob_grad<F: Scalar>(policy: &ParametricSupervisorPolicy<F>, action: &Action<F>) -> (F, Vec<F>) {
    let t = policy.temperature;
    let mut grad = vec![F::zero(); NUM_PARAMS];
    for (x, bits) in action.inputs.iter().zip(&action.bits) {
        for category in EvidenceCategory::ALL {
            let k = category.index();
            let p = sigmoid(policy.routing_logit(category, x) / t);
            let b = if bits[k] { F::one() } else { F::zero() };
            let coef = (b - p) / t;
            for (g, &xi) in grad[k * ROUTE_DIM..(k + 1) * ROUTE_DIM].iter_mut().zip(x) {
                *g += coef * xi;
            }
        }
    }
    let logp = policy.tempered_class_logprobs(&action.obs);
    let base = NUM_CATEGORIES * ROUTE_DIM;
    for (c, &lpc) in logp.iter().enumerate() {
        let target = if c == action.class { F::one() } else { F::zero() };
        let coef = (target - lpc.exp()) / t;
        for (g, &xi) in grad[base + c * OBS_DIM..base + (c + 1) * OBS_DIM].iter_mut().zip(&action.obs) {
            *g += coef * xi;
        }
    }
    (action_logprob(policy, action), grad)
}

pub fn policy_logprob<F: Scalar>(
    policy: &ParametricSupervisorPolicy<F>,
    traj: &SupervisorTrajectory,
    case: &CaseRecord,
) -> Result<F, GrpoError> {
    Ok(action_logprob(policy, &encode_action(traj, case)?))
}

fn bernoulli<F: Scalar, R: Rng + ?Sized>(p: F, rng: &mut R) -> bool {
    rng.random::<f64>() < p.as_f64()
}

fn categorical<F: Scalar, R: Rng + ?Sized>(logp: &[F], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.as_f64().exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative mass: take the likeliest
    logp.iter().enumerate().max_by(|a, b| a.1.as_f64().total_cmp(&b.1.as_f64())).map(|(i, _)| i).unwrap_or(0)
}

/// Drives the episode runner with a sampled parametric policy; emits wire text
/// with no free-form reasoning.
pub struct ParametricAgent<'a, F, R: ?Sized> {
    pub policy: &'a ParametricSupervisorPolicy<F>,
    pub rng: &'a mut R,
}

impl<F: Scalar, R: Rng + ?Sized> SupervisorPolicy for ParametricAgent<'_, F, R> {
    fn tool_turn(&mut self, input: &EpisodeInput<'_>) -> String {
        let case = input.case;
        let t = self.policy.temperature;
        let mut out = String::new();
        for article in &case.articles {
            let x = article_input::<F>(article);
            for category in EvidenceCategory::ALL {
                if bernoulli(sigmoid(self.policy.routing_logit(category, &x) / t), self.rng) {
                    let call = ToolCall {
                        category,
                        pmid: article.pmid.clone(),
                        pmcid: article.pmcid.clone(),
                        gene: case.gene.clone(),
                        disease: case.disease.clone(),
                    };
                    out.push_str(&call.to_wire());
                    out.push('\n');
                }
            }
        }
        out
    }

    fn synthesis_turn(&mut self, _input: &EpisodeInput<'_>, observations: &[EvidenceFinding]) -> String {
        let logp = self.policy.tempered_class_logprobs(&observation_input(observations));
        let rank = categorical(&logp, self.rng) as u8;
        let class = ValidityClass::from_rank(rank).expect("class index within scale");
        format!("CLASSIFICATION: {}", class.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TrainConfig<F> {
    pub group_size: usize,
    /// Cases per optimiser step.
    pub batch_size: usize,
    /// Groups per gradient update.
    pub minibatch_size: usize,
    pub learning_rate: F,
    pub clip_low: F,
    pub clip_high: F,
    pub epochs: usize,
    pub temperature: F,
    pub adv_delta: F,
    pub scheme: RewardScheme,
    pub seed: u64,
    pub max_steps: Option<usize>,
    /// Sampled rollouts per dev case when measuring dev accuracy.
    pub eval_rollouts: usize,
    /// Dev evaluation period in steps; 0 disables it.
    pub eval_every: usize,
    pub reward: RewardConfig<F>,
}

impl<F: Scalar> Default for TrainConfig<F> {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            batch_size: 16,
            minibatch_size: 8,
            learning_rate: F::lit(1e-2),
            clip_low: F::lit(0.2),
            clip_high: F::lit(0.35),
            epochs: 5,
            temperature: F::lit(0.8),
            adv_delta: F::lit(1e-6),
            scheme: RewardScheme::Hybrid,
            seed: 0,
            max_steps: None,
            eval_rollouts: 4,
            eval_every: 1,
            reward: RewardConfig::default(),
        }
    }
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let z = F::zero();
        let checks = [
            (self.group_size >= 2, "group_size must be at least 2"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.minibatch_size >= 1, "minibatch_size must be positive"),
            (self.learning_rate >= z && self.learning_rate.is_finite(), "learning_rate must be finite and >= 0"),
            (self.clip_low > z && self.clip_low < F::one(), "clip_low must lie in (0, 1)"),
            (self.clip_high > z && self.clip_high.is_finite(), "clip_high must be positive"),
            (self.temperature > z && self.temperature.is_finite(), "temperature must be positive"),
            (self.adv_delta > z, "adv_delta must be positive"),
            (self.eval_rollouts >= 1, "eval_rollouts must be positive"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(GrpoError::InvalidConfig(msg.to_string()));
        }
        self.reward.validate().map_err(GrpoError::InvalidConfig)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }
}

/// Hashes the parts into a 64-bit seed.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is long enough"))
}

fn case_rng(seed: u64, tag: &str, index: usize, key: &CaseKey) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[
        &seed.to_string(),
        tag,
        &index.to_string(),
        &key.gene,
        &key.disease,
        &key.panel,
    ]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct GroupSample<F> {
    pub case: CaseKey,
    pub trajectories: Vec<SupervisorTrajectory>,
    pub actions: Vec<Action<F>>,
    pub logprobs_old: Vec<F>,
    pub breakdowns: Vec<RewardBreakdown<F>>,
    pub rewards: Vec<F>,
    pub advantages: Vec<F>,
}

/// `(R - mean) / (std + delta)` with the population standard deviation.
pub fn group_advantages<F: Scalar>(rewards: &[F], delta: F) -> Vec<F> {
    let n = F::from_count(rewards.len());
    let mean = rewards.iter().copied().sum::<F>() / n;
    let dev: Vec<F> = rewards.iter().map(|&r| r - mean).collect();
    let std = (dev.iter().map(|&d| d * d).sum::<F>() / n).sqrt();
    dev.into_iter().map(|d| d / (std + delta)).collect()
}

/// G rollouts with ground-truth observations, graded and normalised.
pub fn sample_group<F: Scalar, R: Rng + ?Sized>(
    policy: &ParametricSupervisorPolicy<F>,
    case: &CaseRecord,
    cfg: &TrainConfig<F>,
    rng: &mut R,
) -> GroupSample<F> {
    let mut trajectories = Vec::with_capacity(cfg.group_size);
    let mut actions = Vec::with_capacity(cfg.group_size);
    let mut logprobs_old = Vec::with_capacity(cfg.group_size);
    let mut breakdowns = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let mut agent = ParametricAgent { policy, rng: &mut *rng };
        let traj = run_supervisor_episode(&mut agent, case, Observer::GroundTruth)
            .expect("ground-truth observations cannot fail");
        let action = encode_action(&traj, case).expect("own samples are representable");
        logprobs_old.push(action_logprob(policy, &action));
        let wrapped = Trajectory::Supervisor(traj);
        breakdowns.push(grade_trajectory(&wrapped, case, cfg.scheme, &cfg.reward).expect("keys match"));
        let Trajectory::Supervisor(traj) = wrapped else { unreachable!() };
        trajectories.push(traj);
        actions.push(action);
    }
    let rewards: Vec<F> = breakdowns.iter().map(RewardBreakdown::reward).collect();
    let advantages = group_advantages(&rewards, cfg.adv_delta);
    GroupSample { case: case.key(), trajectories, actions, logprobs_old, breakdowns, rewards, advantages }
}

fn surrogate_term<F: Scalar>(rho: F, adv: F, clip_low: F, clip_high: F) -> F {
    let clipped = clamp(rho, F::one() - clip_low, F::one() + clip_high);
    (rho * adv).min(clipped * adv)
}

/// `-(1/G) * sum min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)`.
pub fn clipped_surrogate_loss<F: Scalar>(
    ratios: &[F],
    advantages: &[F],
    clip_low: F,
    clip_high: F,
) -> Result<F, GrpoError> {
    if ratios.len() != advantages.len() {
        return Err(GrpoError::LengthMismatch { ratios: ratios.len(), advantages: advantages.len() });
    }
    let g = F::from_count(ratios.len());
    Ok(-ratios.iter().zip(advantages).map(|(&r, &a)| surrogate_term(r, a, clip_low, clip_high)).sum::<F>() / g)
}

/// Surrogate loss averaged over every trajectory of the given groups.
pub fn surrogate_loss<F: Scalar>(
    policy: &ParametricSupervisorPolicy<F>,
    groups: &[&GroupSample<F>],
    cfg: &TrainConfig<F>,
) -> F {
    let mut ratios = Vec::new();
    let mut advs = Vec::new();
    for g in groups {
        for ((a, &old), &adv) in g.actions.iter().zip(&g.logprobs_old).zip(&g.advantages) {
            ratios.push((action_logprob(policy, a) - old).exp());
            advs.push(adv);
        }
    }
    clipped_surrogate_loss(&ratios, &advs, cfg.clip_low, cfg.clip_high).expect("lengths match")
}

/// Loss and analytic gradient. Only terms whose unclipped branch is selected
/// by the min carry gradient.
pub fn surrogate_loss_and_grad<F: Scalar>(
    policy: &ParametricSupervisorPolicy<F>,
    groups: &[&GroupSample<F>],
    cfg: &TrainConfig<F>,
) -> (F, Vec<F>) {
    let n = F::from_count(groups.iter().map(|g| g.actions.len()).sum::<usize>().max(1));
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); NUM_PARAMS];
    for g in groups {
        for ((a, &old), &adv) in g.actions.iter().zip(&g.logprobs_old).zip(&g.advantages) {
            let (lp, glp) = action_logprob_grad(policy, a);
            let rho = (lp - old).exp();
            let unclipped = rho * adv;
            let clipped = clamp(rho, F::one() - cfg.clip_low, F::one() + cfg.clip_high) * adv;
            loss -= unclipped.min(clipped) / n;
            if unclipped <= clipped {
                let coef = adv * rho / n;
                for (gi, d) in grad.iter_mut().zip(glp) {
                    *gi -= coef * d;
                }
            }
        }
    }
    (loss, grad)
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_PARAMS: usize = 24;
/// Denominator floor of the relative error, so entries that are zero up to
/// rounding do not read as large relative errors.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Max relative error between the analytic gradient and central differences
/// on `GRADCHECK_PARAMS` randomly chosen parameters. Meaningful for `f64`.
pub fn gradient_check<F: Scalar, R: Rng + ?Sized>(
    policy: &ParametricSupervisorPolicy<F>,
    group: &GroupSample<F>,
    cfg: &TrainConfig<F>,
    rng: &mut R,
) -> f64 {
    let (_, analytic) = surrogate_loss_and_grad(policy, &[group], cfg);
    let theta = policy.flat();
    let h = F::lit(GRADCHECK_STEP);
    let mut probe = policy.clone();
    let mut worst = 0.0f64;
    for idx in sample_indices(rng, NUM_PARAMS, GRADCHECK_PARAMS) {
        let mut shifted = theta.clone();
        shifted[idx] = theta[idx] + h;
        probe.set_flat(&shifted);
        let up = surrogate_loss(&probe, &[group], cfg);
        shifted[idx] = theta[idx] - h;
        probe.set_flat(&shifted);
        let down = surrogate_loss(&probe, &[group], cfg);
        let numeric = ((up - down) / (h + h)).as_f64();
        let a = analytic[idx].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

/// Adam on the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
    beta1: F,
    beta2: F,
    eps: F,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, theta: &mut [F], grad: &[F], lr: F) {
        self.t += 1;
        let c1 = F::one() - self.beta1.powi(self.t);
        let c2 = F::one() - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (F::one() - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (F::one() - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_out: f64,
    pub mean_r_proc: f64,
    pub mean_s: f64,
    pub outcome_acc_on_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Checkpoint<F> {
    pub version: u32,
    pub config_hash: String,
    /// Optimiser steps taken when the snapshot was written.
    pub step: usize,
    pub policy: ParametricSupervisorPolicy<F>,
    pub config: TrainConfig<F>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(step: usize, policy: ParametricSupervisorPolicy<F>, config: TrainConfig<F>) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, config_hash: config.hash(), step, policy, config }
    }

    pub fn from_json(text: &str) -> Result<Self, GrpoError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| GrpoError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(GrpoError::Checkpoint(format!("version {} (expected {CHECKPOINT_VERSION})", ck.version)));
        }
        if ck.config_hash != ck.config.hash() {
            return Err(GrpoError::Checkpoint("config hash does not match the stored config".into()));
        }
        ck.policy.validate()?;
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub policy: ParametricSupervisorPolicy<F>,
    pub curves: Vec<CurveRow>,
    /// One snapshot per completed epoch.
    pub checkpoints: Vec<Checkpoint<F>>,
}

/// Sampled rollouts of `policy` over `cases`; rollout-major order.
pub fn rollout_policy<F: Scalar>(
    policy: &ParametricSupervisorPolicy<F>,
    cases: &[CaseRecord],
    rollouts: usize,
    seed: u64,
    observer: Observer<'_>,
) -> Result<Vec<Trajectory>, BackendError> {
    let mut out = Vec::with_capacity(cases.len() * rollouts);
    for r in 0..rollouts {
        for case in cases {
            let mut rng = case_rng(seed, "rollout", r, &case.key());
            let mut agent = ParametricAgent { policy, rng: &mut rng };
            out.push(Trajectory::Supervisor(run_supervisor_episode(&mut agent, case, observer)?));
        }
    }
    Ok(out)
}

fn dev_accuracy<F: Scalar>(policy: &ParametricSupervisorPolicy<F>, dev: &[CaseRecord], cfg: &TrainConfig<F>) -> f64 {
    let trajs = rollout_policy(policy, dev, cfg.eval_rollouts, cfg.seed, Observer::GroundTruth)
        .expect("ground-truth observations cannot fail");
    let by_key: HashMap<CaseKey, ValidityClass> = dev.iter().map(|c| (c.key(), c.gold_class)).collect();
    let pairs: Vec<_> = trajs.iter().map(|t| (t.predicted_class(), by_key[t.case_key()])).collect();
    outcome_accuracy(&pairs).unwrap_or(f64::NAN)
}

fn mean<F: Scalar>(xs: impl Iterator<Item = F>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x.as_f64(), n + 1));
    sum / n.max(1) as f64
}

pub fn train<F: Scalar>(
    train_cases: &[CaseRecord],
    dev_cases: &[CaseRecord],
    cfg: &TrainConfig<F>,
) -> Result<TrainOutcome<F>, GrpoError> {
    train_from(ParametricSupervisorPolicy::zeros(cfg.temperature), train_cases, dev_cases, cfg)
}

/// GRPO from a given starting policy. Groups are sampled in parallel from
/// per-(step, case) RNG streams; updates apply serially in batch order.
pub fn train_from<F: Scalar>(
    initial: ParametricSupervisorPolicy<F>,
    train_cases: &[CaseRecord],
    dev_cases: &[CaseRecord],
    cfg: &TrainConfig<F>,
) -> Result<TrainOutcome<F>, GrpoError> {
    cfg.validate()?;
    if train_cases.is_empty() {
        return Err(GrpoError::EmptyCorpus);
    }
    let mut policy = ParametricSupervisorPolicy { temperature: cfg.temperature, ..initial };
    policy.validate()?;
    let mut theta = policy.flat();
    let mut adam = Adam::new(NUM_PARAMS);
    let mut curves = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_cases.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
            &cfg.seed.to_string(),
            "epoch",
            &epoch.to_string(),
        ])));
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let groups: Vec<GroupSample<F>> = batch
                .par_iter()
                .map(|&i| {
                    let case = &train_cases[i];
                    sample_group(&policy, case, cfg, &mut case_rng(cfg.seed, "group", step, &case.key()))
                })
                .collect();
            let all = || groups.iter().flat_map(|g| g.breakdowns.iter());
            let mut row = CurveRow {
                step,
                mean_reward: mean(all().map(|b| b.reward())),
                mean_r_out: mean(all().map(|b| b.r_out)),
                mean_r_proc: mean(all().map(|b| b.r_proc)),
                mean_s: mean(all().map(|b| b.s_base)),
                outcome_acc_on_dev: None,
            };
            let refs: Vec<&GroupSample<F>> = groups.iter().collect();
            for (mb, chunk) in refs.chunks(cfg.minibatch_size).enumerate() {
                let (loss, grad) = surrogate_loss_and_grad(&policy, chunk, cfg);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(GrpoError::NonFiniteLoss {
                        step,
                        minibatch: mb,
                        detail: format!(
                            "loss {loss}, max |theta| {}",
                            theta.iter().fold(0.0, |m, w| w.as_f64().abs().max(m))
                        ),
                    });
                }
                adam.step(&mut theta, &grad, cfg.learning_rate);
                policy.set_flat(&theta);
            }
            if !dev_cases.is_empty() && cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) {
                row.outcome_acc_on_dev = Some(dev_accuracy(&policy, dev_cases, cfg));
            }
            tracing::debug!(step, mean_reward = row.mean_reward, "grpo step");
            curves.push(row);
            step += 1;
        }
        checkpoints.push(Checkpoint::new(step, policy.clone(), cfg.clone()));
    }
    Ok(TrainOutcome { policy, curves, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{generate_synthetic_corpus, CorpusConfig};

    fn corpus(n: usize) -> Vec<CaseRecord> {
        generate_synthetic_corpus(&CorpusConfig { cases: n, ..Default::default() }, 11).unwrap()
    }

    #[test]
    fn symmetric_point_logprob() {
        let mut case = corpus(1).remove(0);
        case.articles.truncate(1);
        let policy = ParametricSupervisorPolicy::<f64>::zeros(0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_group(&policy, &case, &TrainConfig { group_size: 3, ..Default::default() }, &mut rng);
        let expected = 6.0 * 0.5f64.ln() + 0.2f64.ln();
        for (t, lp) in g.trajectories.iter().zip(&g.logprobs_old) {
            assert!((lp - expected).abs() < 1e-12);
            assert_eq!(policy_logprob(&policy, t, &case).unwrap(), *lp);
        }
    }

    #[test]
    fn malformed_trajectory_is_unrepresentable() {
        let case = corpus(1).remove(0);
        let policy = ParametricSupervisorPolicy::<f64>::zeros(0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = sample_group(&policy, &case, &TrainConfig::default(), &mut rng).trajectories.remove(0);
        t.n_err = 1;
        assert!(matches!(policy_logprob(&policy, &t, &case), Err(GrpoError::UnrepresentableTrajectory(_))));
    }

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[4.0f64, 0.0, -4.0], 0.0);
        assert!((a[0] - 1.224744871391589).abs() < 1e-9);
        assert_eq!(a[1], 0.0);
        assert!((a[2] + 1.224744871391589).abs() < 1e-9);
        assert_eq!(group_advantages(&[2.0f64, 2.0, 2.0], 1e-6), vec![0.0; 3]);
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate_loss(&[1.0f64, 1.0], &[1.0, -3.0], 0.2, 0.35).unwrap(), 1.0);
        assert!((clipped_surrogate_loss(&[2.0f64], &[1.0], 0.2, 0.35).unwrap() + 1.35).abs() < 1e-15);
        assert!((clipped_surrogate_loss(&[0.5f64], &[-1.0], 0.2, 0.35).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(clipped_surrogate_loss(&[1.0f64], &[], 0.2, 0.35), Err(GrpoError::LengthMismatch { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cases = corpus(6);
        let cfg = TrainConfig::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in &cases {
            let old = ParametricSupervisorPolicy::random(0.8, 0.5, &mut rng);
            let g = sample_group(&old, case, &cfg, &mut rng);
            let mut theta = old.flat();
            for w in &mut theta {
                *w += rng.random_range(-0.05..0.05);
            }
            let mut new = old.clone();
            new.set_flat(&theta);
            assert!(gradient_check(&new, &g, &cfg, &mut rng) < 1e-5);
        }
    }

    #[test]
    fn near_zero_temperature_is_greedy() {
        let case = corpus(1).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let policy = ParametricSupervisorPolicy::random(1e-9, 1.0, &mut rng);
        let g = sample_group(&policy, &case, &TrainConfig { temperature: 1e-9, ..Default::default() }, &mut rng);
        assert!(g.trajectories.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_learning_rate_freezes_policy() {
        let cases = corpus(20);
        let cfg = TrainConfig::<f64> { learning_rate: 0.0, epochs: 1, ..Default::default() };
        let out = train(&cases, &[], &cfg).unwrap();
        assert_eq!(out.policy, ParametricSupervisorPolicy::zeros(0.8));
        assert_eq!(out.checkpoints.len(), 1);
        assert_eq!(out.curves.len(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ck = Checkpoint::new(3, ParametricSupervisorPolicy::<f64>::zeros(0.8), TrainConfig::default());
        assert_eq!(Checkpoint::from_json(&ck.to_json()).unwrap(), ck);
        let mut tampered = ck.clone();
        tampered.config.seed = 99;
        assert!(Checkpoint::<f64>::from_json(&tampered.to_json()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::<f64>::default().validate().is_ok());
        assert!(TrainConfig::<f64> { group_size: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::<f64> { clip_low: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::<f64> { adv_delta: 0.0, ..Default::default() }.validate().is_err());
    }
}
