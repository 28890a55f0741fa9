//! Dr.GRPO trainer.
//!
//! For each user in a batch, `G` lists are sampled from the old policy and
//! scored; advantages are rewards minus the group mean (no std division).
//! The objective per list is the clipped surrogate summed over tokens (no
//! length normalization) minus `beta` times the exact KL to the reference
//! policy averaged over the list's positions, with weight `1/G` per list.

use std::io::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GrpoConfig, RatioMode};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::policy::{
    self, backward, forward_trace, ContextVector, DecodeOptions, Gradient,
    PolicyParams, Rollout,
};
use crate::rewards::{Lambdas, RewardModel, RewardVector};
use crate::rng::{self, tags};
use crate::services::{PreparedUser, Services};

/// Group-relative advantages: rewards minus their mean.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Input(format!(
            "a group needs at least 2 rollouts, got {}",
            rewards.len()
        )));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Surrogate value of one rollout and the per-token weights its gradient
/// puts on `grad log pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub value: f64,
    pub weights: Vec<f64>,
    /// Terms whose gradient the clip removed.
    pub clipped: usize,
    /// Terms in total: tokens in per-token mode, one in per-sequence mode.
    pub terms: usize,
}

/// One clipped term `min(rho A, clip(rho, 1-eps, 1+eps) A)`; returns the
/// value and whether the unclipped branch is active.
pub fn clipped_term(rho: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = rho * adv;
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

pub fn surrogate(logp_new: &[f64], logp_old: &[f64], adv: f64, eps: f64, mode: RatioMode) -> Surrogate {
    debug_assert_eq!(logp_new.len(), logp_old.len());
    match mode {
        RatioMode::PerToken => {
            let mut value = 0.0;
            let mut clipped = 0;
            let weights = logp_new
                .iter()
                .zip(logp_old)
                .map(|(n, o)| {
                    let rho = (n - o).exp();
                    let (v, active) = clipped_term(rho, adv, eps);
                    value += v;
                    if active {
                        rho * adv
                    } else {
                        clipped += 1;
                        0.0
                    }
                })
                .collect();
            Surrogate {
                value,
                weights,
                clipped,
                terms: logp_new.len(),
            }
        }
        RatioMode::PerSequence => {
            let rho = (logp_new.iter().sum::<f64>() - logp_old.iter().sum::<f64>()).exp();
            let (value, active) = clipped_term(rho, adv, eps);
            let w = if active { rho * adv } else { 0.0 };
            Surrogate {
                value,
                weights: vec![w; logp_new.len()],
                clipped: usize::from(!active),
                terms: 1,
            }
        }
    }
}

/// `KL(p || q)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Mean over the rollout's positions of the exact full-vocabulary
/// `KL(pi_params || pi_ref)`.
pub fn kl_to_ref(
    params: &PolicyParams,
    reference: &PolicyParams,
    features: &[f64],
    tokens: &[usize],
) -> Result<f64> {
    if tokens.is_empty() {
        return Ok(0.0);
    }
    check_compatible(params, reference)?;
    crate::policy::check_tokens(params, tokens)?;
    let v = params.shape().vocab_size;
    let tp = forward_trace(params, &params.context(features)?, tokens);
    let tq = forward_trace(reference, &reference.context(features)?, tokens);
    let total: f64 = (0..tokens.len())
        .map(|t| kl_divergence(&tp.probs[t * v..(t + 1) * v], &tq.probs[t * v..(t + 1) * v]))
        .sum();
    Ok(total / tokens.len() as f64)
}

pub(crate) fn check_compatible(a: &PolicyParams, b: &PolicyParams) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.vocab_size != sb.vocab_size
        || sa.embed_dim != sb.embed_dim
        || sa.n_queries != sb.n_queries
        || sa.max_query_len != sb.max_query_len
    {
        return Err(Error::Config(format!(
            "policies disagree on vocabulary or grammar: {sa:?} vs {sb:?}"
        )));
    }
    Ok(())
}

/// Per-step training metrics, one CSV row each.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub r_align: f64,
    pub r_cov: f64,
    pub r_spec: f64,
    pub r_div: f64,
    pub r_struct: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub valid_frac: f64,
}

pub const LOG_HEADER: &str =
    "step,mean_reward,r_align,r_cov,r_spec,r_div,r_struct,kl,clip_frac,valid_frac";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step,
            self.mean_reward,
            self.r_align,
            self.r_cov,
            self.r_spec,
            self.r_div,
            self.r_struct,
            self.kl,
            self.clip_frac,
            self.valid_frac
        )
    }
}

pub fn write_log(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Scored rollouts of one user.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub user_id: usize,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardVector>,
    pub advantages: Vec<f64>,
}

/// Samples `g` rollouts from `params` and scores them.
pub fn rollout_group(
    params: &PolicyParams,
    user: &PreparedUser,
    services: &Services,
    rewards: &RewardModel<'_>,
    g: usize,
    options: DecodeOptions,
    rng: &mut rng::Rng,
) -> Result<RolloutGroup> {
    let ctx = params.context(&user.features)?;
    let rollouts: Vec<Rollout> = (0..g).map(|_| policy::sample(params, &ctx, options, rng)).collect();
    let scores = rollouts
        .iter()
        .map(|r| score_rollout(r, user, services, rewards))
        .collect::<Result<Vec<_>>>()?;
    let adv = advantages(&scores.iter().map(|s| s.composite).collect::<Vec<_>>())?;
    Ok(RolloutGroup {
        user_id: user.user_id,
        rollouts,
        rewards: scores,
        advantages: adv,
    })
}

pub fn score_rollout(
    rollout: &Rollout,
    user: &PreparedUser,
    services: &Services,
    rewards: &RewardModel<'_>,
) -> Result<RewardVector> {
    match rollout.queries() {
        Some(list) => rewards.score(Some(&services.query_tokens(&list.queries)), &user.themes),
        None => rewards.score::<String>(None, &user.themes),
    }
}

/// Accumulated per-group quantities before averaging.
#[derive(Default)]
struct GroupStats {
    reward: RewardVector,
    kl_sum: f64,
    kl_positions: usize,
    clipped: usize,
    terms: usize,
    valid: usize,
    rollouts: usize,
}

/// Gradient of one group's objective (before the batch average) with
/// respect to `theta`, taking `group`'s log-probabilities as `θ_old`.
pub fn group_objective_gradient(
    theta: &PolicyParams,
    reference: &PolicyParams,
    user: &PreparedUser,
    group: &RolloutGroup,
    config: &GrpoConfig,
) -> Result<Gradient> {
    Ok(group_gradient(theta, reference, user, group, config)?.0)
}

/// Gradient of one group's objective with respect to `theta`.
fn group_gradient(
    theta: &PolicyParams,
    reference: &PolicyParams,
    user: &PreparedUser,
    group: &RolloutGroup,
    config: &GrpoConfig,
) -> Result<(Gradient, GroupStats)> {
    let ctx: ContextVector = theta.context(&user.features)?;
    let ctx_ref = reference.context(&user.features)?;
    let v = theta.shape().vocab_size;
    let g = group.rollouts.len() as f64;
    let mut grad = Gradient::zeros_like(theta);
    let mut stats = GroupStats::default();
    let mut logp = vec![0.0; v];
    let mut logq = vec![0.0; v];
    for (rollout, (&adv, rv)) in group.rollouts.iter().zip(group.advantages.iter().zip(&group.rewards)) {
        let tokens = &rollout.tokens;
        let trace = forward_trace(theta, &ctx, tokens);
        let ref_trace = forward_trace(reference, &ctx_ref, tokens);
        let logp_new: Vec<f64> = tokens
            .iter()
            .enumerate()
            .map(|(t, &y)| trace.probs[t * v + y].ln())
            .collect();
        let sur = surrogate(&logp_new, &rollout.logprobs, adv, config.clip_eps, config.ratio_mode);
        let mut dlogits = vec![0.0; tokens.len() * v];
        policy::add_loglik_dlogits(&trace, tokens, &sur.weights, v, &mut dlogits);
        for t in 0..tokens.len() {
            let p = &trace.probs[t * v..(t + 1) * v];
            let q = &ref_trace.probs[t * v..(t + 1) * v];
            ln_into(p, &mut logp);
            ln_into(q, &mut logq);
            let kl: f64 = p.iter().zip(logp.iter().zip(&logq)).map(|(pi, (lp, lq))| pi * (lp - lq)).sum();
            stats.kl_sum += kl.max(0.0);
            if config.kl_beta > 0.0 {
                // d KL / d logits = p * (log p - log q - KL), averaged over positions
                let c = config.kl_beta / tokens.len() as f64;
                let dl = &mut dlogits[t * v..(t + 1) * v];
                for j in 0..v {
                    dl[j] -= c * p[j] * (logp[j] - logq[j] - kl);
                }
            }
        }
        stats.kl_positions += tokens.len();
        for x in &mut dlogits {
            *x /= g;
        }
        grad.add_scaled(&backward(theta, &ctx, &trace, &dlogits), 1.0);
        stats.clipped += sur.clipped;
        stats.terms += sur.terms;
        stats.valid += usize::from(rollout.is_valid());
        stats.rollouts += 1;
        let r = &mut stats.reward;
        r.composite += rv.composite;
        r.r_align += rv.r_align;
        r.r_cov += rv.r_cov;
        r.r_spec += rv.r_spec;
        r.r_div += rv.r_div;
        r.r_struct += rv.r_struct;
    }
    Ok((grad, stats))
}

fn ln_into(p: &[f64], out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(p) {
        *o = x.max(f64::MIN_POSITIVE).ln();
    }
}

/// Trainer state: current, old and reference parameters plus optimizer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub theta: PolicyParams,
    pub theta_old: PolicyParams,
    pub reference: PolicyParams,
    pub config: GrpoConfig,
    pub lambdas: Lambdas,
    optimizer: Adam,
    step: usize,
}

impl Trainer {
    /// Starts from `init`, which also becomes the fixed reference policy.
    pub fn new(init: PolicyParams, config: GrpoConfig, lambdas: Lambdas) -> Result<Self> {
        if config.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if !(config.clip_eps > 0.0) || config.kl_beta < 0.0 || config.sync_every == 0 {
            return Err(Error::Config("clip_eps > 0, kl_beta >= 0, sync_every >= 1 required".into()));
        }
        let optimizer = Adam::new(init.as_slice().len(), config.learning_rate);
        Ok(Self {
            theta_old: init.clone(),
            reference: init.clone(),
            theta: init,
            config,
            lambdas,
            optimizer,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Users drawn for step `step`.
    pub fn batch_for(&self, step: usize, n_users: usize) -> Vec<usize> {
        let mut rng = rng::stream(self.config.seed, tags::BATCH, step as u64);
        let k = self.config.batch_users.clamp(1, n_users);
        let mut idx = sample_indices(&mut rng, n_users, k).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Samples, scores and applies one update for the given users.
    pub fn train_step(&mut self, services: &Services, batch: &[usize]) -> Result<StepMetrics> {
        let rewards = services.reward_model_with(self.lambdas);
        let options = DecodeOptions {
            temperature: self.config.temperature,
            grammar_mask: false,
        };
        let step = self.step;
        let cfg = &self.config;
        let (theta, theta_old, reference) = (&self.theta, &self.theta_old, &self.reference);
        let per_user = batch
            .par_iter()
            .map(|&i| {
                let user = &services.users[i];
                let mut rng = rng::stream(cfg.seed, tags::ROLLOUT, ((step as u64) << 32) | user.user_id as u64);
                let group = rollout_group(theta_old, user, services, &rewards, cfg.group_size, options, &mut rng)?;
                group_gradient(theta, reference, user, &group, cfg)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grad = Gradient::zeros_like(&self.theta);
        let mut total = GroupStats::default();
        let scale = 1.0 / batch.len().max(1) as f64;
        for (g, s) in &per_user {
            grad.add_scaled(g, scale);
            total.kl_sum += s.kl_sum;
            total.kl_positions += s.kl_positions;
            total.clipped += s.clipped;
            total.terms += s.terms;
            total.valid += s.valid;
            total.rollouts += s.rollouts;
            let r = &mut total.reward;
            r.composite += s.reward.composite;
            r.r_align += s.reward.r_align;
            r.r_cov += s.reward.r_cov;
            r.r_spec += s.reward.r_spec;
            r.r_div += s.reward.r_div;
            r.r_struct += s.reward.r_struct;
        }
        if !grad.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at step {step} (norm {}, users {batch:?})",
                grad.norm()
            )));
        }
        self.optimizer.ascend(&mut self.theta, &grad);
        if !self.theta.is_finite() {
            return Err(Error::Training(format!("parameters became non-finite at step {step}")));
        }
        self.step += 1;
        if self.step % self.config.sync_every == 0 {
            self.theta_old = self.theta.clone();
        }
        let n = total.rollouts.max(1) as f64;
        Ok(StepMetrics {
            step,
            mean_reward: total.reward.composite / n,
            r_align: total.reward.r_align / n,
            r_cov: total.reward.r_cov / n,
            r_spec: total.reward.r_spec / n,
            r_div: total.reward.r_div / n,
            r_struct: total.reward.r_struct / n,
            kl: if total.kl_positions == 0 {
                0.0
            } else {
                total.kl_sum / total.kl_positions as f64
            },
            clip_frac: if total.terms == 0 {
                0.0
            } else {
                total.clipped as f64 / total.terms as f64
            },
            valid_frac: total.valid as f64 / n,
        })
    }
}

/// Runs `config.steps` updates from `init`; returns the trained policy and
/// one metrics row per step.
pub fn train(
    init: PolicyParams,
    services: &Services,
    config: &GrpoConfig,
    lambdas: Lambdas,
) -> Result<(PolicyParams, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(init, config.clone(), lambdas)?;
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = trainer.batch_for(step, services.users.len());
        let m = trainer.train_step(services, &batch)?;
        log::debug!(
            "grpo step {step}: reward {:.4} kl {:.4} valid {:.3}",
            m.mean_reward,
            m.kl,
            m.valid_frac
        );
        log.push(m);
    }
    Ok((trainer.theta, log))
}

/// Warm-started base policy of `tier` followed by GRPO: the full teacher
/// recipe for one seed.
pub fn train_teacher(
    services: &Services,
    policy: &crate::config::PolicyConfig,
    tier: crate::policy::Tier,
    config: &GrpoConfig,
    lambdas: Lambdas,
) -> Result<(PolicyParams, Vec<StepMetrics>)> {
    let base = crate::warmup::base_policy(services, tier, policy, config.seed)?;
    train(base, services, config, lambdas)
}

#[cfg(test)]
mod tests;
