//! Supervised format warm-up.
//!
//! A freshly initialized policy almost never emits a parseable list, so
//! every reward is zero and the group baseline cancels all signal. Before
//! RL, the policy is fitted for a few steps to lists that echo the user's
//! own cleaned behaviors: each target query is the in-vocabulary tokens of
//! one behavior, `n` distinct behaviors per list when available. The result
//! plays the part of the pretrained base model and is the reference policy
//! for the KL term.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;

use crate::config::PolicyConfig;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::policy::{grad_weighted_loglik, Gradient, PolicyParams, PolicyShape, Tier};
use crate::rng::{self, tags, Rng};
use crate::services::{PreparedUser, Services};

/// Echo list for a user: up to `n` distinct behavior token runs joined by
/// SEP and closed by EOS; `None` when the user has no usable behavior.
pub fn echo_target(user: &PreparedUser, shape: &PolicyShape, rng: &mut Rng) -> Option<Vec<usize>> {
    let pool = &user.behavior_tokens;
    if pool.is_empty() {
        return None;
    }
    let n = shape.n_queries;
    let picks: Vec<usize> = if pool.len() >= n {
        sample_indices(rng, pool.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..pool.len())).collect()
    };
    let mut tokens = Vec::with_capacity(shape.max_tokens());
    for (i, &p) in picks.iter().enumerate() {
        if i > 0 {
            tokens.push(shape.sep());
        }
        tokens.extend(pool[p].iter().take(shape.max_query_len));
    }
    tokens.push(shape.eos());
    Some(tokens)
}

/// Fits `params` to echo lists for `config.warmup_steps` steps.
pub fn warm_start(
    mut params: PolicyParams,
    services: &Services,
    config: &PolicyConfig,
    seed: u64,
) -> Result<PolicyParams> {
    if services.users.is_empty() {
        return Err(Error::Training("warm-up needs at least one user".into()));
    }
    let shape = *params.shape();
    let mut opt = Adam::new(params.as_slice().len(), config.warmup_lr);
    for step in 0..config.warmup_steps {
        let mut rng = rng::stream(seed, tags::WARMUP, step as u64);
        let k = config.warmup_batch.clamp(1, services.users.len());
        let batch = sample_indices(&mut rng, services.users.len(), k).into_vec();
        let p = &params;
        let grads = batch
            .par_iter()
            .map(|&i| {
                let user = &services.users[i];
                let mut r = rng::stream(seed, tags::WARMUP, ((step as u64) << 32) | (1 << 31) | user.user_id as u64);
                let Some(target) = echo_target(user, &shape, &mut r) else {
                    return Ok(None);
                };
                let ctx = p.context(&user.features)?;
                grad_weighted_loglik(p, &ctx, &target, &vec![1.0; target.len()]).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = Gradient::zeros_like(&params);
        for g in grads.iter().flatten() {
            total.add_scaled(g, 1.0 / k as f64);
        }
        opt.ascend(&mut params, &total);
    }
    Ok(params)
}

/// Random initialization followed by the warm-up: the starting point of
/// every RL run and of every student.
pub fn base_policy(services: &Services, tier: Tier, config: &PolicyConfig, seed: u64) -> Result<PolicyParams> {
    let init = PolicyParams::init(services.shape(tier), seed, config.init_scale);
    warm_start(init, services, config, seed)
}
