//! Teacher-to-student distillation.
//!
//! On-policy mode samples lists from the student and minimizes the exact
//! reverse KL `KL(student || teacher)` at every visited position; the
//! sampled prefix is treated as fixed for the gradient. Supervised mode
//! samples from the teacher and minimizes the student's negative
//! log-likelihood of those tokens. Mode `none` trains the student with
//! GRPO and never sees the teacher.

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DistillConfig, DistillMode, GrpoConfig};
use crate::error::{Error, Result};
use crate::grpo::{self, check_compatible};
use crate::optim::Adam;
use crate::policy::{
    self, add_loglik_dlogits, backward, forward_trace, greedy, DecodeOptions, Gradient, PolicyParams,
    Tier,
};
use crate::rewards::Lambdas;
use crate::rng::{self, tags};
use crate::services::{PreparedUser, Services};

/// One distillation step's metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistillMetrics {
    pub step: usize,
    /// Mean per-token loss: reverse KL (on-policy), NLL (supervised) or
    /// negative mean reward (none).
    pub loss: f64,
    pub tokens: usize,
}

pub const DISTILL_LOG_HEADER: &str = "step,loss,tokens";

impl DistillMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{}", self.step, self.loss, self.tokens)
    }
}

pub fn write_log(path: &Path, rows: &[DistillMetrics]) -> Result<()> {
    let mut text = String::from(DISTILL_LOG_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Exact `KL(p || q)` between two distributions over the same support.
pub fn reverse_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(f64::MIN_POSITIVE).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Reverse-KL loss summed over the positions of `tokens` and its gradient
/// with respect to the student.
pub fn reverse_kl_grad(
    student: &PolicyParams,
    teacher: &PolicyParams,
    user: &PreparedUser,
    tokens: &[usize],
) -> Result<(f64, Gradient)> {
    check_compatible(student, teacher)?;
    let ctx_s = student.context(&user.features)?;
    let ctx_t = teacher.context(&user.features)?;
    let v = student.shape().vocab_size;
    let ts = forward_trace(student, &ctx_s, tokens);
    let tt = forward_trace(teacher, &ctx_t, tokens);
    let mut dlogits = vec![0.0; tokens.len() * v];
    let mut loss = 0.0;
    for t in 0..tokens.len() {
        let p = &ts.probs[t * v..(t + 1) * v];
        let q = &tt.probs[t * v..(t + 1) * v];
        let kl = reverse_kl(p, q);
        loss += kl;
        // d KL / d logits = p * (log p - log q - KL)
        let dl = &mut dlogits[t * v..(t + 1) * v];
        for j in 0..v {
            let lp = p[j].max(f64::MIN_POSITIVE).ln();
            let lq = q[j].max(f64::MIN_POSITIVE).ln();
            dl[j] = p[j] * (lp - lq - kl);
        }
    }
    Ok((loss, backward(student, &ctx_s, &ts, &dlogits)))
}

/// Student NLL of `tokens` and the gradient of the log-likelihood.
pub fn nll_grad(student: &PolicyParams, user: &PreparedUser, tokens: &[usize]) -> Result<(f64, Gradient)> {
    let ctx = student.context(&user.features)?;
    let v = student.shape().vocab_size;
    let trace = forward_trace(student, &ctx, tokens);
    let nll: f64 = tokens
        .iter()
        .enumerate()
        .map(|(t, &y)| -trace.probs[t * v + y].max(f64::MIN_POSITIVE).ln())
        .sum();
    let mut dlogits = vec![0.0; tokens.len() * v];
    add_loglik_dlogits(&trace, tokens, &vec![1.0; tokens.len()], v, &mut dlogits);
    Ok((nll, backward(student, &ctx, &trace, &dlogits)))
}

/// Distiller state shared by the on-policy and supervised modes.
#[derive(Debug, Clone)]
pub struct Distiller {
    pub student: PolicyParams,
    pub config: DistillConfig,
    optimizer: Adam,
    step: usize,
}

impl Distiller {
    pub fn new(student: PolicyParams, teacher: &PolicyParams, config: DistillConfig) -> Result<Self> {
        check_compatible(&student, teacher)?;
        if config.samples_per_user == 0 || config.batch_users == 0 {
            return Err(Error::Config(
                "distill.samples_per_user and distill.batch_users must be >= 1".into(),
            ));
        }
        let optimizer = Adam::new(student.as_slice().len(), config.learning_rate);
        Ok(Self {
            student,
            config,
            optimizer,
            step: 0,
        })
    }

    pub fn batch_for(&self, step: usize, users: usize) -> Vec<usize> {
        let mut rng = rng::stream(self.config.seed, tags::BATCH, step as u64);
        let k = self.config.batch_users.min(users);
        let mut b = sample_indices(&mut rng, users, k).into_vec();
        b.sort_unstable();
        b
    }

    /// One reverse-KL update on student rollouts.
    pub fn onpolicy_step(
        &mut self,
        teacher: &PolicyParams,
        services: &Services,
        batch: &[usize],
    ) -> Result<DistillMetrics> {
        let student = &self.student;
        let (seed, step, k) = (self.config.seed, self.step, self.config.samples_per_user);
        let parts = batch
            .par_iter()
            .map(|&i| {
                let user = &services.users[i];
                let mut rng = rng::stream(seed, tags::DISTILL, ((step as u64) << 32) | user.user_id as u64);
                let ctx = student.context(&user.features)?;
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    let r = policy::sample(student, &ctx, DecodeOptions::training(), &mut rng);
                    let (loss, g) = reverse_kl_grad(student, teacher, user, &r.tokens)?;
                    out.push((loss, r.tokens.len(), g));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        // Minimizing the loss: ascend its negation.
        self.apply(parts.into_iter().flatten().collect(), -1.0)
    }

    /// One NLL update on teacher rollouts.
    pub fn supervised_step(
        &mut self,
        teacher: &PolicyParams,
        services: &Services,
        batch: &[usize],
    ) -> Result<DistillMetrics> {
        check_compatible(&self.student, teacher)?;
        let student = &self.student;
        let (seed, step, k) = (self.config.seed, self.step, self.config.samples_per_user);
        let parts = batch
            .par_iter()
            .map(|&i| {
                let user = &services.users[i];
                let mut rng = rng::stream(seed, tags::DISTILL, ((step as u64) << 32) | user.user_id as u64);
                let ctx = teacher.context(&user.features)?;
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    let r = policy::sample(teacher, &ctx, DecodeOptions::training(), &mut rng);
                    let (nll, g) = nll_grad(student, user, &r.tokens)?;
                    out.push((nll, r.tokens.len(), g));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        self.apply(parts.into_iter().flatten().collect(), 1.0)
    }

    fn apply(&mut self, parts: Vec<(f64, usize, Gradient)>, sign: f64) -> Result<DistillMetrics> {
        let mut grad = Gradient::zeros_like(&self.student);
        let (mut loss, mut tokens) = (0.0, 0);
        let scale = sign / parts.len().max(1) as f64;
        for (l, n, g) in &parts {
            loss += l;
            tokens += n;
            grad.add_scaled(g, scale);
        }
        if !grad.is_finite() {
            return Err(Error::Training(format!("non-finite distillation gradient at step {}", self.step)));
        }
        self.optimizer.ascend(&mut self.student, &grad);
        let m = DistillMetrics {
            step: self.step,
            loss: if tokens == 0 { 0.0 } else { loss / tokens as f64 },
            tokens,
        };
        self.step += 1;
        Ok(m)
    }
}

/// Trains `student` for `config.steps` steps in `config.mode`. Mode `none`
/// runs GRPO at the student's capacity with `grpo` and `lambdas` and
/// ignores the teacher.
pub fn distill(
    student: PolicyParams,
    teacher: Option<&PolicyParams>,
    services: &Services,
    config: &DistillConfig,
    grpo_config: &GrpoConfig,
    lambdas: Lambdas,
) -> Result<(PolicyParams, Vec<DistillMetrics>)> {
    if config.mode == DistillMode::None {
        return no_distillation(student, services, config, grpo_config, lambdas);
    }
    let teacher = teacher.ok_or_else(|| Error::Config(format!("distill mode {:?} needs a teacher", config.mode)))?;
    let mut d = Distiller::new(student, teacher, config.clone())?;
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = d.batch_for(step, services.users.len());
        let m = match config.mode {
            DistillMode::Onpolicy => d.onpolicy_step(teacher, services, &batch)?,
            DistillMode::Supervised => d.supervised_step(teacher, services, &batch)?,
            DistillMode::None => unreachable!(),
        };
        log::debug!("distill step {step}: loss {:.5}", m.loss);
        log.push(m);
    }
    Ok((d.student, log))
}

/// The control arm: GRPO at student capacity with the distillation step
/// budget.
pub fn no_distillation(
    student: PolicyParams,
    services: &Services,
    config: &DistillConfig,
    grpo_config: &GrpoConfig,
    lambdas: Lambdas,
) -> Result<(PolicyParams, Vec<DistillMetrics>)> {
    let mut g = grpo_config.clone();
    g.seed = config.seed;
    g.steps = config.steps;
    let (params, rows) = grpo::train(student, services, &g, lambdas)?;
    let log = rows
        .iter()
        .map(|m| DistillMetrics {
            step: m.step,
            loss: -m.mean_reward,
            tokens: 0,
        })
        .collect();
    Ok((params, log))
}

/// Greedy decoding throughput at N=1 on the calling thread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub tier: Tier,
    pub users: usize,
    pub seconds: f64,
    pub users_per_second: f64,
}

/// Decodes users round-robin for at least `duration`.
pub fn measure_throughput(params: &PolicyParams, users: &[PreparedUser], duration: Duration) -> Result<Throughput> {
    if duration.is_zero() {
        return Err(Error::Input("throughput duration must be positive".into()));
    }
    if users.is_empty() {
        return Err(Error::Input("throughput needs at least one user".into()));
    }
    let start = Instant::now();
    let mut done = 0usize;
    while start.elapsed() < duration {
        let user = &users[done % users.len()];
        let ctx = params.context(&user.features)?;
        std::hint::black_box(greedy(params, &ctx, true));
        done += 1;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(Throughput {
        tier: params.tier(),
        users: done,
        seconds,
        users_per_second: done as f64 / seconds,
    })
}

#[cfg(test)]
mod tests;
