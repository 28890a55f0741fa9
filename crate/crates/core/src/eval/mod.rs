//! Retrieval evaluation, best-of-N decoding and sweeps.

mod chart;
mod sweep;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::grpo::score_rollout;
use crate::index::{hit_order, Index, SearchHit};
use crate::policy::{self, DecodeOptions, PolicyParams, Rollout};
use crate::rewards::{RewardModel, RewardVector};
use crate::rng::{self, tags};
use crate::services::{PreparedUser, Services};

pub use chart::{line_chart_svg, Series};
pub use sweep::{
    ablation_configs, bestofn_rows, sweep_bestofn, sweep_capacity, sweep_reward_ablation,
    write_sweep_csv, SweepRow, SWEEP_HEADER,
};

/// Hits retrieved per query before pooling; the deepest metric cutoff.
pub const RETRIEVE_K: usize = 10;

/// Pools per-query top-`k` hits: each article keeps its best score over
/// the queries, ranked by score descending then id ascending.
pub fn retrieve_for_user(queries: &[Embedding], index: &Index, k: usize) -> Result<Vec<SearchHit>> {
    let mut best: HashMap<usize, f64> = HashMap::new();
    for q in queries {
        for h in index.query(q, k)? {
            best.entry(h.article_id)
                .and_modify(|s| *s = s.max(h.score))
                .or_insert(h.score);
        }
    }
    let mut hits: Vec<SearchHit> = best
        .into_iter()
        .map(|(article_id, score)| SearchHit { article_id, score })
        .collect();
    hits.sort_by(hit_order);
    Ok(hits)
}

/// `|top-k ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    let hits = ranked.iter().take(k).filter(|id| rel.contains(id)).count();
    Some(hits as f64 / rel.len() as f64)
}

/// Binary-gain NDCG with the ideal ranking over `min(|relevant|, k)` items.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| rel.contains(id))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..rel.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

/// Reciprocal rank of the first relevant item, zero if none.
pub fn mrr(ranked: &[usize], relevant: &[usize]) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    Some(
        ranked
            .iter()
            .position(|id| rel.contains(id))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64),
    )
}

/// Retrieval metrics of one user or their mean over users.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub recall5: f64,
    pub recall10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub mrr: f64,
}

impl Metrics {
    pub fn score(ranked: &[usize], relevant: &[usize]) -> Option<Self> {
        Some(Self {
            recall5: recall_at_k(ranked, relevant, 5)?,
            recall10: recall_at_k(ranked, relevant, 10)?,
            ndcg5: ndcg_at_k(ranked, relevant, 5)?,
            ndcg10: ndcg_at_k(ranked, relevant, 10)?,
            mrr: mrr(ranked, relevant)?,
        })
    }

    pub fn mean<'a, I: IntoIterator<Item = &'a Metrics>>(rows: I) -> Self {
        let mut m = Metrics::default();
        let mut n = 0usize;
        for r in rows {
            m.recall5 += r.recall5;
            m.recall10 += r.recall10;
            m.ndcg5 += r.ndcg5;
            m.ndcg10 += r.ndcg10;
            m.mrr += r.mrr;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            m.recall5 /= k;
            m.recall10 /= k;
            m.ndcg5 /= k;
            m.ndcg10 /= k;
            m.mrr /= k;
        }
        m
    }
}

/// Per-user evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user_id: usize,
    pub metrics: Metrics,
    pub reward: f64,
    pub valid: bool,
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<UserRow>,
    pub aggregate: Metrics,
    pub mean_reward: f64,
    pub valid_frac: f64,
    /// Users without relevant items, left out of the aggregate.
    pub skipped: usize,
    pub fingerprint: String,
    pub seed: u64,
}

pub const REPORT_HEADER: &str = "user_id,recall5,recall10,ndcg5,ndcg10,mrr,reward,valid,queries";

impl EvalReport {
    fn from_rows(rows: Vec<UserRow>, skipped: usize, fingerprint: &str, seed: u64) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            aggregate: Metrics::mean(rows.iter().map(|r| &r.metrics)),
            mean_reward: rows.iter().map(|r| r.reward).sum::<f64>() / n,
            valid_frac: rows.iter().filter(|r| r.valid).count() as f64 / n,
            rows,
            skipped,
            fingerprint: fingerprint.to_string(),
            seed,
        }
    }

    /// Per-user rows followed by an `all` row with the aggregate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        let line = |id: &str, m: &Metrics, reward: f64, valid: f64, q: &str| {
            format!(
                "{id},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{valid},{q}\n",
                m.recall5, m.recall10, m.ndcg5, m.ndcg10, m.mrr, reward
            )
        };
        for r in &self.rows {
            let q = format!("\"{}\"", r.queries.join(" | "));
            out.push_str(&line(&r.user_id.to_string(), &r.metrics, r.reward, f64::from(u8::from(r.valid)), &q));
        }
        out.push_str(&line(
            "all",
            &self.aggregate,
            self.mean_reward,
            self.valid_frac,
            &format!("\"fingerprint={} seed={}\"", self.fingerprint, self.seed),
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Samples `n` masked lists and keeps the highest composite reward; ties
/// keep the earliest sample.
pub fn best_of_n(
    params: &PolicyParams,
    user: &PreparedUser,
    n: usize,
    services: &Services,
    rewards: &RewardModel<'_>,
    temperature: f64,
    rng: &mut rng::Rng,
) -> Result<(Rollout, RewardVector)> {
    if n == 0 {
        return Err(Error::Input("best-of-N needs N >= 1".into()));
    }
    let ctx = params.context(&user.features)?;
    let options = DecodeOptions::inference(temperature);
    let mut best: Option<(Rollout, RewardVector)> = None;
    for _ in 0..n {
        let r = policy::sample(params, &ctx, options, rng);
        let score = score_rollout(&r, user, services, rewards)?;
        if best.as_ref().map_or(true, |(_, b)| score.composite > b.composite) {
            best = Some((r, score));
        }
    }
    Ok(best.expect("n >= 1"))
}

/// Ranked article ids for a list of token queries.
pub fn rank_queries(services: &Services, queries: &[Vec<String>]) -> Result<Vec<usize>> {
    let embs: Vec<Embedding> = queries
        .iter()
        .filter(|q| !q.is_empty())
        .map(|q| services.embedder.embed_tokens(q))
        .collect();
    Ok(retrieve_for_user(&embs, &services.index, RETRIEVE_K)?
        .into_iter()
        .map(|h| h.article_id)
        .collect())
}

fn evaluate_users<F>(services: &Services, config: &EvalConfig, fingerprint: &str, generate: F) -> Result<EvalReport>
where
    F: Fn(&PreparedUser, &mut rng::Rng) -> Result<(Vec<Vec<String>>, f64, bool)> + Sync,
{
    let users = services.eval_users(config.users);
    let rows = users
        .par_iter()
        .map(|u| {
            let mut rng = rng::stream(config.seed, tags::EVAL, u.user_id as u64);
            let (queries, reward, valid) = generate(u, &mut rng)?;
            let ranked = rank_queries(services, &queries)?;
            Ok(Metrics::score(&ranked, &u.heldout).map(|metrics| UserRow {
                user_id: u.user_id,
                metrics,
                reward,
                valid,
                queries: queries.iter().map(|q| q.join(" ")).collect(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    Ok(EvalReport::from_rows(rows.into_iter().flatten().collect(), skipped, fingerprint, config.seed))
}

/// Generates a list per evaluation user with best-of-N (grammar mask on),
/// retrieves, and scores against held-out clicks.
pub fn run_eval(params: &PolicyParams, services: &Services, config: &EvalConfig, fingerprint: &str) -> Result<EvalReport> {
    let rewards = services.reward_model()?;
    run_eval_with(params, services, config, fingerprint, &rewards)
}

pub fn run_eval_with(
    params: &PolicyParams,
    services: &Services,
    config: &EvalConfig,
    fingerprint: &str,
    rewards: &RewardModel<'_>,
) -> Result<EvalReport> {
    if params.shape() != &services.shape(params.tier()) {
        return Err(Error::Config(format!(
            "checkpoint shape {:?} does not match the world's {:?}",
            params.shape(),
            services.shape(params.tier())
        )));
    }
    evaluate_users(services, config, fingerprint, |u, rng| {
        let (r, score) = best_of_n(params, u, config.n, services, rewards, config.temperature, rng)?;
        let queries = r
            .queries()
            .map(|l| services.query_tokens(&l.queries))
            .unwrap_or_default();
        Ok((queries, score.composite, r.is_valid()))
    })
}

/// Baseline that issues the user's cleaned search payloads verbatim.
pub fn eval_verbatim(services: &Services, config: &EvalConfig) -> Result<EvalReport> {
    let n = services.n_queries;
    evaluate_users(services, config, "verbatim", move |u, _| {
        Ok((u.search_queries.iter().take(n).cloned().collect(), 0.0, true))
    })
}

#[cfg(test)]
mod tests;
