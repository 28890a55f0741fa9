//! Capacity, best-of-N and reward-ablation sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{line_chart_svg, run_eval_with, Metrics, Series};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::grpo::train_teacher;
use crate::policy::{PolicyParams, Tier};
use crate::rewards::{Component, Lambdas};
use crate::services::Services;

/// One trained-and-evaluated configuration at one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub config: String,
    pub seed: u64,
    pub metrics: Metrics,
    pub mean_reward: f64,
}

pub const SWEEP_HEADER: &str = "sweep,config,seed,recall5,recall10,ndcg5,ndcg10,mrr,mean_reward";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.sweep, self.config, self.seed, m.recall5, m.recall10, m.ndcg5, m.ndcg10, m.mrr, self.mean_reward
        )
    }
}

fn seeds(config: &Config) -> Vec<u64> {
    (0..config.eval.seeds.max(1) as u64).map(|i| config.grpo.seed + i).collect()
}

fn eval_at(services: &Services, config: &Config, params: &PolicyParams, seed: u64, n: usize) -> Result<(Metrics, f64)> {
    let mut ec = config.eval.clone();
    ec.seed = seed;
    ec.n = n;
    let report = run_eval_with(params, services, &ec, &config.fingerprint(), &services.reward_model()?)?;
    Ok((report.aggregate, report.mean_reward))
}

fn teacher(services: &Services, config: &Config, tier: Tier, seed: u64, lambdas: Lambdas) -> Result<PolicyParams> {
    let mut g = config.grpo.clone();
    g.seed = seed;
    Ok(train_teacher(services, &config.policy, tier, &g, lambdas)?.0)
}

/// Trains and evaluates one teacher per tier and seed.
pub fn sweep_capacity(services: &Services, config: &Config, tiers: &[Tier]) -> Result<Vec<SweepRow>> {
    if tiers.is_empty() {
        return Err(Error::Config("capacity sweep needs at least one tier".into()));
    }
    let lambdas = Lambdas::from_config(&config.rewards)?;
    let mut rows = Vec::new();
    for &tier in tiers {
        for seed in seeds(config) {
            let params = teacher(services, config, tier, seed, lambdas)?;
            let (metrics, mean_reward) = eval_at(services, config, &params, seed, config.eval.n)?;
            rows.push(SweepRow {
                sweep: "capacity".into(),
                config: tier.to_string(),
                seed,
                metrics,
                mean_reward,
            });
        }
    }
    Ok(rows)
}

/// Evaluates already trained policies (one per seed) at each N.
pub fn bestofn_rows(
    services: &Services,
    config: &Config,
    trained: &[(u64, PolicyParams)],
    n_list: &[usize],
) -> Result<Vec<SweepRow>> {
    if n_list.iter().any(|&n| n == 0) || n_list.is_empty() {
        return Err(Error::Config("best-of-N sweep needs a non-empty list of N >= 1".into()));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        for (seed, params) in trained {
            let (metrics, mean_reward) = eval_at(services, config, params, *seed, n)?;
            rows.push(SweepRow {
                sweep: "bestofn".into(),
                config: n.to_string(),
                seed: *seed,
                metrics,
                mean_reward,
            });
        }
    }
    Ok(rows)
}

/// Trains the configured teacher once per seed and evaluates each N.
pub fn sweep_bestofn(services: &Services, config: &Config, n_list: &[usize]) -> Result<Vec<SweepRow>> {
    let lambdas = Lambdas::from_config(&config.rewards)?;
    let trained = seeds(config)
        .into_iter()
        .map(|seed| Ok((seed, teacher(services, config, config.policy.tier, seed, lambdas)?)))
        .collect::<Result<Vec<_>>>()?;
    bestofn_rows(services, config, &trained, n_list)
}

/// Names and weights of the six ablation configurations: the full reward
/// and each component removed with the rest renormalized.
pub fn ablation_configs(full: Lambdas) -> Result<Vec<(String, Lambdas)>> {
    let mut out = vec![("full".to_string(), full)];
    for c in Component::ALL {
        out.push((format!("without_{}", c.name()), full.without(c)?));
    }
    Ok(out)
}

/// Trains with each ablated reward and evaluates retrieval.
pub fn sweep_reward_ablation(services: &Services, config: &Config) -> Result<Vec<SweepRow>> {
    let full = Lambdas::from_config(&config.rewards)?;
    let mut rows = Vec::new();
    for (name, lambdas) in ablation_configs(full)? {
        for seed in seeds(config) {
            let params = teacher(services, config, config.policy.tier, seed, lambdas)?;
            let (metrics, mean_reward) = eval_at(services, config, &params, seed, config.eval.n)?;
            rows.push(SweepRow {
                sweep: "ablation".into(),
                config: name.clone(),
                seed,
                metrics,
                mean_reward,
            });
        }
    }
    Ok(rows)
}

/// Writes `<name>.csv` and `<name>.svg` (seed-mean Recall@10 and NDCG@10
/// per configuration, in first-appearance order) into `dir`.
pub fn write_sweep_csv(dir: &Path, name: &str, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let mut configs: Vec<&str> = Vec::new();
    for r in rows {
        if !configs.contains(&r.config.as_str()) {
            configs.push(&r.config);
        }
    }
    let mean_of = |c: &str, f: fn(&Metrics) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.config == c).map(|r| f(&r.metrics)).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let series = [
        ("Recall@10", (|m: &Metrics| m.recall10) as fn(&Metrics) -> f64),
        ("NDCG@10", |m: &Metrics| m.ndcg10),
    ]
    .into_iter()
    .map(|(label, f)| Series {
        name: label.to_string(),
        points: configs.iter().enumerate().map(|(i, c)| (i as f64, mean_of(c, f))).collect(),
    })
    .collect::<Vec<_>>();
    let ticks: Vec<(f64, String)> = configs.iter().enumerate().map(|(i, c)| (i as f64, (*c).to_string())).collect();
    let svg = line_chart_svg(&format!("{name} sweep"), "configuration", "seed mean", &series, &ticks);
    let svg_path = dir.join(format!("{name}.svg"));
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))
}
