//! Run configuration: one flat TOML file with a section per stage.
//!
//! Every key has a default; a file only needs the keys it overrides.
//! Unknown keys are rejected so typos surface as schema errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexMode;
use crate::policy::Tier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub topics: usize,
    pub articles: usize,
    pub users: usize,
    pub noise_rate: f64,
    pub embed_dim: usize,
    pub seed: u64,
    /// Per-dimension std of the gaussian noise added to article anchors.
    pub article_noise: f64,
    /// Distinct held-out clicks per user.
    pub heldout_clicks: usize,
    /// Fraction of held-out clicks drawn outside the user's topics.
    pub offtopic_rate: f64,
    /// Clicks land on the `popular_pool` most central articles of a topic.
    pub popular_pool: usize,
    /// Gamma shape of a user's topic weights; larger is more even.
    pub interest_concentration: f64,
    /// Relative frequency of users with 1, 2, 3, ... latent topics.
    pub interest_counts: Vec<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            topics: 32,
            articles: 20_000,
            users: 2_000,
            noise_rate: 0.3,
            embed_dim: 64,
            seed: 7,
            article_noise: 0.08,
            heldout_clicks: 10,
            offtopic_rate: 0.0,
            popular_pool: 10,
            interest_concentration: 1.0,
            interest_counts: vec![0.1, 0.2, 0.3, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    pub alpha: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { dim: 64, alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub mode: IndexMode,
    pub probes: usize,
    pub kmeans_iters: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            mode: IndexMode::Approximate,
            probes: 8,
            kmeans_iters: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Fraction of labeled behaviors held out for validation.
    pub split: f64,
    pub threshold: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Labeled behaviors sampled from the world for training.
    pub samples: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            split: 0.2,
            threshold: 0.5,
            epochs: 2000,
            learning_rate: 16.0,
            samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub tier: Tier,
    pub n_queries: usize,
    pub max_query_len: usize,
    pub init_scale: f64,
    /// Supervised format warm-up applied to a fresh policy before RL.
    pub warmup_steps: usize,
    pub warmup_batch: usize,
    pub warmup_lr: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            tier: Tier::Large,
            n_queries: 3,
            max_query_len: 4,
            init_scale: 0.1,
            warmup_steps: 400,
            warmup_batch: 16,
            warmup_lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_align: f64,
    pub lambda_cov: f64,
    pub lambda_spec: f64,
    pub lambda_div: f64,
    pub lambda_struct: f64,
    pub top_k: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_align: 0.6,
            lambda_cov: 0.2,
            lambda_spec: 0.1,
            lambda_div: 0.0,
            lambda_struct: 0.1,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    PerToken,
    PerSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_users: usize,
    pub seed: u64,
    pub ratio_mode: RatioMode,
    pub sync_every: usize,
    pub temperature: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            learning_rate: 6e-3,
            steps: 300,
            batch_users: 8,
            seed: 7,
            ratio_mode: RatioMode::PerToken,
            sync_every: 1,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Onpolicy,
    Supervised,
    None,
}

impl std::str::FromStr for DistillMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onpolicy" | "on-policy" => Ok(DistillMode::Onpolicy),
            "supervised" => Ok(DistillMode::Supervised),
            "none" => Ok(DistillMode::None),
            other => Err(Error::Config(format!("unknown distill mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub mode: DistillMode,
    pub student_tier: Tier,
    pub steps: usize,
    pub batch_users: usize,
    /// Student rollouts per user and step.
    pub samples_per_user: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::Onpolicy,
            student_tier: Tier::Tiny,
            steps: 1000,
            batch_users: 8,
            samples_per_user: 2,
            learning_rate: 2e-2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Best-of-N candidates per user.
    pub n: usize,
    /// Users evaluated (the lowest ids); 0 means all.
    pub users: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Seeds per configuration in sweeps.
    pub seeds: usize,
    pub tiers: Vec<Tier>,
    pub n_list: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 1,
            users: 500,
            temperature: 1.0,
            seed: 7,
            seeds: 3,
            tiers: vec![Tier::Tiny, Tier::Small, Tier::Base, Tier::Large],
            n_list: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

/// Full effective configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub world: WorldConfig,
    pub embed: EmbedConfig,
    pub index: IndexConfig,
    pub filter: FilterConfig,
    pub policy: PolicyConfig,
    pub rewards: RewardConfig,
    pub grpo: GrpoConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the seed of every stage at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.world.seed = seed;
        self.grpo.seed = seed;
        self.distill.seed = seed;
        self.eval.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.topics < 2 || w.articles < w.topics || w.users < 1 {
            return Err(Error::Config(format!(
                "world needs topics >= 2, articles >= topics, users >= 1 (got {}, {}, {})",
                w.topics, w.articles, w.users
            )));
        }
        if !(0.0..=1.0).contains(&w.noise_rate) || !(0.0..=1.0).contains(&w.offtopic_rate) {
            return Err(Error::Config("noise_rate and offtopic_rate must lie in [0, 1]".into()));
        }
        if w.embed_dim != self.embed.dim {
            return Err(Error::Config(format!(
                "world.embed_dim ({}) differs from embed.dim ({})",
                w.embed_dim, self.embed.dim
            )));
        }
        if self.embed.dim < 2 {
            return Err(Error::Config("embedding dimension must be >= 2".into()));
        }
        if self.index.probes == 0 {
            return Err(Error::Config("index.probes must be >= 1".into()));
        }
        if self.policy.n_queries == 0 || self.policy.max_query_len == 0 {
            return Err(Error::Config("n_queries and max_query_len must be >= 1".into()));
        }
        crate::rewards::Lambdas::from_config(&self.rewards)?;
        let g = &self.grpo;
        if g.group_size < 2 {
            return Err(Error::Config("grpo.group_size must be >= 2".into()));
        }
        if !(g.clip_eps > 0.0 && g.clip_eps < 1.0) {
            return Err(Error::Config("grpo.clip_eps must lie in (0, 1)".into()));
        }
        if g.kl_beta < 0.0 || g.sync_every == 0 || g.temperature <= 0.0 {
            return Err(Error::Config(
                "grpo.kl_beta >= 0, sync_every >= 1 and temperature > 0 required".into(),
            ));
        }
        if self.eval.n == 0 || self.eval.temperature <= 0.0 {
            return Err(Error::Config("eval.n >= 1 and eval.temperature > 0 required".into()));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a fingerprint of the serialized config.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", crate::embedding::fnv1a64(0, self.to_toml_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = Config::from_toml_str("[world]\nusers = 200\n[grpo]\nsteps = 5\n").unwrap();
        assert_eq!(cfg.world.users, 200);
        assert_eq!(cfg.grpo.steps, 5);
        assert_eq!(cfg.world.topics, 32);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = Config::from_toml_str("[world]\nuserz = 3\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn lambda_sum_checked() {
        let err = Config::from_toml_str("[rewards]\nlambda_align = 0.5\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }
}
