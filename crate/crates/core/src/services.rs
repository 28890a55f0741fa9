//! Shared read-only services: embedder, index, filter and per-user
//! prepared inputs, built once per world and reused by every stage.

use rayon::prelude::*;

use crate::config::{Config, RewardConfig};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::filter::{clean, train_filter, FilterModel, FilterReport};
use crate::index::{Index, IndexParams};
use crate::lexicon::tokenize;
use crate::policy::{behavior_features, PolicyShape, Tier, Vocab};
use crate::rewards::{themes, Lambdas, RewardModel};
use crate::world::{Domain, World};

/// What the policy and the rewards need to know about one user.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedUser {
    pub user_id: usize,
    /// Mean embedding of the cleaned behaviors.
    pub features: Vec<f64>,
    /// Distinct topics among the cleaned informative behaviors.
    pub themes: Vec<usize>,
    /// Cleaned search payloads, tokenized.
    pub search_queries: Vec<Vec<String>>,
    /// In-vocabulary token ids of each cleaned behavior that has any.
    pub behavior_tokens: Vec<Vec<usize>>,
    pub heldout: Vec<usize>,
}

/// Everything downstream of the world that training and evaluation share.
#[derive(Debug, Clone)]
pub struct Services {
    pub world: World,
    pub embedder: Embedder,
    pub index: Index,
    pub filter: FilterModel,
    pub filter_report: Option<FilterReport>,
    pub vocab: Vocab,
    pub users: Vec<PreparedUser>,
    pub rewards: RewardConfig,
    pub n_queries: usize,
    pub max_query_len: usize,
}

impl Services {
    /// Trains the filter and builds the index from `config`.
    pub fn build(world: World, config: &Config) -> Result<Self> {
        let embedder = world.embedder(config.embed.alpha)?;
        let (filter, report) = train_filter(&world, &embedder, &config.filter, config.world.seed)?;
        let index = Index::build(&world.articles, &index_params(config))?;
        Self::assemble(world, embedder, index, filter, Some(report), config)
    }

    /// Uses an already trained filter and built index.
    pub fn from_parts(
        world: World,
        index: Index,
        filter: FilterModel,
        config: &Config,
    ) -> Result<Self> {
        let embedder = world.embedder(config.embed.alpha)?;
        if index.dim() != embedder.dim() || filter.weights.len() != embedder.dim() {
            return Err(Error::Config(format!(
                "index ({}) or filter ({}) dimension differs from the world's {}",
                index.dim(),
                filter.weights.len(),
                embedder.dim()
            )));
        }
        Self::assemble(world, embedder, index, filter, None, config)
    }

    fn assemble(
        world: World,
        embedder: Embedder,
        index: Index,
        filter: FilterModel,
        filter_report: Option<FilterReport>,
        config: &Config,
    ) -> Result<Self> {
        let vocab = Vocab::from_world(&world);
        let users = world
            .users
            .par_iter()
            .map(|u| {
                let cleaned = clean(u, &filter, &embedder);
                let features = behavior_features(&cleaned, embedder.dim())?;
                let search_queries = cleaned
                    .events
                    .iter()
                    .filter(|e| e.domain == Domain::Search)
                    .map(|e| tokenize(&e.payload))
                    .filter(|t| !t.is_empty())
                    .collect();
                let mut behavior_tokens: Vec<Vec<usize>> = cleaned
                    .events
                    .iter()
                    .map(|e| {
                        let mut ids: Vec<usize> = tokenize(&e.payload)
                            .iter()
                            .filter_map(|w| vocab.id(w))
                            .collect();
                        ids.truncate(config.policy.max_query_len);
                        ids
                    })
                    .filter(|ids| !ids.is_empty())
                    .collect();
                behavior_tokens.sort();
                behavior_tokens.dedup();
                Ok(PreparedUser {
                    user_id: u.user_id,
                    features,
                    themes: themes(&cleaned),
                    search_queries,
                    behavior_tokens,
                    heldout: u.heldout_clicks.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            world,
            embedder,
            index,
            filter,
            filter_report,
            vocab,
            users,
            rewards: config.rewards.clone(),
            n_queries: config.policy.n_queries,
            max_query_len: config.policy.max_query_len,
        })
    }

    pub fn reward_model(&self) -> Result<RewardModel<'_>> {
        RewardModel::new(&self.embedder, &self.index, &self.rewards)
    }

    /// Reward model with explicit weights, for ablations.
    pub fn reward_model_with(&self, lambdas: Lambdas) -> RewardModel<'_> {
        RewardModel {
            embedder: &self.embedder,
            index: &self.index,
            lambdas,
            top_k: self.rewards.top_k,
        }
    }

    pub fn shape(&self, tier: Tier) -> PolicyShape {
        PolicyShape {
            tier,
            vocab_size: self.vocab.len(),
            embed_dim: self.embedder.dim(),
            n_queries: self.n_queries,
            max_query_len: self.max_query_len,
        }
    }

    /// The first `n` users (all when `n` is 0 or exceeds the population).
    pub fn eval_users(&self, n: usize) -> &[PreparedUser] {
        if n == 0 || n >= self.users.len() {
            &self.users
        } else {
            &self.users[..n]
        }
    }

    /// Rendered token strings of a parsed list.
    pub fn query_tokens(&self, queries: &[Vec<usize>]) -> Vec<Vec<String>> {
        queries
            .iter()
            .map(|q| q.iter().map(|&t| self.vocab.token(t).to_string()).collect())
            .collect()
    }
}

pub fn index_params(config: &Config) -> IndexParams {
    IndexParams {
        mode: config.index.mode,
        probes: config.index.probes,
        kmeans_iters: config.index.kmeans_iters,
        seed: config.world.seed,
    }
}
