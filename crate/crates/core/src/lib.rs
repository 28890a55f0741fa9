//! Reinforcement-learned query lists for interest modeling.
//!
//! A synthetic world of topics, articles and noisy users feeds a pipeline
//! of behavior filtering, a small autoregressive query-list policy trained
//! with Dr.GRPO against rubric rewards, on-policy distillation into a
//! smaller student, and retrieval evaluation over an ANN index.

pub mod config;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod filter;
pub mod grpo;
pub mod index;
pub mod lexicon;
pub mod optim;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod services;
pub mod warmup;
pub mod world;

pub use config::Config;
pub use embedding::{Embedder, Embedding};
pub use error::{Error, Result};
pub use filter::{CleanedBehaviors, FilterModel};
pub use index::{Index, IndexMode, SearchHit};
pub use policy::{PolicyParams, PolicyShape, QueryList, Rollout, Tier, Vocab};
pub use rewards::{Lambdas, RewardVector};
pub use services::Services;
pub use world::{generate_world, BehaviorEvent, Domain, NewsArticle, Topic, UserRecord, World};
