//! Reward components and the weighted composite.
//!
//! Every component lies in `[0, 1]` by construction. A query is a list of
//! lowercase tokens; a list that failed to parse scores zero everywhere.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::RewardConfig;
use crate::embedding::{dot, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::filter::CleanedBehaviors;
use crate::index::Index;
use crate::lexicon::{is_entity, is_generic};

/// The five reward components, in composite order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Align,
    Cov,
    Spec,
    Div,
    Struct,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Align,
        Component::Cov,
        Component::Spec,
        Component::Div,
        Component::Struct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Align => "r_align",
            Component::Cov => "r_cov",
            Component::Spec => "r_spec",
            Component::Div => "r_div",
            Component::Struct => "r_struct",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Composite weights; non-negative and summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas(pub [f64; 5]);

impl Lambdas {
    pub fn new(weights: [f64; 5]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "reward weights must be finite and non-negative, got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("reward weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform() -> Self {
        Self([0.2; 5])
    }

    pub fn from_config(c: &RewardConfig) -> Result<Self> {
        Self::new([
            c.lambda_align,
            c.lambda_cov,
            c.lambda_spec,
            c.lambda_div,
            c.lambda_struct,
        ])
    }

    /// Weights with `removed` set to zero and the rest rescaled to sum to one.
    pub fn without(&self, removed: Component) -> Result<Self> {
        let mut w = self.0;
        w[removed as usize] = 0.0;
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Config(format!("removing {removed} leaves no reward")));
        }
        w.iter_mut().for_each(|x| *x /= sum);
        Ok(Self(w))
    }

    pub fn get(&self, c: Component) -> f64 {
        self.0[c as usize]
    }
}

/// Per-list reward components plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector {
    pub r_align: f64,
    pub r_cov: f64,
    pub r_spec: f64,
    pub r_div: f64,
    pub r_struct: f64,
    pub composite: f64,
}

impl RewardVector {
    pub fn components(&self) -> [f64; 5] {
        [self.r_align, self.r_cov, self.r_spec, self.r_div, self.r_struct]
    }

    pub fn get(&self, c: Component) -> f64 {
        self.components()[c as usize]
    }

    /// Builds the vector from components and weights.
    pub fn from_components(c: [f64; 5], lambdas: &Lambdas) -> Self {
        Self {
            r_align: c[0],
            r_cov: c[1],
            r_spec: c[2],
            r_div: c[3],
            r_struct: c[4],
            composite: weighted(&c, lambdas),
        }
    }
}

fn weighted(c: &[f64; 5], l: &Lambdas) -> f64 {
    c.iter().zip(&l.0).map(|(x, w)| x * w).sum()
}

/// Weighted sum of components; rejects weights off the simplex.
pub fn composite(components: [f64; 5], lambdas: [f64; 5]) -> Result<RewardVector> {
    Ok(RewardVector::from_components(components, &Lambdas::new(lambdas)?))
}

/// Mean over queries of the mean clamped cosine of each query's top-k hits.
pub fn r_align(query_embeddings: &[Embedding], index: &Index, k: usize) -> Result<f64> {
    if query_embeddings.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in query_embeddings {
        let hits = index.query(q, k)?;
        if !hits.is_empty() {
            total += hits.iter().map(|h| h.score.max(0.0)).sum::<f64>() / hits.len() as f64;
        }
    }
    Ok((total / query_embeddings.len() as f64).clamp(0.0, 1.0))
}

/// Distinct topics attached to the informative behaviors of a cleaned set.
pub fn themes(behaviors: &CleanedBehaviors) -> Vec<usize> {
    let mut t: Vec<usize> = behaviors.events.iter().filter_map(|e| e.topic_id).collect();
    t.sort_unstable();
    t.dedup();
    t
}

/// Fraction of themes targeted by at least one query through one of the
/// theme's specific terms.
pub fn r_cov<S: AsRef<str>>(queries: &[Vec<S>], themes: &[usize], embedder: &Embedder) -> f64 {
    if themes.is_empty() || queries.is_empty() {
        return 0.0;
    }
    let covered = themes
        .iter()
        .filter(|&&theme| {
            queries
                .iter()
                .flatten()
                .any(|tok| embedder.topic_of(tok.as_ref()) == Some(theme))
        })
        .count();
    covered as f64 / themes.len() as f64
}

/// Whether a query is specific: it names a topic term or entity, and
/// such tokens are at least as many as generic ones.
pub fn is_specific<S: AsRef<str>>(query: &[S], embedder: &Embedder) -> bool {
    let (mut specific, mut generic) = (0usize, 0usize);
    for tok in query {
        let tok = tok.as_ref();
        if embedder.topic_of(tok).is_some() || is_entity(tok) {
            specific += 1;
        } else if is_generic(tok) {
            generic += 1;
        }
    }
    specific > 0 && specific >= generic
}

/// Fraction of specific queries.
pub fn r_spec<S: AsRef<str>>(queries: &[Vec<S>], embedder: &Embedder) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let n = queries.iter().filter(|q| is_specific(q, embedder)).count();
    n as f64 / queries.len() as f64
}

/// Mean pairwise cosine distance `(1 - cos) / 2`; below two queries, zero.
pub fn r_div(query_embeddings: &[Embedding]) -> f64 {
    let n = query_embeddings.len();
    if n < 2 {
        return 0.0;
    }
    let norms: Vec<f64> = query_embeddings.iter().map(Embedding::norm).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let cos = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                (dot(&query_embeddings[i].0, &query_embeddings[j].0) / (norms[i] * norms[j]))
                    .clamp(-1.0, 1.0)
            };
            total += (1.0 - cos) / 2.0;
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// One for a parsed list, zero otherwise.
pub fn r_struct<T, E>(parsed: &std::result::Result<T, E>) -> f64 {
    if parsed.is_ok() {
        1.0
    } else {
        0.0
    }
}

/// Scores query lists against a fixed embedder and index.
#[derive(Debug, Clone, Copy)]
pub struct RewardModel<'a> {
    pub embedder: &'a Embedder,
    pub index: &'a Index,
    pub lambdas: Lambdas,
    pub top_k: usize,
}

impl<'a> RewardModel<'a> {
    pub fn new(embedder: &'a Embedder, index: &'a Index, config: &RewardConfig) -> Result<Self> {
        Ok(Self {
            embedder,
            index,
            lambdas: Lambdas::from_config(config)?,
            top_k: config.top_k,
        })
    }

    /// Rewards for a parsed list, or all zeros when parsing failed.
    pub fn score<S: AsRef<str>>(&self, queries: Option<&[Vec<S>]>, themes: &[usize]) -> Result<RewardVector> {
        let Some(queries) = queries else {
            return Ok(RewardVector::default());
        };
        let embs: Vec<Embedding> = queries
            .iter()
            .map(|q| self.embedder.embed_tokens(q))
            .collect();
        let c = [
            r_align(&embs, self.index, self.top_k)?,
            r_cov(queries, themes, self.embedder),
            r_spec(queries, self.embedder),
            r_div(&embs),
            1.0,
        ];
        Ok(RewardVector::from_components(c, &self.lambdas))
    }
}
