//! Synthetic universe of topics, news articles and users with noisy
//! cross-domain behavior logs plus held-out future clicks.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::WorldConfig;
use crate::embedding::{dot, normalize, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::lexicon::{self, ENTITY_TERMS, GENERIC_TERMS, NAVIGATIONAL};
use crate::rng::{self, tags, Rng};

/// Maximum pairwise cosine between topic anchors.
pub const MAX_ANCHOR_COSINE: f64 = 0.3;
/// Per-domain cap on behaviors kept for a user.
pub const MAX_EVENTS_PER_DOMAIN: usize = 50;

/// Mean events per user for browse, search and click.
const DOMAIN_MEANS: [(Domain, f64); 3] =
    [(Domain::Browse, 37.0), (Domain::Search, 13.0), (Domain::Click, 39.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: usize,
    pub label: String,
    pub specific_terms: Vec<String>,
    pub anchor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: usize,
    pub topic_id: usize,
    pub title_tokens: Vec<String>,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Browse,
    Search,
    Click,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub user_id: usize,
    pub domain: Domain,
    pub payload: String,
    pub topic_id: Option<usize>,
    pub is_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    pub latent_topics: Vec<usize>,
    pub behaviors: Vec<BehaviorEvent>,
    pub heldout_clicks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub topics: Vec<Topic>,
    pub articles: Vec<NewsArticle>,
    pub users: Vec<UserRecord>,
}

impl World {
    pub fn embed_dim(&self) -> usize {
        self.topics.first().map_or(0, |t| t.anchor.len())
    }

    /// Topic-aware embedder for this world.
    pub fn embedder(&self, alpha: f64) -> Result<Embedder> {
        Embedder::with_topics(
            self.embed_dim(),
            alpha,
            self.topics
                .iter()
                .map(|t| (t.specific_terms.as_slice(), t.anchor.as_slice())),
        )
    }

    pub fn articles_by_topic(&self) -> Vec<Vec<usize>> {
        let mut by_topic = vec![Vec::new(); self.topics.len()];
        for a in &self.articles {
            by_topic[a.topic_id].push(a.id);
        }
        by_topic
    }

    /// Fraction of behavior events that are noise.
    pub fn noise_fraction(&self) -> f64 {
        let (noise, total) = self.users.iter().flat_map(|u| &u.behaviors).fold(
            (0usize, 0usize),
            |(n, t), b| (n + usize::from(b.is_noise), t + 1),
        );
        if total == 0 {
            0.0
        } else {
            noise as f64 / total as f64
        }
    }

    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(TOPICS_FILE), &self.topics)?;
        write_jsonl(&dir.join(ARTICLES_FILE), &self.articles)?;
        write_jsonl(&dir.join(USERS_FILE), &self.users)
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let world = World {
            topics: read_jsonl(&dir.join(TOPICS_FILE))?,
            articles: read_jsonl(&dir.join(ARTICLES_FILE))?,
            users: read_jsonl(&dir.join(USERS_FILE))?,
        };
        world.check_references()?;
        Ok(world)
    }

    fn check_references(&self) -> Result<()> {
        let t = self.topics.len();
        let bad_topic = |id: usize| id >= t;
        if self.topics.iter().enumerate().any(|(i, tp)| tp.id != i)
            || self.articles.iter().enumerate().any(|(i, a)| a.id != i || bad_topic(a.topic_id))
        {
            return Err(Error::Input("world ids are not dense or reference unknown topics".into()));
        }
        for u in &self.users {
            if u.latent_topics.iter().any(|&id| bad_topic(id))
                || u.heldout_clicks.iter().any(|&a| a >= self.articles.len())
            {
                return Err(Error::Input(format!(
                    "user {} references unknown topics or articles",
                    u.user_id
                )));
            }
        }
        Ok(())
    }
}

pub const TOPICS_FILE: &str = "topics.jsonl";
pub const ARTICLES_FILE: &str = "articles.jsonl";
pub const USERS_FILE: &str = "users.jsonl";

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Generates the world. Deterministic in `(config, seed)`; `config.seed`
/// is ignored in favor of the explicit seed.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World> {
    if config.topics < 2 || config.articles < config.topics || config.users < 1 {
        return Err(Error::Config(format!(
            "world needs topics >= 2, articles >= topics, users >= 1 (got {}, {}, {})",
            config.topics, config.articles, config.users
        )));
    }
    if !(0.0..=1.0).contains(&config.noise_rate) || config.embed_dim < 2 {
        return Err(Error::Config("noise_rate must lie in [0, 1] and embed_dim >= 2".into()));
    }
    if !(config.interest_concentration > 0.0 && config.interest_concentration.is_finite()) {
        return Err(Error::Config("interest_concentration must be positive".into()));
    }
    let counts = &config.interest_counts;
    let total: f64 = counts.iter().sum();
    if counts.is_empty() || counts.len() > 4 || counts.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
        return Err(Error::Config(
            "interest_counts needs 1 to 4 non-negative weights with a positive sum".into(),
        ));
    }
    let interest_weights: Vec<f64> = counts.iter().map(|w| w / total).collect();
    let mut rng = rng::stream(seed, tags::WORLD, 0);
    let topics = make_topics(config, &mut rng)?;
    let embedder = Embedder::with_topics(
        config.embed_dim,
        1.0,
        topics
            .iter()
            .map(|t| (t.specific_terms.as_slice(), t.anchor.as_slice())),
    )?;
    let articles = make_articles(config, &topics, &embedder, &mut rng);
    let mut world = World {
        topics,
        articles,
        users: Vec::with_capacity(config.users),
    };
    let by_topic = world.articles_by_topic();
    let popular = popular_pools(&world, &by_topic, config.popular_pool.max(1));
    for user_id in 0..config.users {
        let mut urng = rng::stream(seed, tags::USER, user_id as u64);
        let user = make_user(config, &world, &by_topic, &popular, &interest_weights, user_id, &mut urng);
        world.users.push(user);
    }
    Ok(world)
}

fn gaussian_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(&mut v);
    v
}

fn make_topics(config: &WorldConfig, rng: &mut Rng) -> Result<Vec<Topic>> {
    let mut topics: Vec<Topic> = Vec::with_capacity(config.topics);
    for id in 0..config.topics {
        let (label, terms) = match lexicon::TOPIC_CATALOG.get(id) {
            Some((label, terms)) => (
                (*label).to_string(),
                terms.iter().map(|t| (*t).to_string()).collect(),
            ),
            None => lexicon::synthetic_topic(id),
        };
        let mut anchor = None;
        for _ in 0..10_000 {
            let cand = gaussian_unit(config.embed_dim, rng);
            if topics
                .iter()
                .all(|t| dot(&t.anchor, &cand) <= MAX_ANCHOR_COSINE)
            {
                anchor = Some(cand);
                break;
            }
        }
        let anchor = anchor.ok_or_else(|| {
            Error::Config(format!(
                "cannot place {} anchors in {} dimensions with cosine <= {MAX_ANCHOR_COSINE}",
                config.topics, config.embed_dim
            ))
        })?;
        topics.push(Topic {
            id,
            label,
            specific_terms: terms,
            anchor,
        });
    }
    Ok(topics)
}

fn filler_token(rng: &mut Rng) -> &'static str {
    if rng.gen_bool(0.5) {
        GENERIC_TERMS[rng.gen_range(0..GENERIC_TERMS.len())]
    } else {
        ENTITY_TERMS[rng.gen_range(0..ENTITY_TERMS.len())]
    }
}

fn make_articles(
    config: &WorldConfig,
    topics: &[Topic],
    embedder: &Embedder,
    rng: &mut Rng,
) -> Vec<NewsArticle> {
    let term_vecs: Vec<Vec<Embedding>> = topics
        .iter()
        .map(|t| t.specific_terms.iter().map(|w| embedder.embed_tokens(&[w])).collect())
        .collect();
    (0..config.articles)
        .map(|id| {
            let topic = &topics[id % topics.len()];
            let mut v: Vec<f64> = topic
                .anchor
                .iter()
                .map(|a| {
                    let n: f64 = StandardNormal.sample(rng);
                    a + config.article_noise * n
                })
                .collect();
            normalize(&mut v);
            // the title names the topic term closest to the article's content
            let primary = term_vecs[topic.id]
                .iter()
                .enumerate()
                .map(|(i, e)| (i, dot(&e.0, &v)))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            let mut title = vec![topic.specific_terms[primary].clone()];
            if rng.gen_bool(0.5) {
                let other = rng.gen_range(0..topic.specific_terms.len());
                if other != primary {
                    title.push(topic.specific_terms[other].clone());
                }
            }
            title.push(filler_token(rng).to_string());
            NewsArticle {
                id,
                topic_id: topic.id,
                title_tokens: title,
                embedding: Embedding(v),
            }
        })
        .collect()
}

/// The most central articles of each topic, by cosine to the anchor.
fn popular_pools(world: &World, by_topic: &[Vec<usize>], size: usize) -> Vec<Vec<usize>> {
    by_topic
        .iter()
        .enumerate()
        .map(|(t, ids)| {
            let anchor = &world.topics[t].anchor;
            let mut scored: Vec<(f64, usize)> = ids
                .iter()
                .map(|&id| (dot(anchor, &world.articles[id].embedding.0), id))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(size).map(|(_, id)| id).collect()
        })
        .collect()
}

/// Navigational, login, URL, digit-string and utility payloads.
pub fn noise_payload(rng: &mut Rng) -> String {
    let nav = NAVIGATIONAL[rng.gen_range(0..NAVIGATIONAL.len())];
    match rng.gen_range(0..6) {
        0 => nav.to_string(),
        1 => {
            let action = ["login", "sign in", "account", "log in"][rng.gen_range(0..4)];
            format!("{nav} {action}")
        }
        2 => ["bank login", "bank account login", "password reset", "email login"]
            [rng.gen_range(0..4)]
        .to_string(),
        3 => match rng.gen_range(0..3) {
            0 => format!("www.{nav}.com"),
            1 => format!("https://www.{nav}.com/home"),
            _ => format!("{nav}.com"),
        },
        4 => {
            let len = rng.gen_range(5..=10);
            (0..len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
        }
        _ => ["weather", "weather today", "maps", "translate", "calculator", "tracking", "email"]
            [rng.gen_range(0..7)]
        .to_string(),
    }
}

fn pick_weighted(weights: &[f64], rng: &mut Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn make_user(
    config: &WorldConfig,
    world: &World,
    by_topic: &[Vec<usize>],
    popular: &[Vec<usize>],
    interest_weights: &[f64],
    user_id: usize,
    rng: &mut Rng,
) -> UserRecord {
    let n_topics = (1 + pick_weighted(interest_weights, rng)).min(world.topics.len());
    let mut all: Vec<usize> = (0..world.topics.len()).collect();
    all.shuffle(rng);
    let mut latent: Vec<usize> = all[..n_topics].to_vec();
    latent.sort_unstable();
    let gamma = Gamma::new(config.interest_concentration, 1.0).expect("validated concentration");
    let raw: Vec<f64> = latent.iter().map(|_| gamma.sample(rng).max(1e-12)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut behaviors = Vec::new();
    for (domain, mean) in DOMAIN_MEANS {
        let count = ((mean * rng.gen_range(0.6..1.4)).round() as usize)
            .clamp(1, MAX_EVENTS_PER_DOMAIN);
        for _ in 0..count {
            let event = if rng.gen_bool(config.noise_rate) {
                BehaviorEvent {
                    user_id,
                    domain,
                    payload: noise_payload(rng),
                    topic_id: None,
                    is_noise: true,
                }
            } else {
                let topic_id = latent[pick_weighted(&weights, rng)];
                BehaviorEvent {
                    user_id,
                    domain,
                    payload: informative_payload(domain, topic_id, world, by_topic, rng),
                    topic_id: Some(topic_id),
                    is_noise: false,
                }
            };
            behaviors.push(event);
        }
    }
    behaviors.shuffle(rng);

    let mut clicks = BTreeSet::new();
    let target = config.heldout_clicks.max(1);
    let off_topics: Vec<usize> = (0..world.topics.len()).filter(|t| !latent.contains(t)).collect();
    let mut attempts = 0;
    while clicks.len() < target && attempts < 100 * target {
        attempts += 1;
        let article = if !off_topics.is_empty() && rng.gen_bool(config.offtopic_rate) {
            let t = off_topics[rng.gen_range(0..off_topics.len())];
            by_topic[t][rng.gen_range(0..by_topic[t].len())]
        } else {
            let t = latent[pick_weighted(&weights, rng)];
            popular[t][rng.gen_range(0..popular[t].len())]
        };
        clicks.insert(article);
    }

    UserRecord {
        user_id,
        latent_topics: latent,
        behaviors,
        heldout_clicks: clicks.into_iter().collect(),
    }
}

fn informative_payload(
    domain: Domain,
    topic_id: usize,
    world: &World,
    by_topic: &[Vec<usize>],
    rng: &mut Rng,
) -> String {
    let topic = &world.topics[topic_id];
    match domain {
        Domain::Search => {
            let mut terms = topic.specific_terms.clone();
            terms.shuffle(rng);
            let mut words: Vec<String> = terms.into_iter().take(rng.gen_range(1..=2)).collect();
            if rng.gen_bool(0.5) {
                words.push(filler_token(rng).to_string());
            }
            words.join(" ")
        }
        Domain::Browse | Domain::Click => {
            let ids = &by_topic[topic_id];
            world.articles[ids[rng.gen_range(0..ids.len())]]
                .title_tokens
                .join(" ")
        }
    }
}
