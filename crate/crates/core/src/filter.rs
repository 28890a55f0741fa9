//! Behavior noise filtering.
//!
//! A rule-based oracle labels behaviors keep (1) or filter (0) following the
//! annotation rubric: navigational, login, URL-only, digit-string and
//! utility signals are noise; anything naming a topic, event or entity is
//! kept. A logistic-regression classifier over payload embeddings is trained
//! on those labels and used to produce each user's cleaned behavior set.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::config::FilterConfig;
use crate::embedding::{dot, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::lexicon::{is_generic, is_navigational, is_utility, tokenize};
use crate::rng::{self, tags};
use crate::world::{BehaviorEvent, UserRecord, World};

const URL_SUFFIXES: &[&str] = &[".com", ".net", ".org", ".io", ".co", ".gov", ".edu"];

/// Rubric label for a raw payload: 1 keeps, 0 filters.
pub fn oracle_label_text(payload: &str) -> u8 {
    let trimmed = payload.trim();
    let tokens = tokenize(trimmed);
    if tokens.is_empty() {
        return 0;
    }
    let lower = trimmed.to_lowercase();
    let url_only = !lower.contains(char::is_whitespace)
        && (lower.starts_with("http://")
            || lower.starts_with("https://")
            || lower.starts_with("www.")
            || URL_SUFFIXES.iter().any(|s| lower.ends_with(s) || lower.contains(&format!("{s}/"))));
    if url_only {
        return 0;
    }
    if tokens.iter().all(|t| t.bytes().all(|b| b.is_ascii_digit())) {
        return 0;
    }
    let login = tokens.iter().any(|t| matches!(t.as_str(), "login" | "logon" | "signin"))
        || tokens
            .windows(2)
            .any(|w| matches!((w[0].as_str(), w[1].as_str()), ("sign" | "log", "in")));
    if login {
        return 0;
    }
    if tokens
        .iter()
        .all(|t| is_navigational(t) || is_utility(t) || is_generic(t))
    {
        return 0;
    }
    1
}

pub fn oracle_label(event: &BehaviorEvent) -> u8 {
    oracle_label_text(&event.payload)
}

/// Logistic keep-classifier over payload embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl FilterModel {
    /// Model that keeps (`true`) or drops (`false`) everything.
    pub fn constant(dim: usize, keep: bool) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: if keep { 50.0 } else { -50.0 },
            threshold: 0.5,
        }
    }

    pub fn score(&self, x: &Embedding) -> f64 {
        sigmoid(dot(&self.weights, x.as_slice()) + self.bias)
    }

    pub fn keeps(&self, x: &Embedding) -> bool {
        self.score(x) >= self.threshold
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("# behavior filter model v1\n");
        let _ = writeln!(s, "threshold {}", self.threshold);
        let _ = writeln!(s, "bias {}", self.bias);
        let _ = writeln!(s, "dim {}", self.weights.len());
        for w in &self.weights {
            let _ = writeln!(s, "{w}");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, m: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m.to_string(),
        };
        let mut threshold = None;
        let mut bias = None;
        let mut dim = None;
        let mut weights = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()));
            match line.split_once(' ') {
                Some(("threshold", v)) => threshold = Some(num(v)?),
                Some(("bias", v)) => bias = Some(num(v)?),
                Some(("dim", v)) => {
                    dim = Some(v.parse::<usize>().map_err(|e| bad(i + 1, &e.to_string()))?)
                }
                Some(_) => return Err(bad(i + 1, "unexpected key")),
                None => weights.push(num(line)?),
            }
        }
        let dim = dim.ok_or_else(|| bad(0, "missing dim"))?;
        if weights.len() != dim {
            return Err(bad(0, &format!("expected {dim} weights, found {}", weights.len())));
        }
        let model = FilterModel {
            weights,
            bias: bias.ok_or_else(|| bad(0, "missing bias"))?,
            threshold: threshold.ok_or_else(|| bad(0, "missing threshold"))?,
        };
        if !model.weights.iter().chain([&model.bias]).all(|w| w.is_finite()) {
            return Err(bad(0, "non-finite weight"));
        }
        Ok(model)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Held-out quality of a trained filter, measured against oracle labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterReport {
    pub train_size: usize,
    pub validation_size: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Confusion-based quality of `model` on labeled embeddings, treating
/// "keep" as the positive class.
pub fn evaluate_filter(model: &FilterModel, data: &[(Embedding, u8)]) -> FilterReport {
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (x, y) in data {
        match (model.keeps(x), *y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    FilterReport {
        train_size: 0,
        validation_size: data.len(),
        accuracy: ratio(tp + tn, data.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    }
}

/// Full-batch gradient descent on the logistic loss.
pub fn fit_logistic(
    data: &[(Embedding, u8)],
    config: &FilterConfig,
) -> Result<FilterModel> {
    let dim = data
        .first()
        .map(|(x, _)| x.dim())
        .ok_or_else(|| Error::Training("no training data".into()))?;
    let positives = data.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::Training(
            "training labels are all one class; cannot fit a classifier".into(),
        ));
    }
    let n = data.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut grad = vec![0.0; dim];
    for _ in 0..config.epochs.max(1) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, y) in data {
            let err = sigmoid(dot(&w, x.as_slice()) + b) - f64::from(*y);
            for (g, xi) in grad.iter_mut().zip(x.as_slice()) {
                *g += err * xi;
            }
            gb += err;
        }
        let norm = (dot(&grad, &grad) + gb * gb).sqrt() / n;
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= config.learning_rate * g / n;
        }
        b -= config.learning_rate * gb / n;
        if norm < 1e-7 {
            break;
        }
    }
    if !w.iter().chain([&b]).all(|v| v.is_finite()) {
        return Err(Error::Training("filter weights diverged".into()));
    }
    Ok(FilterModel {
        weights: w,
        bias: b,
        threshold: config.threshold,
    })
}

/// Labels a sample of the world's behaviors with the oracle, fits the
/// classifier on `1 - split` of them and reports accuracy on the rest.
pub fn train_filter(
    world: &World,
    embedder: &Embedder,
    config: &FilterConfig,
    seed: u64,
) -> Result<(FilterModel, FilterReport)> {
    if !(config.split > 0.0 && config.split < 1.0) {
        return Err(Error::Config(format!(
            "filter split must lie in (0, 1) to leave both training and validation data (got {})",
            config.split
        )));
    }
    let mut events: Vec<&BehaviorEvent> =
        world.users.iter().flat_map(|u| &u.behaviors).collect();
    let mut rng = rng::stream(seed, tags::FILTER, 0);
    events.shuffle(&mut rng);
    events.truncate(config.samples.max(1));
    if events.len() < 100 {
        return Err(Error::Training(format!(
            "need at least 100 labeled behaviors, world has {}",
            events.len()
        )));
    }
    let labeled: Vec<(Embedding, u8)> = events
        .iter()
        .map(|e| Ok((embedder.embed(&e.payload)?, oracle_label(e))))
        .collect::<Result<_>>()?;
    let n_val = ((labeled.len() as f64) * config.split).round() as usize;
    let n_val = n_val.clamp(1, labeled.len() - 1);
    let (val, train) = labeled.split_at(n_val);
    let model = fit_logistic(train, config)?;
    let mut report = evaluate_filter(&model, val);
    report.train_size = train.len();
    Ok((model, report))
}

/// A user's behaviors that passed the filter, in original order.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanedBehaviors {
    pub events: Vec<BehaviorEvent>,
    pub embeddings: Vec<Embedding>,
}

impl CleanedBehaviors {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Keeps behaviors the model accepts; when it accepts none, keeps the
/// single highest-scoring behavior so the result is never empty (as long
/// as the user has any behavior at all).
pub fn clean(user: &UserRecord, model: &FilterModel, embedder: &Embedder) -> CleanedBehaviors {
    let mut scored: Vec<(usize, f64, Embedding)> = Vec::with_capacity(user.behaviors.len());
    for (i, b) in user.behaviors.iter().enumerate() {
        if let Ok(x) = embedder.embed(&b.payload) {
            scored.push((i, model.score(&x), x));
        }
    }
    let mut kept: Vec<(usize, Embedding)> = scored
        .iter()
        .filter(|(_, s, _)| *s >= model.threshold)
        .map(|(i, _, x)| (*i, x.clone()))
        .collect();
    if kept.is_empty() {
        if let Some((i, _, x)) = scored
            .iter()
            .fold(None::<&(usize, f64, Embedding)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
        {
            kept.push((*i, x.clone()));
        }
    }
    let (events, embeddings) = kept
        .into_iter()
        .map(|(i, x)| (user.behaviors[i].clone(), x))
        .unzip();
    CleanedBehaviors { events, embeddings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::world::{generate_world, Domain};

    #[test]
    fn rubric_examples() {
        for keep in [
            "Ukraine Russia conflict latest updates",
            "NVIDIA earnings report Q4",
            "electric vehicle battery technology",
            "US Federal Reserve interest rate decision",
        ] {
            assert_eq!(oracle_label_text(keep), 1, "{keep}");
        }
        for drop in [
            "google",
            "youtube",
            "bank login",
            "facebook sign in",
            "www.amazon.com",
            "weather",
            "weather today",
            "bank account login",
            "83920174",
            "https://www.netflix.com/home",
        ] {
            assert_eq!(oracle_label_text(drop), 0, "{drop}");
        }
    }

    fn event(payload: &str) -> BehaviorEvent {
        BehaviorEvent {
            user_id: 0,
            domain: Domain::Search,
            payload: payload.into(),
            topic_id: None,
            is_noise: false,
        }
    }

    fn user(payloads: &[&str]) -> UserRecord {
        UserRecord {
            user_id: 0,
            latent_topics: vec![0],
            behaviors: payloads.iter().map(|p| event(p)).collect(),
            heldout_clicks: vec![0],
        }
    }

    #[test]
    fn accept_all_keeps_everything() {
        let e = Embedder::hashing(16);
        let u = user(&["nvidia chips", "google", "rates"]);
        let c = clean(&u, &FilterModel::constant(16, true), &e);
        assert_eq!(c.events, u.behaviors);
    }

    #[test]
    fn reject_all_keeps_best_single() {
        let e = Embedder::hashing(16);
        let u = user(&["nvidia chips", "google", "rates"]);
        let mut m = FilterModel::constant(16, false);
        // make the second behavior the highest scoring
        let x = e.embed("google").unwrap();
        m.weights = x.0.iter().map(|v| v * 0.1).collect();
        let c = clean(&u, &m, &e);
        assert_eq!(c.len(), 1);
        assert_eq!(c.events[0].payload, "google");
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let mut data = Vec::new();
        for i in 0..200 {
            let y = (i % 2) as u8;
            let mut v = vec![0.0; 4];
            v[0] = if y == 1 { 1.0 } else { -1.0 };
            v[1 + i % 3] = 0.3;
            data.push((Embedding(v), y));
        }
        let cfg = FilterConfig {
            epochs: 300,
            learning_rate: 2.0,
            ..FilterConfig::default()
        };
        let m = fit_logistic(&data[..150], &cfg).unwrap();
        assert_eq!(evaluate_filter(&m, &data[150..]).accuracy, 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        let data: Vec<_> = (0..120).map(|_| (Embedding(vec![1.0, 0.0]), 1u8)).collect();
        assert!(matches!(
            fit_logistic(&data, &FilterConfig::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn zero_split_is_an_error() {
        let cfg = WorldConfig {
            topics: 4,
            articles: 40,
            users: 5,
            embed_dim: 16,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg, 1).unwrap();
        let e = w.embedder(1.0).unwrap();
        let fc = FilterConfig {
            split: 0.0,
            ..FilterConfig::default()
        };
        assert!(train_filter(&w, &e, &fc, 1).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = FilterModel {
            weights: vec![0.25, -1.5e-3, 3.0],
            bias: -0.75,
            threshold: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("filter.txt");
        m.save(&p).unwrap();
        assert_eq!(FilterModel::load(&p).unwrap(), m);
    }
}
