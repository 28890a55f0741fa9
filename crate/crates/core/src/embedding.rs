//! Deterministic hashed text embeddings.
//!
//! Text is tokenized (lowercase alphanumeric runs, digit-only runs collapse
//! to one shape token), unigrams and bigrams are feature-hashed into `dim`
//! signed buckets, and the result is L2-normalized. Tokens naming a topic
//! term then pull the vector toward that topic's anchor by `alpha` before a
//! final normalization, so lexical overlap and topical meaning agree with
//! the synthetic world.
//!
//! Hash: FNV-1a 64 over `seed || bytes`, finalized with SplitMix64. Bucket is
//! `h % dim`, sign is bit 63.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::tokenize;
use crate::rng::mix64;

const HASH_SEED: u64 = 0x51_7cc1_b727_220a_95;
const BIGRAM_WEIGHT: f64 = 0.5;
const NUMBER_TOKEN: &str = "<num>";

/// FNV-1a 64 with a seed folded into the offset basis.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn feature_hash(feature: &str) -> u64 {
    mix64(fnv1a64(HASH_SEED, feature.as_bytes()))
}

/// A vector of `dim` reals; unit norm when produced by [`Embedder::embed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Scales `v` to unit norm in place; zero vectors are left untouched.
pub fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Cosine similarity. Symmetric by construction; zero vectors give 0.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!(
            "cosine of vectors with dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    // Multiplying the norms before dividing keeps the expression symmetric.
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Hashing embedder, optionally aware of topic anchors.
#[derive(Debug, Clone)]
pub struct Embedder {
    dim: usize,
    alpha: f64,
    term_topic: HashMap<String, usize>,
    anchors: Vec<Vec<f64>>,
}

impl Embedder {
    /// Pure hashing embedder with no topic knowledge.
    pub fn hashing(dim: usize) -> Self {
        Self {
            dim,
            alpha: 0.0,
            term_topic: HashMap::new(),
            anchors: Vec::new(),
        }
    }

    /// Embedder that adds `alpha * anchor` for every topic term in the text.
    /// `topics` yields `(terms, anchor)` per topic, in topic-id order.
    pub fn with_topics<'a, I>(dim: usize, alpha: f64, topics: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [String], &'a [f64])>,
    {
        let mut term_topic = HashMap::new();
        let mut anchors = Vec::new();
        for (id, (terms, anchor)) in topics.into_iter().enumerate() {
            if anchor.len() != dim {
                return Err(Error::Config(format!(
                    "anchor dimension {} differs from embedding dimension {dim}",
                    anchor.len()
                )));
            }
            for term in terms {
                term_topic.insert(term.to_lowercase(), id);
            }
            anchors.push(anchor.to_vec());
        }
        Ok(Self {
            dim,
            alpha,
            term_topic,
            anchors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Topic id of a term, if it is a topic-specific term.
    pub fn topic_of(&self, token: &str) -> Option<usize> {
        self.term_topic.get(token).copied()
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Input(format!("cannot embed empty text {text:?}")));
        }
        Ok(self.embed_tokens(&tokens))
    }

    /// Embeds an already tokenized, non-empty token list.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Embedding {
        let mut v = vec![0.0; self.dim];
        let shaped: Vec<&str> = tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                if t.bytes().all(|b| b.is_ascii_digit()) {
                    NUMBER_TOKEN
                } else {
                    t
                }
            })
            .collect();
        let mut add = |feature: &str, weight: f64| {
            let h = feature_hash(feature);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign * weight;
        };
        for t in &shaped {
            add(t, 1.0);
        }
        for pair in shaped.windows(2) {
            add(&format!("{}\u{1f}{}", pair[0], pair[1]), BIGRAM_WEIGHT);
        }
        if dot(&v, &v) == 0.0 {
            // every feature cancelled; fall back to a single signed bucket
            let h = feature_hash(&shaped.join(" "));
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        normalize(&mut v);
        if self.alpha != 0.0 {
            for t in &shaped {
                if let Some(&topic) = self.term_topic.get(*t) {
                    for (x, a) in v.iter_mut().zip(&self.anchors[topic]) {
                        *x += self.alpha * a;
                    }
                }
            }
            normalize(&mut v);
        }
        Embedding(v)
    }
}
