use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lexicon::{ENTITY_TERMS, GENERIC_TERMS};
use crate::world::World;

pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";

/// Output vocabulary. The last three ids are always SEP, EOS and PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from content tokens; duplicates are dropped,
    /// first occurrence wins.
    pub fn new<I, S>(content: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut ids = HashMap::new();
        for t in content
            .into_iter()
            .map(Into::into)
            .chain([SEP, EOS, PAD].map(String::from))
        {
            if !ids.contains_key(&t) {
                ids.insert(t.clone(), tokens.len());
                tokens.push(t);
            }
        }
        Self { tokens, ids }
    }

    /// Topic terms, then generic and entity terms.
    pub fn from_world(world: &World) -> Self {
        let content = world
            .topics
            .iter()
            .flat_map(|t| t.specific_terms.iter().cloned())
            .chain(GENERIC_TERMS.iter().map(|s| (*s).to_string()))
            .chain(ENTITY_TERMS.iter().map(|s| (*s).to_string()));
        Self::new(content)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sep(&self) -> usize {
        self.len() - 3
    }

    pub fn eos(&self) -> usize {
        self.len() - 2
    }

    pub fn pad(&self) -> usize {
        self.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined text of the tokens.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Encodes a list of queries as `q1 SEP q2 ... EOS`. Unknown words are
    /// skipped.
    pub fn encode_list<S: AsRef<str>>(&self, queries: &[S]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, q) in queries.iter().enumerate() {
            if i > 0 {
                out.push(self.sep());
            }
            out.extend(
                crate::lexicon::tokenize(q.as_ref())
                    .iter()
                    .filter_map(|w| self.id(w)),
            );
        }
        out.push(self.eos());
        out
    }
}

/// A parsed list of queries, each a non-empty run of content token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryList {
    pub queries: Vec<Vec<usize>>,
}

impl QueryList {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn texts(&self, vocab: &Vocab) -> Vec<String> {
        self.queries.iter().map(|q| vocab.render(q)).collect()
    }
}

/// Why a token sequence is not a well-formed query list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    NoTerminator,
    TrailingTokens,
    IllegalToken,
    EmptyQuery,
    TooLong,
    Count,
}

/// Checks the grammar `(query SEP){n-1} query EOS` with 1..=max_len tokens
/// per query.
pub fn parse_tokens(
    tokens: &[usize],
    vocab: &Vocab,
    n_queries: usize,
    max_len: usize,
) -> Result<QueryList, InvalidReason> {
    parse_ids(tokens, vocab.len(), n_queries, max_len)
}

/// Grammar check for a vocabulary of `vocab_len` ids whose last three are
/// SEP, EOS and PAD.
pub(crate) fn parse_ids(
    tokens: &[usize],
    vocab_len: usize,
    n_queries: usize,
    max_len: usize,
) -> Result<QueryList, InvalidReason> {
    let (sep, eos, pad) = (vocab_len - 3, vocab_len - 2, vocab_len - 1);
    let end = tokens
        .iter()
        .position(|&t| t == eos)
        .ok_or(InvalidReason::NoTerminator)?;
    if end + 1 != tokens.len() {
        return Err(InvalidReason::TrailingTokens);
    }
    let body = &tokens[..end];
    if body.iter().any(|&t| t == pad || t >= vocab_len) {
        return Err(InvalidReason::IllegalToken);
    }
    let queries: Vec<Vec<usize>> = body.split(|&t| t == sep).map(<[usize]>::to_vec).collect();
    if queries.len() != n_queries {
        return Err(InvalidReason::Count);
    }
    if queries.iter().any(Vec::is_empty) {
        return Err(InvalidReason::EmptyQuery);
    }
    if queries.iter().any(|q| q.len() > max_len) {
        return Err(InvalidReason::TooLong);
    }
    Ok(QueryList { queries })
}
