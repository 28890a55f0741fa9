//! Next-token distributions, sampling, scoring and parsing.
//!
//! Sampling draws `u ~ U[0,1)` from the caller's ChaCha8 stream and walks
//! the cumulative distribution in token-id order.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::parse_ids;
use super::{log_softmax_into, softmax_into, ContextVector, Cursor, Forward, PolicyParams};
use super::{InvalidReason, QueryList};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Decoding controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub temperature: f64,
    /// Restrict each step to tokens that can still complete a valid list.
    pub grammar_mask: bool,
}

impl DecodeOptions {
    /// Unmasked temperature-1 sampling, the training configuration.
    pub fn training() -> Self {
        Self {
            temperature: 1.0,
            grammar_mask: false,
        }
    }

    /// Masked sampling at `temperature`, the inference configuration.
    pub fn inference(temperature: f64) -> Self {
        Self {
            temperature,
            grammar_mask: true,
        }
    }
}

/// A decoded token sequence with its per-token temperature-1 log-probs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub parsed: std::result::Result<QueryList, InvalidReason>,
}

impl Rollout {
    pub fn is_valid(&self) -> bool {
        self.parsed.is_ok()
    }

    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    pub fn queries(&self) -> Option<&QueryList> {
        self.parsed.as_ref().ok()
    }
}

pub(crate) fn check_tokens(params: &PolicyParams, tokens: &[usize]) -> Result<()> {
    let shape = params.shape();
    if let Some(&t) = tokens.iter().find(|&&t| t >= shape.vocab_size) {
        return Err(Error::Input(format!(
            "token id {t} outside vocabulary of {}",
            shape.vocab_size
        )));
    }
    if tokens.len() > shape.max_tokens() {
        return Err(Error::Input(format!(
            "sequence of {} tokens exceeds the cap of {}",
            tokens.len(),
            shape.max_tokens()
        )));
    }
    Ok(())
}

/// Softmax at `temperature` over the tokens the grammar still allows.
fn masked_softmax(logits: &[f64], temperature: f64, cursor: &Cursor, params: &PolicyParams, out: &mut [f64]) {
    let shape = params.shape();
    let masked: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(t, &l)| if cursor.allows(t, shape) { l } else { f64::NEG_INFINITY })
        .collect();
    softmax_into(&masked, temperature, out);
}

fn dist_into(f: &Forward<'_>, temperature: f64, mask: bool, params: &PolicyParams, out: &mut [f64]) {
    if mask {
        masked_softmax(&f.logits, temperature, &f.cursor, params, out);
    } else {
        softmax_into(&f.logits, temperature, out);
    }
}

/// Full next-token distribution after `prefix` at temperature 1.
pub fn next_token_dist(
    params: &PolicyParams,
    ctx: &ContextVector,
    prefix: &[usize],
    grammar_mask: bool,
) -> Result<Vec<f64>> {
    check_tokens(params, prefix)?;
    if prefix.len() >= params.shape().max_tokens() {
        return Err(Error::Input(format!(
            "prefix of {} tokens leaves no room under the cap of {}",
            prefix.len(),
            params.shape().max_tokens()
        )));
    }
    let mut f = Forward::new(params, ctx, false);
    for &t in prefix {
        f.step();
        f.push(t);
    }
    f.step();
    let mut probs = vec![0.0; f.logits.len()];
    dist_into(&f, 1.0, grammar_mask, params, &mut probs);
    Ok(probs)
}

enum Picker<'r> {
    Sample { temperature: f64, rng: &'r mut Rng },
    Greedy,
}

fn decode(params: &PolicyParams, ctx: &ContextVector, mask: bool, mut picker: Picker<'_>) -> Rollout {
    let shape = *params.shape();
    let mut f = Forward::new(params, ctx, false);
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut probs = vec![0.0; shape.vocab_size];
    let mut logp = vec![0.0; shape.vocab_size];
    while tokens.len() < shape.max_tokens() {
        f.step();
        let t = match &mut picker {
            Picker::Sample { temperature, rng } => {
                dist_into(&f, *temperature, mask, params, &mut probs);
                inverse_cdf(&probs, rng.gen::<f64>())
            }
            Picker::Greedy => {
                dist_into(&f, 1.0, mask, params, &mut probs);
                argmax(&probs)
            }
        };
        log_softmax_into(&f.logits, &mut logp);
        tokens.push(t);
        logprobs.push(logp[t]);
        f.push(t);
        if t == shape.eos() {
            break;
        }
    }
    let parsed = parse_ids(&tokens, shape.vocab_size, shape.n_queries, shape.max_query_len);
    Rollout {
        tokens,
        logprobs,
        parsed,
    }
}

/// Smallest id whose cumulative probability exceeds `u`, skipping
/// zero-probability ids.
pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (t, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = t;
        if u < acc {
            return t;
        }
    }
    last
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Ancestral sampling until EOS or the length cap.
///
/// # Panics
/// Panics if `options.temperature` is not positive.
pub fn sample(params: &PolicyParams, ctx: &ContextVector, options: DecodeOptions, rng: &mut Rng) -> Rollout {
    assert!(options.temperature > 0.0, "temperature must be positive");
    decode(
        params,
        ctx,
        options.grammar_mask,
        Picker::Sample {
            temperature: options.temperature,
            rng,
        },
    )
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy(params: &PolicyParams, ctx: &ContextVector, grammar_mask: bool) -> Rollout {
    decode(params, ctx, grammar_mask, Picker::Greedy)
}

/// Exact `sum_t log p(y_t | y_<t)` at temperature 1, unmasked.
pub fn logprob(params: &PolicyParams, ctx: &ContextVector, tokens: &[usize]) -> Result<f64> {
    check_tokens(params, tokens)?;
    let shape = params.shape();
    let mut f = Forward::new(params, ctx, false);
    let mut logp = vec![0.0; shape.vocab_size];
    let mut total = 0.0;
    for &t in tokens {
        f.step();
        log_softmax_into(&f.logits, &mut logp);
        total += logp[t];
        f.push(t);
    }
    Ok(total)
}

/// Grammar check of a decoded sequence against the policy's shape.
pub fn parse(params: &PolicyParams, tokens: &[usize]) -> std::result::Result<QueryList, InvalidReason> {
    let s = params.shape();
    parse_ids(tokens, s.vocab_size, s.n_queries, s.max_query_len)
}
