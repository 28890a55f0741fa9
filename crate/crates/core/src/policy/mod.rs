//! Autoregressive query-list policy.
//!
//! Each step feeds `token_emb[prev] + slot_emb[query index] + pos_emb[position
//! in query] + context` through one or two gated recurrent layers
//!
//! ```text
//! a = tanh(Wa x + Ua s + ba)        z = sigmoid(Wz x + Uz s + bz)
//! s' = z * s + (1 - z) * a
//! ```
//!
//! and projects the top state to vocabulary logits. The context is a learned
//! linear map of the mean behavior embedding. All gradients are exact,
//! computed by hand-written backpropagation through time.

mod decode;
mod vocab;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, Embedder};
use crate::error::{Error, Result};
use crate::filter::CleanedBehaviors;
use crate::index::ByteReader;
use crate::rng::{self, tags};

pub(crate) use decode::check_tokens;
pub use decode::{greedy, logprob, next_token_dist, parse, sample, DecodeOptions, Rollout};
pub use vocab::{parse_tokens, InvalidReason, QueryList, Vocab, EOS, PAD, SEP};

/// Capacity tier: hidden width and number of recurrent layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Tiny,
    Small,
    Base,
    Large,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Tiny, Tier::Small, Tier::Base, Tier::Large];

    pub fn hidden(self) -> usize {
        match self {
            Tier::Tiny => 16,
            Tier::Small => 32,
            Tier::Base => 64,
            Tier::Large => 128,
        }
    }

    pub fn layers(self) -> usize {
        match self {
            Tier::Tiny | Tier::Small => 1,
            Tier::Base | Tier::Large => 2,
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Tier::ALL.get(usize::from(tag)).copied()
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Tiny => "tiny",
            Tier::Small => "small",
            Tier::Base => "base",
            Tier::Large => "large",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown tier `{s}`")))
    }
}

/// Dimensions of a policy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub tier: Tier,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_queries: usize,
    pub max_query_len: usize,
}

impl PolicyShape {
    pub fn hidden(&self) -> usize {
        self.tier.hidden()
    }

    pub fn layers(&self) -> usize {
        self.tier.layers()
    }

    pub fn sep(&self) -> usize {
        self.vocab_size - 3
    }

    pub fn eos(&self) -> usize {
        self.vocab_size - 2
    }

    pub fn pad(&self) -> usize {
        self.vocab_size - 1
    }

    /// Longest decodable sequence: `n * max_len` content tokens, `n - 1`
    /// separators and the terminator.
    pub fn max_tokens(&self) -> usize {
        self.n_queries * (self.max_query_len + 1)
    }

    fn slot_rows(&self) -> usize {
        self.n_queries + 1
    }

    fn pos_rows(&self) -> usize {
        self.max_query_len + 2
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wa: usize,
    pub ua: usize,
    pub ba: usize,
    pub wz: usize,
    pub uz: usize,
    pub bz: usize,
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok: usize,
    pub slot: usize,
    pub pos: usize,
    pub ctx_w: usize,
    pub ctx_b: usize,
    pub layers: Vec<LayerOffsets>,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl Layout {
    fn new(s: &PolicyShape) -> Self {
        let (v, h, d) = (s.vocab_size, s.hidden(), s.embed_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(v * h);
        let slot = take(s.slot_rows() * h);
        let pos = take(s.pos_rows() * h);
        let ctx_w = take(h * d);
        let ctx_b = take(h);
        let layers = (0..s.layers())
            .map(|_| LayerOffsets {
                wa: take(h * h),
                ua: take(h * h),
                ba: take(h),
                wz: take(h * h),
                uz: take(h * h),
                bz: take(h),
            })
            .collect();
        let out_w = take(v * h);
        let out_b = take(v);
        Layout {
            tok,
            slot,
            pos,
            ctx_w,
            ctx_b,
            layers,
            out_w,
            out_b,
            total: at,
        }
    }
}

/// Parameters of one policy (teacher, student, reference or old snapshot).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

impl PolicyParams {
    /// All-zero parameters: every next-token distribution is uniform.
    pub fn zeros(shape: PolicyShape) -> Self {
        Self {
            data: vec![0.0; shape.n_params()],
            shape,
        }
    }

    /// Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn init(shape: PolicyShape, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(shape);
        let lay = shape.layout();
        let (v, h, d) = (shape.vocab_size, shape.hidden(), shape.embed_dim);
        let mut rng = rng::stream(seed, tags::INIT, shape.tier.tag() as u64);
        let mut fill = |data: &mut [f64], std: f64| {
            let n = Normal::new(0.0, std.max(1e-12)).expect("valid std");
            data.iter_mut().for_each(|x| *x = n.sample(&mut rng));
        };
        let data = &mut p.data;
        fill(&mut data[lay.tok..lay.tok + v * h], scale);
        fill(&mut data[lay.slot..lay.slot + shape.slot_rows() * h], scale);
        fill(&mut data[lay.pos..lay.pos + shape.pos_rows() * h], scale);
        fill(&mut data[lay.ctx_w..lay.ctx_w + h * d], 1.0 / (d as f64).sqrt());
        let rec = 1.0 / (h as f64).sqrt();
        for l in &lay.layers {
            for off in [l.wa, l.ua, l.wz, l.uz] {
                fill(&mut data[off..off + h * h], rec);
            }
        }
        fill(&mut data[lay.out_w..lay.out_w + v * h], scale * rec);
        p
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn tier(&self) -> Tier {
        self.shape.tier
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Linear context map of a behavior feature vector.
    pub fn context(&self, features: &[f64]) -> Result<ContextVector> {
        let (h, d) = (self.shape.hidden(), self.shape.embed_dim);
        if features.len() != d {
            return Err(Error::Input(format!(
                "context features have dimension {}, policy expects {d}",
                features.len()
            )));
        }
        let lay = self.shape.layout();
        let w = &self.data[lay.ctx_w..lay.ctx_w + h * d];
        let b = &self.data[lay.ctx_b..lay.ctx_b + h];
        let hidden = w
            .chunks_exact(d)
            .zip(b)
            .map(|(row, bi)| dot(row, features) + bi)
            .collect();
        Ok(ContextVector {
            features: features.to_vec(),
            hidden,
        })
    }

    /// Writes a versioned checkpoint: magic, version, tier tag, shape and
    /// the little-endian flat weight array.
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = &self.shape;
        let mut buf = Vec::with_capacity(64 + 8 * self.data.len());
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.push(s.tier.tag());
        for v in [
            s.vocab_size,
            s.embed_dim,
            s.n_queries,
            s.max_query_len,
            self.data.len(),
        ] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_string(),
        };
        let mut r = ByteReader::new(&bytes);
        if r.take(4) != Some(CKPT_MAGIC.as_slice()) {
            return Err(bad("not a policy checkpoint"));
        }
        match r.u32() {
            Some(CKPT_VERSION) => {}
            Some(v) => return Err(bad(&format!("unsupported checkpoint version {v}"))),
            None => return Err(bad("truncated header")),
        }
        let tier = r
            .take(1)
            .and_then(|t| Tier::from_tag(t[0]))
            .ok_or_else(|| bad("unknown tier tag"))?;
        let mut dims = [0usize; 5];
        for slot in &mut dims {
            *slot = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [vocab_size, embed_dim, n_queries, max_query_len, n] = dims;
        let shape = PolicyShape {
            tier,
            vocab_size,
            embed_dim,
            n_queries,
            max_query_len,
        };
        if vocab_size < 3 || shape.n_params() != n {
            return Err(bad("parameter count does not match shape"));
        }
        let data = (0..n)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated weights"))?;
        if !r.is_done() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { shape, data })
    }
}

const CKPT_MAGIC: &[u8; 4] = b"QLPC";
const CKPT_VERSION: u32 = 1;

/// Behavior features plus their projection into the policy's hidden space.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub features: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Mean payload embedding of a cleaned behavior set.
pub fn behavior_features(behaviors: &CleanedBehaviors, dim: usize) -> Result<Vec<f64>> {
    if behaviors.embeddings.is_empty() {
        return Err(Error::Input("cannot encode an empty behavior set".into()));
    }
    let mut mean = vec![0.0; dim];
    for e in &behaviors.embeddings {
        if e.dim() != dim {
            return Err(Error::Input("behavior embedding dimension mismatch".into()));
        }
        for (m, x) in mean.iter_mut().zip(e.as_slice()) {
            *m += x;
        }
    }
    let n = behaviors.embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Encodes cleaned behaviors for `params`: mean embedding, then the
/// learned projection.
pub fn encode_context(
    params: &PolicyParams,
    embedder: &Embedder,
    behaviors: &CleanedBehaviors,
) -> Result<ContextVector> {
    params.context(&behavior_features(behaviors, embedder.dim())?)
}

/// A gradient laid out like [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros_like(p: &PolicyParams) -> Self {
        Gradient(vec![0.0; p.data.len()])
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Forward and backward passes.

fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(x.len())) {
        *o += dot(row, x);
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// out += W^T g, with W stored row-major as `g.len()` rows.
fn matvec_t_add(out: &mut [f64], w: &[f64], g: &[f64]) {
    for (gi, row) in g.iter().zip(w.chunks_exact(out.len())) {
        if *gi != 0.0 {
            axpy(out, *gi, row);
        }
    }
}

/// dW += g x^T.
fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    for (gi, row) in g.iter().zip(dw.chunks_exact_mut(x.len())) {
        if *gi != 0.0 {
            axpy(row, *gi, x);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax of `logits / temperature` into `out`.
pub(crate) fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = ((l - max) / temperature).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Log-softmax at temperature 1.
pub(crate) fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Grammar position derived from the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Cursor {
    /// Separators emitted so far.
    pub slot: usize,
    /// Tokens since the last separator.
    pub pos: usize,
    pub prev: Option<usize>,
    pub len: usize,
}

impl Cursor {
    pub fn advance(&mut self, token: usize, shape: &PolicyShape) {
        if token == shape.sep() {
            self.slot += 1;
            self.pos = 0;
        } else {
            self.pos += 1;
        }
        self.prev = Some(token);
        self.len += 1;
    }

    /// Whether `token` keeps the prefix on a path to a valid list.
    pub fn allows(&self, token: usize, shape: &PolicyShape) -> bool {
        let last_slot = self.slot + 1 >= shape.n_queries;
        if token == shape.pad() {
            false
        } else if token == shape.sep() {
            self.pos > 0 && !last_slot
        } else if token == shape.eos() {
            self.pos > 0 && last_slot
        } else {
            self.pos < shape.max_query_len
        }
    }
}

/// Incremental forward pass, optionally recording what backward needs.
pub(crate) struct Forward<'p> {
    params: &'p PolicyParams,
    lay: Layout,
    ctx: Vec<f64>,
    state: Vec<Vec<f64>>,
    pub cursor: Cursor,
    pub logits: Vec<f64>,
    pre_a: Vec<f64>,
    pre_z: Vec<f64>,
    x: Vec<f64>,
    trace: Option<Trace>,
}

/// Per-step activations kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    /// (prev token, slot row, position row) per step.
    pub inputs: Vec<(usize, usize, usize)>,
    /// Per layer, per step: input x, previous state, candidate a, gate z.
    pub xs: Vec<Vec<f64>>,
    pub s_prev: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    /// Top-layer state per step.
    pub top: Vec<f64>,
    /// Temperature-1 probabilities per step, `steps x V`.
    pub probs: Vec<f64>,
    pub steps: usize,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p PolicyParams, ctx: &ContextVector, record: bool) -> Self {
        let s = &params.shape;
        let h = s.hidden();
        let trace = record.then(|| Trace {
            xs: vec![Vec::new(); s.layers()],
            s_prev: vec![Vec::new(); s.layers()],
            a: vec![Vec::new(); s.layers()],
            z: vec![Vec::new(); s.layers()],
            ..Trace::default()
        });
        Self {
            params,
            lay: s.layout(),
            ctx: ctx.hidden.clone(),
            state: vec![vec![0.0; h]; s.layers()],
            cursor: Cursor::default(),
            logits: vec![0.0; s.vocab_size],
            pre_a: vec![0.0; h],
            pre_z: vec![0.0; h],
            x: vec![0.0; h],
            trace,
        }
    }

    /// Runs the network for the next position; logits land in `self.logits`.
    pub fn step(&mut self) {
        let shape = &self.params.shape;
        let h = shape.hidden();
        let w = &self.params.data;
        let lay = &self.lay;
        let prev = self.cursor.prev.unwrap_or(shape.pad());
        let slot = self.cursor.slot.min(shape.slot_rows() - 1);
        let pos = self.cursor.pos.min(shape.pos_rows() - 1);

        let x = &mut self.x;
        x.copy_from_slice(&self.ctx);
        axpy(x, 1.0, &w[lay.tok + prev * h..lay.tok + (prev + 1) * h]);
        axpy(x, 1.0, &w[lay.slot + slot * h..lay.slot + (slot + 1) * h]);
        axpy(x, 1.0, &w[lay.pos + pos * h..lay.pos + (pos + 1) * h]);
        if let Some(t) = self.trace.as_mut() {
            t.inputs.push((prev, slot, pos));
        }

        for (l, off) in lay.layers.iter().enumerate() {
            let s = &mut self.state[l];
            self.pre_a.copy_from_slice(&w[off.ba..off.ba + h]);
            self.pre_z.copy_from_slice(&w[off.bz..off.bz + h]);
            matvec_add(&mut self.pre_a, &w[off.wa..off.wa + h * h], x);
            matvec_add(&mut self.pre_a, &w[off.ua..off.ua + h * h], s);
            matvec_add(&mut self.pre_z, &w[off.wz..off.wz + h * h], x);
            matvec_add(&mut self.pre_z, &w[off.uz..off.uz + h * h], s);
            if let Some(t) = self.trace.as_mut() {
                t.xs[l].extend_from_slice(x);
                t.s_prev[l].extend_from_slice(s);
            }
            for i in 0..h {
                let a = self.pre_a[i].tanh();
                let z = sigmoid(self.pre_z[i]);
                self.pre_a[i] = a;
                self.pre_z[i] = z;
                s[i] = z * s[i] + (1.0 - z) * a;
            }
            if let Some(t) = self.trace.as_mut() {
                t.a[l].extend_from_slice(&self.pre_a);
                t.z[l].extend_from_slice(&self.pre_z);
            }
            x.copy_from_slice(s);
        }

        let top = &self.state[shape.layers() - 1];
        let v = shape.vocab_size;
        self.logits.copy_from_slice(&w[lay.out_b..lay.out_b + v]);
        matvec_add(&mut self.logits, &w[lay.out_w..lay.out_w + v * h], top);
        if let Some(t) = self.trace.as_mut() {
            t.top.extend_from_slice(top);
            let start = t.probs.len();
            t.probs.resize(start + v, 0.0);
            softmax_into(&self.logits, 1.0, &mut t.probs[start..]);
            t.steps += 1;
        }
    }

    pub fn push(&mut self, token: usize) {
        self.cursor.advance(token, &self.params.shape);
    }

    pub fn into_trace(self) -> Option<Trace> {
        self.trace
    }
}

/// Teacher-forced pass over `tokens`, recording a trace.
pub(crate) fn forward_trace(params: &PolicyParams, ctx: &ContextVector, tokens: &[usize]) -> Trace {
    let mut f = Forward::new(params, ctx, true);
    for &t in tokens {
        f.step();
        f.push(t);
    }
    f.into_trace().expect("recording forward")
}

/// Backpropagates per-step logit gradients `dlogits` (`steps x V`) through
/// the recorded trace.
pub(crate) fn backward(
    params: &PolicyParams,
    ctx: &ContextVector,
    trace: &Trace,
    dlogits: &[f64],
) -> Gradient {
    let shape = &params.shape;
    let (v, h, d) = (shape.vocab_size, shape.hidden(), shape.embed_dim);
    let lay = shape.layout();
    let w = &params.data;
    let steps = trace.steps;
    debug_assert_eq!(dlogits.len(), steps * v);
    let mut g = vec![0.0; w.len()];

    // output projection; ds_top[t] collects dL/ds for the top layer
    let mut ds_above = vec![0.0; steps * h];
    for t in 0..steps {
        let dl = &dlogits[t * v..(t + 1) * v];
        let top = &trace.top[t * h..(t + 1) * h];
        outer_add(&mut g[lay.out_w..lay.out_w + v * h], dl, top);
        axpy(&mut g[lay.out_b..lay.out_b + v], 1.0, dl);
        matvec_t_add(&mut ds_above[t * h..(t + 1) * h], &w[lay.out_w..lay.out_w + v * h], dl);
    }

    let mut dpa = vec![0.0; h];
    let mut dpz = vec![0.0; h];
    for l in (0..shape.layers()).rev() {
        let off = lay.layers[l];
        let mut dx_all = vec![0.0; steps * h];
        let mut ds_next = vec![0.0; h];
        for t in (0..steps).rev() {
            let r = t * h..(t + 1) * h;
            let x = &trace.xs[l][r.clone()];
            let sp = &trace.s_prev[l][r.clone()];
            let a = &trace.a[l][r.clone()];
            let z = &trace.z[l][r.clone()];
            let mut ds = ds_next.clone();
            axpy(&mut ds, 1.0, &ds_above[r.clone()]);
            for i in 0..h {
                let dz = ds[i] * (sp[i] - a[i]);
                let da = ds[i] * (1.0 - z[i]);
                dpa[i] = da * (1.0 - a[i] * a[i]);
                dpz[i] = dz * z[i] * (1.0 - z[i]);
            }
            outer_add(&mut g[off.wa..off.wa + h * h], &dpa, x);
            outer_add(&mut g[off.ua..off.ua + h * h], &dpa, sp);
            axpy(&mut g[off.ba..off.ba + h], 1.0, &dpa);
            outer_add(&mut g[off.wz..off.wz + h * h], &dpz, x);
            outer_add(&mut g[off.uz..off.uz + h * h], &dpz, sp);
            axpy(&mut g[off.bz..off.bz + h], 1.0, &dpz);
            let dx = &mut dx_all[r];
            matvec_t_add(dx, &w[off.wa..off.wa + h * h], &dpa);
            matvec_t_add(dx, &w[off.wz..off.wz + h * h], &dpz);
            for i in 0..h {
                ds_next[i] = ds[i] * z[i];
            }
            matvec_t_add(&mut ds_next, &w[off.ua..off.ua + h * h], &dpa);
            matvec_t_add(&mut ds_next, &w[off.uz..off.uz + h * h], &dpz);
        }
        ds_above = dx_all;
    }

    // input embeddings and context projection
    let mut dctx = vec![0.0; h];
    for (t, &(prev, slot, pos)) in trace.inputs.iter().enumerate() {
        let dx = &ds_above[t * h..(t + 1) * h];
        axpy(&mut g[lay.tok + prev * h..lay.tok + (prev + 1) * h], 1.0, dx);
        axpy(&mut g[lay.slot + slot * h..lay.slot + (slot + 1) * h], 1.0, dx);
        axpy(&mut g[lay.pos + pos * h..lay.pos + (pos + 1) * h], 1.0, dx);
        axpy(&mut dctx, 1.0, dx);
    }
    outer_add(&mut g[lay.ctx_w..lay.ctx_w + h * d], &dctx, &ctx.features);
    axpy(&mut g[lay.ctx_b..lay.ctx_b + h], 1.0, &dctx);
    Gradient(g)
}

/// Exact gradient of `sum_t w_t log p(y_t | y_<t)`.
pub fn grad_weighted_loglik(
    params: &PolicyParams,
    ctx: &ContextVector,
    tokens: &[usize],
    weights: &[f64],
) -> Result<Gradient> {
    if tokens.len() != weights.len() {
        return Err(Error::Input(format!(
            "{} tokens but {} weights",
            tokens.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Input("non-finite token weight".into()));
    }
    decode::check_tokens(params, tokens)?;
    let trace = forward_trace(params, ctx, tokens);
    let v = params.shape.vocab_size;
    let mut dlogits = vec![0.0; trace.steps * v];
    add_loglik_dlogits(&trace, tokens, weights, v, &mut dlogits);
    Ok(backward(params, ctx, &trace, &dlogits))
}

/// dlogits += w_t (onehot(y_t) - p_t) per step.
pub(crate) fn add_loglik_dlogits(
    trace: &Trace,
    tokens: &[usize],
    weights: &[f64],
    v: usize,
    dlogits: &mut [f64],
) {
    for (t, (&y, &wt)) in tokens.iter().zip(weights).enumerate() {
        if wt == 0.0 {
            continue;
        }
        let p = &trace.probs[t * v..(t + 1) * v];
        let dl = &mut dlogits[t * v..(t + 1) * v];
        axpy(dl, -wt, p);
        dl[y] += wt;
    }
}

#[cfg(test)]
mod tests;
