//! Top-K cosine retrieval over article embeddings.
//!
//! `Exact` scans every vector. `Approximate` is an IVF layout: spherical
//! k-means with `ceil(sqrt(A))` centroids, each query scanning only the
//! members of its `probes` nearest centroids. Hits are ordered by score
//! descending, ties by ascending article id.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, normalize, Embedding};
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::world::NewsArticle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub article_id: usize,
    pub score: f64,
}

/// Score descending, then article id ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.article_id.cmp(&b.article_id))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexParams {
    pub mode: IndexMode,
    pub probes: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            mode: IndexMode::Exact,
            probes: 8,
            kmeans_iters: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    mode: IndexMode,
    dim: usize,
    probes: usize,
    ids: Vec<usize>,
    /// Row-major, one normalized vector per entry of `ids`.
    vectors: Vec<f64>,
    centroids: Vec<f64>,
    /// Member rows per centroid, ascending.
    lists: Vec<Vec<u32>>,
}

impl Index {
    pub fn build(articles: &[NewsArticle], params: &IndexParams) -> Result<Self> {
        let first = articles
            .first()
            .ok_or_else(|| Error::Build("cannot index an empty article list".into()))?;
        let dim = first.embedding.dim();
        if dim == 0 || articles.iter().any(|a| a.embedding.dim() != dim) {
            return Err(Error::Build("article embeddings differ in dimension".into()));
        }
        if params.probes == 0 {
            return Err(Error::Build("probes must be >= 1".into()));
        }
        let mut vectors = Vec::with_capacity(articles.len() * dim);
        for a in articles {
            let start = vectors.len();
            vectors.extend_from_slice(a.embedding.as_slice());
            normalize(&mut vectors[start..]);
        }
        let mut index = Index {
            mode: params.mode,
            dim,
            probes: params.probes,
            ids: articles.iter().map(|a| a.id).collect(),
            vectors,
            centroids: Vec::new(),
            lists: Vec::new(),
        };
        if params.mode == IndexMode::Approximate {
            let c = (articles.len() as f64).sqrt().ceil() as usize;
            index.train_ivf(c, params.kmeans_iters, params.seed);
        }
        Ok(index)
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_clusters(&self) -> usize {
        self.lists.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    fn train_ivf(&mut self, c: usize, iters: usize, seed: u64) {
        let n = self.ids.len();
        let c = c.clamp(1, n);
        let d = self.dim;
        let mut rng = rng::stream(seed, tags::INDEX, n as u64);
        let mut centroids: Vec<f64> = sample(&mut rng, n, c)
            .into_iter()
            .flat_map(|i| self.row(i).to_vec())
            .collect();
        let mut assign = vec![0usize; n];
        for _ in 0..iters.max(1) {
            for (i, slot) in assign.iter_mut().enumerate() {
                *slot = nearest_centroid(&centroids, d, self.row(i));
            }
            let mut sums = vec![0.0; c * d];
            let mut counts = vec![0usize; c];
            for (i, &k) in assign.iter().enumerate() {
                counts[k] += 1;
                for (s, x) in sums[k * d..(k + 1) * d].iter_mut().zip(self.row(i)) {
                    *s += x;
                }
            }
            for k in 0..c {
                let cent = &mut sums[k * d..(k + 1) * d];
                if counts[k] == 0 {
                    // reseed an empty cluster from a deterministic member
                    let i = (k * 7919 + 13) % n;
                    cent.copy_from_slice(&self.vectors[i * d..(i + 1) * d]);
                }
                normalize(cent);
            }
            centroids = sums;
        }
        for (i, slot) in assign.iter_mut().enumerate() {
            *slot = nearest_centroid(&centroids, d, self.row(i));
        }
        let mut lists = vec![Vec::new(); c];
        for (i, &k) in assign.iter().enumerate() {
            lists[k].push(i as u32);
        }
        self.centroids = centroids;
        self.lists = lists;
    }

    pub fn query(&self, q: &Embedding, k: usize) -> Result<Vec<SearchHit>> {
        if k < 1 {
            return Err(Error::Input("k must be >= 1".into()));
        }
        if q.dim() != self.dim {
            return Err(Error::Input(format!(
                "query dimension {} differs from index dimension {}",
                q.dim(),
                self.dim
            )));
        }
        let mut qv = q.0.clone();
        normalize(&mut qv);
        let mut hits: Vec<SearchHit> = match self.mode {
            IndexMode::Exact => (0..self.ids.len())
                .map(|i| self.hit(i, &qv))
                .collect(),
            IndexMode::Approximate => {
                let mut scored: Vec<(f64, usize)> = self
                    .centroids
                    .chunks_exact(self.dim)
                    .enumerate()
                    .map(|(c, cent)| (dot(cent, &qv), c))
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                scored
                    .iter()
                    .take(self.probes)
                    .flat_map(|&(_, c)| self.lists[c].iter())
                    .map(|&i| self.hit(i as usize, &qv))
                    .collect()
            }
        };
        Ok(top_k(&mut hits, k))
    }

    fn hit(&self, i: usize, q: &[f64]) -> SearchHit {
        SearchHit {
            article_id: self.ids[i],
            score: dot(self.row(i), q),
        }
    }

    /// Writes a versioned little-endian snapshot.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        buf.push(match self.mode {
            IndexMode::Exact => 0,
            IndexMode::Approximate => 1,
        });
        for v in [self.dim, self.probes, self.ids.len(), self.lists.len()] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &id in &self.ids {
            buf.extend_from_slice(&(id as u64).to_le_bytes());
        }
        for x in self.vectors.iter().chain(&self.centroids) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for list in &self.lists {
            buf.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for &m in list {
                buf.extend_from_slice(&m.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_string(),
        };
        let mut r = ByteReader::new(&bytes);
        if r.take(4).ok_or_else(|| bad("truncated header"))? != SNAPSHOT_MAGIC {
            return Err(bad("not an index snapshot"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != SNAPSHOT_VERSION {
            return Err(bad(&format!("unsupported snapshot version {version}")));
        }
        let mode = match r.take(1).ok_or_else(|| bad("truncated header"))?[0] {
            0 => IndexMode::Exact,
            1 => IndexMode::Approximate,
            m => return Err(bad(&format!("unknown index mode {m}"))),
        };
        let mut header = [0usize; 4];
        for h in &mut header {
            *h = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [dim, probes, n, c] = header;
        let ids = (0..n)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated ids"))?;
        let vectors = (0..n * dim)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated vectors"))?;
        let centroids = (0..c * dim)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated centroids"))?;
        let mut lists = Vec::with_capacity(c);
        for _ in 0..c {
            let len = r.u64().ok_or_else(|| bad("truncated lists"))? as usize;
            let list = (0..len)
                .map(|_| r.u32())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated lists"))?;
            lists.push(list);
        }
        Ok(Index {
            mode,
            dim,
            probes,
            ids,
            vectors,
            centroids,
            lists,
        })
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"QLIX";
const SNAPSHOT_VERSION: u32 = 1;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn nearest_centroid(centroids: &[f64], d: usize, v: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, c) in centroids.chunks_exact(d).enumerate() {
        let s = dot(c, v);
        if s > best.0 {
            best = (s, k);
        }
    }
    best.1
}

/// Keeps the best `k` hits in [`hit_order`].
fn top_k(hits: &mut Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    std::mem::take(hits)
}
