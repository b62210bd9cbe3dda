//! Nearest-neighbour decoding of privatized vectors back to vocabulary tokens.
//!
//! On the unit sphere, maximizing cosine similarity, maximizing the dot
//! product with unit rows, minimizing the angle and minimizing the chordal
//! distance all select the same row. Each rule is implemented literally so
//! the equivalence can be cross-checked; [`DecodeRule::NormalizedDot`] is the
//! fast path used by the pipeline. Ties go to the lowest vocabulary index.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::scalar::{self, Real};
use crate::sphere::{clamped_acos, euclidean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// `argmax e⊤v / (‖e‖‖v‖)` over raw rows.
    CosineArgmax,
    /// `argmax ê⊤v̂` over the unit matrix.
    #[default]
    NormalizedDot,
    /// `argmin arccos(ê⊤v̂)`.
    GeodesicArgmin,
    /// `argmin ‖ê − v̂‖₂`.
    EuclideanArgmin,
}

impl DecodeRule {
    pub const ALL: [DecodeRule; 4] = [
        DecodeRule::CosineArgmax,
        DecodeRule::NormalizedDot,
        DecodeRule::GeodesicArgmin,
        DecodeRule::EuclideanArgmin,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub token: String,
    pub index: usize,
    /// Cosine similarity between the query and the decoded row.
    pub score: f64,
    /// Decoded cosine minus the best cosine among the other rows, floored at 0.
    pub runner_up_margin: f64,
}

/// Running best (by rule key) plus the two largest cosines seen.
struct Tracker {
    best_key: f64,
    best: usize,
    best_cos: f64,
    top_cos: [(f64, usize); 2],
}

impl Tracker {
    fn new() -> Self {
        Self {
            best_key: f64::NEG_INFINITY,
            best: usize::MAX,
            best_cos: f64::NEG_INFINITY,
            top_cos: [(f64::NEG_INFINITY, usize::MAX); 2],
        }
    }

    #[inline]
    fn push(&mut self, index: usize, key: f64, cos: f64) {
        if key > self.best_key || self.best == usize::MAX {
            self.best_key = key;
            self.best = index;
            self.best_cos = cos;
        }
        if cos > self.top_cos[0].0 {
            self.top_cos[1] = self.top_cos[0];
            self.top_cos[0] = (cos, index);
        } else if cos > self.top_cos[1].0 {
            self.top_cos[1] = (cos, index);
        }
    }

    fn finish<T: Real>(self, store: &EmbeddingStore<T>) -> DecodeResult {
        let other = if self.top_cos[0].1 == self.best {
            self.top_cos[1].0
        } else {
            self.top_cos[0].0
        };
        let score = self.best_cos.clamp(-1.0, 1.0);
        DecodeResult {
            token: store.token(self.best).to_string(),
            index: self.best,
            score,
            runner_up_margin: (score - other).max(0.0),
        }
    }
}

fn unit_query<T: Real>(e: &[T], store: &EmbeddingStore<T>) -> Result<Vec<T>> {
    if e.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            found: e.len(),
        });
    }
    scalar::normalized(e).ok_or(Error::ZeroNormInput)
}

/// Decodes one vector by exhaustive search.
pub fn decode<T: Real>(e_priv: &[T], store: &EmbeddingStore<T>, rule: DecodeRule) -> Result<DecodeResult> {
    let q = unit_query(e_priv, store)?;
    let mut t = Tracker::new();
    match rule {
        DecodeRule::NormalizedDot => {
            for i in 0..store.len() {
                let c = scalar::dot(&q, store.unit_row(i)).to_f64_lossy();
                t.push(i, c, c);
            }
        }
        DecodeRule::CosineArgmax => {
            let en = scalar::norm(e_priv);
            for i in 0..store.len() {
                let key = (scalar::dot(e_priv, store.row(i)) / (en * store.norm(i))).to_f64_lossy();
                let c = scalar::dot(&q, store.unit_row(i)).to_f64_lossy();
                t.push(i, key, c);
            }
        }
        DecodeRule::GeodesicArgmin => {
            for i in 0..store.len() {
                let c = scalar::dot(&q, store.unit_row(i));
                t.push(i, -clamped_acos(c).to_f64_lossy(), c.to_f64_lossy());
            }
        }
        DecodeRule::EuclideanArgmin => {
            for i in 0..store.len() {
                let row = store.unit_row(i);
                let dist = euclidean(&q, row).to_f64_lossy();
                let c = scalar::dot(&q, row).to_f64_lossy();
                t.push(i, -dist, c);
            }
        }
    }
    Ok(t.finish(store))
}

const ROW_BLOCK: usize = 256;

/// Decodes each row of a row-major `m × d` matrix. Equal to calling
/// [`decode`] per row; for [`DecodeRule::NormalizedDot`] the search is tiled
/// so each block of unit rows is reused across all queries while it is hot in
/// cache.
pub fn decode_batch<T: Real>(vectors: &[T], store: &EmbeddingStore<T>, rule: DecodeRule) -> Result<Vec<DecodeResult>> {
    let d = store.dim();
    if vectors.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: vectors.len() % d,
        });
    }
    if rule != DecodeRule::NormalizedDot {
        return vectors.chunks_exact(d).map(|v| decode(v, store, rule)).collect();
    }
    let queries: Vec<Vec<T>> = vectors
        .chunks_exact(d)
        .map(|v| unit_query(v, store))
        .collect::<Result<_>>()?;
    let mut trackers: Vec<Tracker> = queries.iter().map(|_| Tracker::new()).collect();
    let mut start = 0;
    while start < store.len() {
        let end = (start + ROW_BLOCK).min(store.len());
        for (q, t) in queries.iter().zip(trackers.iter_mut()) {
            for i in start..end {
                let c = scalar::dot(q, store.unit_row(i)).to_f64_lossy();
                t.push(i, c, c);
            }
        }
        start = end;
    }
    Ok(trackers.into_iter().map(|t| t.finish(store)).collect())
}

/// Candidate generator for approximate search. Candidates are re-ranked by
/// exact cosine, so a backend can only lose recall, never misorder.
pub trait AnnBackend<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    /// Up to `k` candidate row indices for a unit query; at least one.
    fn query(&self, unit: &[T], k: usize) -> Result<Vec<usize>>;
}

/// Exhaustive reference backend: every row is a candidate.
#[derive(Debug, Clone, Copy)]
pub struct ExactBackend {
    rows: usize,
}

impl ExactBackend {
    pub fn build<T: Real>(store: &EmbeddingStore<T>) -> Self {
        Self { rows: store.len() }
    }
}

impl<T: Real> AnnBackend<T> for ExactBackend {
    fn name(&self) -> &str {
        "exact"
    }

    fn query(&self, _unit: &[T], _k: usize) -> Result<Vec<usize>> {
        Ok((0..self.rows).collect())
    }
}

/// Decodes through `backend` then re-ranks its candidates by exact cosine.
pub fn decode_with_backend<T: Real>(
    e_priv: &[T],
    store: &EmbeddingStore<T>,
    backend: &dyn AnnBackend<T>,
    k: usize,
) -> Result<DecodeResult> {
    let q = unit_query(e_priv, store)?;
    let mut candidates = backend.query(&q, k)?;
    if candidates.is_empty() {
        return Err(Error::Backend(format!("{} returned no candidates", backend.name())));
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= store.len()) {
        return Err(Error::Backend(format!("{} returned out-of-range index {bad}", backend.name())));
    }
    candidates.sort_unstable();
    candidates.dedup();
    let mut t = Tracker::new();
    for i in candidates {
        let c = scalar::dot(&q, store.unit_row(i)).to_f64_lossy();
        t.push(i, c, c);
    }
    Ok(t.finish(store))
}

/// Fraction of queries where `backend` (after re-ranking) returns the exact
/// nearest row.
pub fn recall_at_1<T: Real>(
    queries: &[Vec<T>],
    store: &EmbeddingStore<T>,
    backend: &dyn AnnBackend<T>,
    k: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("queries"));
    }
    let mut hits = 0usize;
    for q in queries {
        let exact = decode(q, store, DecodeRule::NormalizedDot)?;
        if decode_with_backend(q, store, backend, k)?.index == exact.index {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}
