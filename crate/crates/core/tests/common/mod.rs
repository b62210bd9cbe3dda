//! Reference implementations and fixtures shared by the integration tests.
//! Nothing here calls into the library's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use stamp_core::{Document, EmbeddingStore, Span};

/// `A_d(κ) = I_{d/2}(κ) / I_{d/2−1}(κ)` from the ascending power series of
/// both Bessel functions, with terms rescaled to stay in range.
pub fn bessel_ratio_oracle(d: usize, kappa: f64) -> f64 {
    let nu = d as f64 / 2.0 - 1.0;
    // I_v(x) ∝ (x/2)^v / Γ(v+1) · Σ_k (x²/4)^k / (k! (v+1)_k)
    let series = |v: f64| -> (f64, f64) {
        // returns (log scale, sum) so that value = exp(scale) * sum
        let q = kappa * kappa / 4.0;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        let mut scale = 0.0f64;
        let mut k = 0.0f64;
        loop {
            term *= q / ((k + 1.0) * (v + 1.0 + k));
            sum += term;
            k += 1.0;
            if sum > 1e250 {
                scale += sum.ln();
                term /= sum;
                sum = 1.0;
            }
            if term < sum * 1e-17 && k > q.sqrt() {
                break;
            }
        }
        (scale, sum)
    };
    let (s1, a1) = series(nu + 1.0);
    let (s0, a0) = series(nu);
    kappa / (2.0 * (nu + 1.0)) * (a1 / a0) * (s1 - s0).exp()
}

/// Closed form of the ratio on the 2-sphere.
pub fn bessel_ratio_d3(kappa: f64) -> f64 {
    1.0 / kappa.tanh() - 1.0 / kappa
}

/// Two-sided Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// z for a two-sided 99% interval.
pub const Z99: f64 = 2.575_829_303_548_901;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_unit(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    unit(&gaussian(d, rng))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Store of `n` Gaussian rows named `t0, t1, ...`.
pub fn gaussian_store(n: usize, d: usize, seed: u64) -> EmbeddingStore<f64> {
    let mut r = rng(seed);
    EmbeddingStore::from_rows((0..n).map(|i| (format!("t{i}"), gaussian(d, &mut r)))).unwrap()
}

/// Unit vector at cosine `c` to the unit vector `center`, in a uniformly
/// random orthogonal direction.
pub fn around(center: &[f64], c: f64, rng: &mut impl Rng) -> Vec<f64> {
    let g = gaussian(center.len(), rng);
    let p = dot(&g, center);
    let orth = unit(&g.iter().zip(center).map(|(x, q)| x - p * q).collect::<Vec<_>>());
    let s = (1.0 - c * c).sqrt();
    center.iter().zip(&orth).map(|(q, o)| c * q + s * o).collect()
}

/// Unit-norm store of `clusters` random centres with `per` members each at
/// cosine `c` to their centre, so that every token has close neighbours.
pub fn clustered_store(clusters: usize, per: usize, d: usize, c: f64, seed: u64) -> EmbeddingStore<f64> {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(clusters * per);
    for k in 0..clusters {
        let center = random_unit(d, &mut r);
        for j in 0..per {
            rows.push((format!("t{}", k * per + j), around(&center, c, &mut r)));
        }
    }
    EmbeddingStore::from_rows(rows).unwrap()
}

/// Documents of `len` tokens drawn uniformly from the store vocabulary.
pub fn random_corpus(store: &EmbeddingStore<f64>, docs: usize, len: usize, seed: u64) -> Vec<Document> {
    let mut r = rng(seed);
    (0..docs)
        .map(|i| {
            let words: Vec<&str> = (0..len).map(|_| store.token(r.random_range(0..store.len()))).collect();
            Document::new(format!("doc-{i}"), words.join(" "))
        })
        .collect()
}

/// Corpus with a query direction, a tight cluster of `cluster` tokens at
/// cosine `c_query` to it, a clustered background and planted sensitive
/// spans, so that all four groups are populated.
pub struct PlantedCorpus {
    pub store: EmbeddingStore<f64>,
    pub docs: Vec<Document>,
    pub query: Vec<f64>,
}

pub fn planted_corpus(vocab: usize, cluster: usize, c_query: f64, d: usize, docs: usize, len: usize, seed: u64) -> PlantedCorpus {
    let mut r = rng(seed);
    let query = random_unit(d, &mut r);
    let mut rows: Vec<(String, Vec<f64>)> = (0..cluster)
        .map(|i| (format!("t{i}"), around(&query, c_query, &mut r)))
        .collect();
    let mut center = random_unit(d, &mut r);
    for i in cluster..vocab {
        if (i - cluster) % 4 == 0 {
            center = random_unit(d, &mut r);
        }
        rows.push((format!("t{i}"), around(&center, 0.9, &mut r)));
    }
    let store = EmbeddingStore::from_rows(rows).unwrap();
    let docs = (0..docs)
        .map(|i| {
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let idx = if r.random_bool(0.4) {
                        r.random_range(0..cluster)
                    } else {
                        r.random_range(cluster..vocab)
                    };
                    format!("t{idx}")
                })
                .collect();
            let mut spans = Vec::new();
            let mut pos = 0;
            while pos < len {
                pos += r.random_range(1..5);
                let l = r.random_range(1..4);
                if pos + l <= len {
                    spans.push(Span::new(pos, pos + l, "planted"));
                }
                pos += l;
            }
            let mut doc = Document::new(format!("doc-{i}"), words.join(" "));
            doc.query_vector = Some(query.clone());
            doc.sensitive_spans = Some(spans);
            doc
        })
        .collect();
    PlantedCorpus { store, docs, query }
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut worst) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    worst
}

/// Rejection threshold of the two-sample KS test at level 0.01.
pub fn ks_critical_01(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.627_6 * ((n + m) / (n * m)).sqrt()
}

/// Random orthogonal matrix (row-major) by Gram–Schmidt on Gaussian rows.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = gaussian(d, rng);
        for r in &rows {
            let p = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        rows.push(unit(&v));
    }
    rows
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| dot(r, v)).collect()
}
