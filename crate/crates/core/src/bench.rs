//! Budget sweeps and timing benchmarks, both written as CSV.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::budget;
use crate::decoder::{self, AnnBackend, DecodeRule, ExactBackend};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::grouping::{self, Gazetteers, ImportanceConfig, RuleBasedDetector, SensitivityOracle};
use crate::mechanism::{self, MechanismConfig, MechanismKind};
use crate::pipeline::{self, Document, Framework, RunConfig};
use crate::scalar::Real;
use crate::sphere::RandomSource;

/// Default sweep grid of base budgets (the group-2 ε).
pub const DEFAULT_BASE_EPS: [f64; 5] = [50.0, 100.0, 150.0, 200.0, 250.0];
pub const DEFAULT_SEEDS: usize = 3;

/// Sweep grid file. Every combination of base ε, mechanism and framework is
/// run for `seeds` consecutive seeds starting at the config seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_base_eps")]
    pub base_eps: Vec<f64>,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<MechanismConfig>,
    #[serde(default = "default_frameworks")]
    pub frameworks: Vec<Framework>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Run uniform rows at the ε̄ measured on the matching stamp row instead
    /// of at the raw base ε.
    #[serde(default)]
    pub matched_uniform: bool,
}

fn default_base_eps() -> Vec<f64> {
    DEFAULT_BASE_EPS.to_vec()
}

fn default_mechanisms() -> Vec<MechanismConfig> {
    vec![MechanismConfig::normalized_polar()]
}

fn default_frameworks() -> Vec<Framework> {
    vec![Framework::Stamp]
}

fn default_seeds() -> usize {
    DEFAULT_SEEDS
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            base_eps: default_base_eps(),
            mechanisms: default_mechanisms(),
            frameworks: default_frameworks(),
            seeds: default_seeds(),
            matched_uniform: false,
        }
    }
}

impl SweepGrid {
    /// One config per (base ε, mechanism, framework), in that nesting order.
    pub fn expand(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &eps in &self.base_eps {
            for mech in &self.mechanisms {
                for &framework in &self.frameworks {
                    out.push(RunConfig {
                        base_eps: eps,
                        mechanism: *mech,
                        framework,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

/// One aggregate CSV row: mean and standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub framework: String,
    pub mechanism: String,
    pub strategy: String,
    pub base_eps: f64,
    pub mean_eps: f64,
    pub n_g1: usize,
    pub n_g2: usize,
    pub n_g3: usize,
    pub n_g4: usize,
    pub seeds: usize,
    pub self_recovery_mean: f64,
    pub self_recovery_std: f64,
    pub recovery_g1_mean: Option<f64>,
    pub recovery_g1_std: Option<f64>,
    pub recovery_g2_mean: Option<f64>,
    pub recovery_g2_std: Option<f64>,
    pub recovery_g3_mean: Option<f64>,
    pub recovery_g3_std: Option<f64>,
    pub recovery_g4_mean: Option<f64>,
    pub recovery_g4_std: Option<f64>,
    pub context_cosine_mean: f64,
    pub context_cosine_std: f64,
    pub mask_rate_mean: f64,
    pub us_per_token_mean: f64,
}

/// Sample mean and (n−1) standard deviation; std is 0 for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `cfg` over the corpus for `seeds` seeds (`cfg.seed`, `cfg.seed + 1`, ...).
pub fn run_seeds<T: Real>(
    docs: &[Document],
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
    cfg: &RunConfig,
    seeds: usize,
) -> Result<SweepRow> {
    if seeds == 0 {
        return Err(Error::InvalidConfig("seeds must be >= 1".into()));
    }
    let mut recovery = Vec::new();
    let mut groups: [Vec<f64>; 4] = Default::default();
    let mut cosine = Vec::new();
    let mut mask = Vec::new();
    let mut timing = Vec::new();
    let mut mean_eps = 0.0;
    let mut counts = [0usize; 4];
    for k in 0..seeds {
        let run = RunConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        let start = Instant::now();
        let contexts = pipeline::privatize_corpus(docs, store, oracle, &run)?;
        let elapsed = start.elapsed().as_secs_f64();
        let report = pipeline::evaluate_run(&contexts, store, &run.mask_token)?;
        recovery.push(report.self_recovery);
        for g in 0..4 {
            if let Some(r) = report.group_recovery[g] {
                groups[g].push(r);
            }
        }
        cosine.push(report.context_cosine);
        mask.push(report.mask_rate);
        timing.push(elapsed * 1e6 / report.tokens.max(1) as f64);
        // Labels and budgets do not depend on the seed.
        mean_eps = budget::pooled_mean_eps(contexts.iter().map(|c| &c.receipt));
        counts = report.group_tokens;
    }
    let group_stat = |g: usize| {
        if groups[g].is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&groups[g]);
            (Some(m), Some(s))
        }
    };
    let (g1m, g1s) = group_stat(0);
    let (g2m, g2s) = group_stat(1);
    let (g3m, g3s) = group_stat(2);
    let (g4m, g4s) = group_stat(3);
    let (rm, rs) = mean_std(&recovery);
    let (cm, cs) = mean_std(&cosine);
    Ok(SweepRow {
        framework: cfg.framework.name().into(),
        mechanism: cfg.mechanism.kind.name().into(),
        strategy: match cfg.framework {
            Framework::Stamp => cfg.strategy.name().into(),
            Framework::Uniform => "uniform".into(),
        },
        base_eps: cfg.base_eps,
        mean_eps,
        n_g1: counts[0],
        n_g2: counts[1],
        n_g3: counts[2],
        n_g4: counts[3],
        seeds,
        self_recovery_mean: rm,
        self_recovery_std: rs,
        recovery_g1_mean: g1m,
        recovery_g1_std: g1s,
        recovery_g2_mean: g2m,
        recovery_g2_std: g2s,
        recovery_g3_mean: g3m,
        recovery_g3_std: g3s,
        recovery_g4_mean: g4m,
        recovery_g4_std: g4s,
        context_cosine_mean: cm,
        context_cosine_std: cs,
        mask_rate_mean: mean_std(&mask).0,
        us_per_token_mean: mean_std(&timing).0,
    })
}

/// Runs every config; one row each.
pub fn sweep<T: Real>(
    configs: &[RunConfig],
    docs: &[Document],
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
    seeds: usize,
) -> Result<Vec<SweepRow>> {
    configs.iter().map(|c| run_seeds(docs, store, oracle, c, seeds)).collect()
}

/// Expands `grid` around `base` and runs it. With `matched_uniform`, each
/// uniform config takes its budget from the stamp row sharing its base ε and
/// mechanism.
pub fn sweep_grid<T: Real>(
    base: &RunConfig,
    grid: &SweepGrid,
    docs: &[Document],
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
) -> Result<Vec<SweepRow>> {
    let mut configs = grid.expand(base);
    if grid.matched_uniform {
        // Stamp first so that uniform rows can read its ε̄.
        configs.sort_by_key(|c| c.framework != Framework::Stamp);
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(configs.len());
    let mut matched: Vec<(f64, MechanismKind, f64)> = Vec::new();
    for cfg in configs {
        let mut cfg = cfg;
        let requested = cfg.base_eps;
        if grid.matched_uniform && cfg.framework == Framework::Uniform {
            let hit = matched
                .iter()
                .find(|(b, k, _)| *b == requested && *k == cfg.mechanism.kind)
                .ok_or_else(|| {
                    Error::InvalidConfig("matched_uniform needs the stamp framework in the grid".into())
                })?;
            cfg.base_eps = hit.2;
        }
        let row = run_seeds(docs, store, oracle, &cfg, grid.seeds)?;
        if cfg.framework == Framework::Stamp {
            matched.push((requested, cfg.mechanism.kind, row.mean_eps));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv<S: Serialize, W: Write>(rows: &[S], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Store of `n` Gaussian rows named `w0, w1, ...`.
pub fn random_store<T: Real>(n: usize, d: usize, seed: u64) -> Result<EmbeddingStore<T>> {
    let mut rng = RandomSource::new(seed, 0);
    EmbeddingStore::from_rows((0..n).map(|i| {
        let v: Vec<T> = (0..d).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
        (format!("w{i}"), v)
    }))
}

/// Per-stage wall clock of the privatization path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub mechanism: String,
    pub n_tokens: usize,
    pub vocab: usize,
    pub dim: usize,
    pub total_secs: f64,
    pub us_per_token: f64,
}

fn time_min<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Times grouping, sampling and decoding for `n_tokens` tokens drawn from the
/// store, single-threaded. Each stage reports the fastest of `repeats` runs.
pub fn bench_pipeline<T: Real>(
    store: &EmbeddingStore<T>,
    n_tokens: usize,
    mechanism: &MechanismConfig,
    eps: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<StageTiming>> {
    mechanism.validate()?;
    let mut rng = RandomSource::new(seed, u64::MAX);
    let tokens: Vec<String> = (0..n_tokens)
        .map(|_| store.token(rng.random_range(0..store.len())).to_string())
        .collect();
    let detector = RuleBasedDetector::new(Gazetteers::new());
    let query = ImportanceConfig::new(grouping::DEFAULT_TAU, store.row(0))?;
    let indices: Vec<usize> = tokens.iter().map(|t| store.index_of(t).expect("drawn from store")).collect();

    let grouping_secs = time_min(repeats, || {
        let labels = grouping::assign_groups(&tokens, store, &detector, Some(&query));
        std::hint::black_box(labels);
        Ok(())
    })?;

    let mut outputs: Vec<T> = Vec::with_capacity(n_tokens * store.dim());
    let sampling_secs = time_min(repeats, || {
        outputs.clear();
        for (i, &idx) in indices.iter().enumerate() {
            let mut r = RandomSource::new(seed, i as u64);
            let v = mechanism::privatize(store.row(idx), mechanism, eps, &mut r)?;
            outputs.extend_from_slice(&v.components);
        }
        Ok(())
    })?;

    let decoding_secs = time_min(repeats, || {
        std::hint::black_box(decoder::decode_batch(&outputs, store, DecodeRule::NormalizedDot)?);
        Ok(())
    })?;

    let row = |stage: &str, secs: f64| StageTiming {
        stage: stage.into(),
        mechanism: mechanism.kind.name().into(),
        n_tokens,
        vocab: store.len(),
        dim: store.dim(),
        total_secs: secs,
        us_per_token: secs * 1e6 / n_tokens.max(1) as f64,
    };
    Ok(vec![
        row("grouping", grouping_secs),
        row("sampling", sampling_secs),
        row("decoding", decoding_secs),
    ])
}

/// Exact-decode throughput for one vocabulary size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTiming {
    pub backend: String,
    pub vocab: usize,
    pub dim: usize,
    pub queries_per_sec: f64,
    pub recall_at_1: f64,
}

/// Times `decode_batch` on a random store of each size and measures the
/// backend's recall@1 against exact search.
pub fn bench_decode<T: Real>(
    vocab_sizes: &[usize],
    dim: usize,
    queries: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<DecodeTiming>> {
    let mut out = Vec::new();
    for &n in vocab_sizes {
        let store = random_store::<T>(n, dim, seed ^ n as u64)?;
        let q = random_store::<T>(queries.max(2), dim, seed.wrapping_add(1))?;
        let batch = &q.matrix()[..queries * dim];
        let secs = time_min(repeats, || {
            std::hint::black_box(decoder::decode_batch(batch, &store, DecodeRule::NormalizedDot)?);
            Ok(())
        })?;
        let backend = ExactBackend::build(&store);
        let recall_queries: Vec<Vec<T>> = batch.chunks_exact(dim).take(10_000).map(<[T]>::to_vec).collect();
        let recall = decoder::recall_at_1(&recall_queries, &store, &backend, store.len())?;
        out.push(DecodeTiming {
            backend: AnnBackend::<T>::name(&backend).into(),
            vocab: n,
            dim,
            queries_per_sec: queries as f64 / secs,
            recall_at_1: recall,
        });
    }
    Ok(out)
}
