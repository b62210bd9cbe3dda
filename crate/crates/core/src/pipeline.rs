//! End-to-end privatization of documents.
//!
//! Per document: tokenize, label every token with the public group map,
//! expand the base budget, then for each position independently normalize the
//! embedding, sample the mechanism with that position's budget and decode by
//! cosine nearest neighbour. Zero-budget positions emit the mask token. The
//! `uniform` framework runs the same path with one budget for every group.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::budget::{self, AllocationStrategy, BudgetVector, PrivacyReceipt};
use crate::decoder::{self, DecodeRule};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::grouping::{self, GroupLabel, ImportanceConfig, PrecomputedSpans, SensitivityOracle, Span};
use crate::mechanism::{self, MechanismConfig};
use crate::scalar::{self, Real};
use crate::sphere::RandomSource;

/// A token and its byte range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '“' | '”' | '‘' | '’' | '«' | '»' | '—' | '–' | '…' | '¿' | '¡' | '„' | '‚'
        )
}

/// Splits on whitespace, then peels leading and trailing punctuation
/// characters into one-character tokens. Inner punctuation stays
/// (`123-45-6789`, `don't`).
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    let bytes_end = text.len();
    let mut boundaries: Vec<(usize, usize)> = Vec::new();
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), chunk_start) {
            (true, Some(s)) => {
                boundaries.push((s, i));
                chunk_start = None;
            }
            (false, None) => chunk_start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = chunk_start {
        boundaries.push((s, bytes_end));
    }

    for (s, e) in boundaries {
        let chunk = &text[s..e];
        let chars: Vec<(usize, char)> = chunk.char_indices().collect();
        let lead = chars.iter().take_while(|(_, c)| is_punct(*c)).count();
        if lead == chars.len() {
            for (off, c) in &chars {
                out.push(Token {
                    text: c.to_string(),
                    start: s + off,
                    end: s + off + c.len_utf8(),
                });
            }
            continue;
        }
        let trail = chars.iter().rev().take_while(|(_, c)| is_punct(*c)).count();
        for (off, c) in &chars[..lead] {
            out.push(Token {
                text: c.to_string(),
                start: s + off,
                end: s + off + c.len_utf8(),
            });
        }
        let core_start = s + chars[lead].0;
        let core_end = if trail == 0 { e } else { s + chars[chars.len() - trail].0 };
        out.push(Token {
            text: text[core_start..core_end].to_string(),
            start: core_start,
            end: core_end,
        });
        for (off, c) in &chars[chars.len() - trail..] {
            out.push(Token {
                text: c.to_string(),
                start: s + off,
                end: s + off + c.len_utf8(),
            });
        }
    }
    out
}

/// Rebuilds text, replacing each token's byte range with `replacements[i]`
/// and keeping the original inter-token gaps.
pub fn detokenize(text: &str, tokens: &[Token], replacements: &[String]) -> String {
    assert_eq!(tokens.len(), replacements.len());
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for (tok, rep) in tokens.iter().zip(replacements) {
        out.push_str(&text[pos..tok.start]);
        out.push_str(rep);
        pos = tok.end;
    }
    out.push_str(&text[pos..]);
    out
}

/// One input line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_vector: Option<Vec<f64>>,
    /// Precomputed spans; when present the built-in detector is bypassed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_spans: Option<Vec<Span>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            query: None,
            query_vector: None,
            sensitive_spans: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    /// Group-wise budgets from the allocation strategy.
    #[default]
    Stamp,
    /// `base_eps` for every token.
    Uniform,
}

impl Framework {
    pub fn name(self) -> &'static str {
        match self {
            Framework::Stamp => "stamp",
            Framework::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    /// Emit the mask token; budget 0.
    #[default]
    Mask,
    /// Emit the token unchanged; the receipt records it as unprotected.
    Passthrough,
    Error,
}

fn default_tau() -> f64 {
    grouping::DEFAULT_TAU
}

fn default_mask() -> String {
    "[MASK]".into()
}

fn default_base_eps() -> f64 {
    50.0
}

/// Run configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub strategy: AllocationStrategy,
    #[serde(default = "default_base_eps")]
    pub base_eps: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub framework: Framework,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mask")]
    pub mask_token: String,
    #[serde(default)]
    pub oov_policy: OovPolicy,
    #[serde(default)]
    pub decode_rule: DecodeRule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mechanism: MechanismConfig::default(),
            strategy: AllocationStrategy::default(),
            base_eps: default_base_eps(),
            tau: default_tau(),
            framework: Framework::default(),
            seed: 0,
            mask_token: default_mask(),
            oov_policy: OovPolicy::default(),
            decode_rule: DecodeRule::default(),
        }
    }
}

pub const SEED_ENV: &str = "STAMP_SEED";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config file and applies the `STAMP_SEED` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)?.with_env_overrides()
    }

    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.mechanism.validate()?;
        self.strategy.validate()?;
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if self.mask_token.is_empty() {
            return Err(Error::InvalidConfig("mask_token must be nonempty".into()));
        }
        self.budgets().map(|_| ())
    }

    /// Group budgets for this run.
    pub fn budgets(&self) -> Result<BudgetVector> {
        match self.framework {
            Framework::Stamp => budget::allocate(self.base_eps, &self.strategy),
            Framework::Uniform => {
                budget::allocate(self.base_eps, &AllocationStrategy::Offset { offsets: [0.0; 4] })
            }
        }
    }
}

/// Result of privatizing one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivatizedContext {
    pub id: String,
    pub tokens_original: Vec<String>,
    pub tokens_private: Vec<String>,
    pub text_private: String,
    pub labels: Vec<GroupLabel>,
    pub receipt: PrivacyReceipt,
}

/// Output JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: String,
    pub text_private: String,
    pub tokens_private: Vec<String>,
    pub labels: Vec<GroupLabel>,
    pub receipt: PrivacyReceipt,
}

impl From<&PrivatizedContext> for OutputRecord {
    fn from(c: &PrivatizedContext) -> Self {
        Self {
            id: c.id.clone(),
            text_private: c.text_private.clone(),
            tokens_private: c.tokens_private.clone(),
            labels: c.labels.clone(),
            receipt: c.receipt.clone(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of a document's random streams: a function of the global seed and
/// the document id only. Position `i` then uses stream `i`.
pub fn document_seed(seed: u64, doc_id: &str) -> u64 {
    let digest = Sha256::digest(doc_id.as_bytes());
    let id_hash = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    splitmix64(seed ^ splitmix64(id_hash))
}

/// Privatizes one document.
pub fn privatize_document<T: Real>(
    doc: &Document,
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
    cfg: &RunConfig,
) -> Result<PrivatizedContext> {
    cfg.validate()?;
    let budgets = cfg.budgets()?;
    privatize_with_budgets(doc, store, oracle, cfg, &budgets)
}

fn importance_for<T: Real>(doc: &Document, store: &EmbeddingStore<T>, tau: f64) -> Result<Option<ImportanceConfig<T>>> {
    if let Some(v) = &doc.query_vector {
        if v.len() != store.dim() {
            return Err(Error::DimensionMismatch {
                expected: store.dim(),
                found: v.len(),
            });
        }
        let v: Vec<T> = v.iter().map(|&x| T::of(x)).collect();
        return ImportanceConfig::new(tau, &v).map(Some);
    }
    if let Some(q) = &doc.query {
        let toks = tokenize(q);
        let words: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        return ImportanceConfig::from_query_tokens(tau, &words, store);
    }
    Ok(None)
}

fn privatize_with_budgets<T: Real>(
    doc: &Document,
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
    cfg: &RunConfig,
    budgets: &BudgetVector,
) -> Result<PrivatizedContext> {
    if doc.id.is_empty() {
        return Err(Error::InvalidParameter("document id must be nonempty".into()));
    }
    let tokens = tokenize(&doc.text);
    let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    if words.is_empty() {
        return Ok(PrivatizedContext {
            id: doc.id.clone(),
            tokens_original: Vec::new(),
            tokens_private: Vec::new(),
            text_private: doc.text.clone(),
            labels: Vec::new(),
            receipt: PrivacyReceipt::empty(*budgets, &cfg.mechanism),
        });
    }

    let indices: Vec<Option<usize>> = words.iter().map(|w| store.index_of(w)).collect();
    if cfg.oov_policy == OovPolicy::Error {
        if let Some(pos) = indices.iter().position(Option::is_none) {
            return Err(Error::OutOfVocabulary(words[pos].clone()));
        }
    }

    let importance = importance_for(doc, store, cfg.tau)?;
    let labels = match &doc.sensitive_spans {
        Some(spans) => grouping::assign_groups(&words, store, &PrecomputedSpans(spans.clone()), importance.as_ref()),
        None => grouping::assign_groups(&words, store, oracle, importance.as_ref()),
    };
    let mut receipt = budget::build_receipt(&labels, budgets, &cfg.mechanism)?;

    let doc_seed = document_seed(cfg.seed, &doc.id);
    let mut private = Vec::with_capacity(words.len());
    for (i, (word, index)) in words.iter().zip(&indices).enumerate() {
        let Some(index) = *index else {
            match cfg.oov_policy {
                OovPolicy::Passthrough => {
                    receipt.override_position(i, f64::INFINITY);
                    private.push(word.clone());
                }
                _ => {
                    receipt.override_position(i, 0.0);
                    private.push(cfg.mask_token.clone());
                }
            }
            continue;
        };
        let eps = budgets[labels[i]];
        if eps == 0.0 {
            private.push(cfg.mask_token.clone());
            continue;
        }
        let mut rng = RandomSource::new(doc_seed, i as u64);
        private.push(privatize_token(store.row(index), eps, cfg, store, &mut rng)?);
    }

    Ok(PrivatizedContext {
        id: doc.id.clone(),
        text_private: detokenize(&doc.text, &tokens, &private),
        tokens_original: words,
        tokens_private: private,
        labels,
        receipt,
    })
}

/// Privatizes one embedding and decodes it. Reads nothing but its arguments.
fn privatize_token<T: Real>(
    embedding: &[T],
    eps: f64,
    cfg: &RunConfig,
    store: &EmbeddingStore<T>,
    rng: &mut RandomSource,
) -> Result<String> {
    let out = mechanism::privatize(embedding, &cfg.mechanism, eps, rng)?;
    match decoder::decode(&out.components, store, cfg.decode_rule) {
        Ok(r) => Ok(r.token),
        // A full-polar radius of exactly 0 leaves nothing to decode.
        Err(Error::ZeroNormInput) => Ok(cfg.mask_token.clone()),
        Err(e) => Err(e),
    }
}

/// Privatizes documents in parallel on the current rayon pool. Output order
/// equals input order and does not depend on the number of workers.
pub fn privatize_corpus<T: Real>(
    docs: &[Document],
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
    cfg: &RunConfig,
) -> Result<Vec<PrivatizedContext>> {
    cfg.validate()?;
    let budgets = cfg.budgets()?;
    docs.par_iter()
        .map(|d| privatize_with_budgets(d, store, oracle, cfg, &budgets))
        .collect()
}

/// Utility of a privatized corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub documents: usize,
    pub tokens: usize,
    /// Mean over documents of the per-document self-recovery rate.
    pub self_recovery: f64,
    /// Self-recovery over all tokens pooled.
    pub self_recovery_pooled: f64,
    /// Pooled self-recovery per group; `None` for groups with no tokens.
    pub group_recovery: [Option<f64>; 4],
    pub group_tokens: [usize; 4],
    /// Mean over documents of the cosine between unit-normalized mean token embeddings.
    pub context_cosine: f64,
    pub mask_rate: f64,
}

fn mean_unit_embedding<T: Real>(tokens: &[String], store: &EmbeddingStore<T>) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; store.dim()];
    let mut any = false;
    for t in tokens {
        if let Ok(e) = store.lookup(t) {
            sum.iter_mut().zip(e.unit).for_each(|(s, &u)| *s += u.to_f64_lossy());
            any = true;
        }
    }
    if any {
        scalar::normalized(&sum)
    } else {
        None
    }
}

/// Self-recovery, context cosine and mask rate. `mask_token` identifies
/// masked positions.
pub fn evaluate_run<T: Real>(
    contexts: &[PrivatizedContext],
    store: &EmbeddingStore<T>,
    mask_token: &str,
) -> Result<UtilityReport> {
    if contexts.is_empty() {
        return Err(Error::EmptyInput("contexts"));
    }
    let mut report = UtilityReport {
        documents: contexts.len(),
        tokens: 0,
        self_recovery: 0.0,
        self_recovery_pooled: 0.0,
        group_recovery: [None; 4],
        group_tokens: [0; 4],
        context_cosine: 0.0,
        mask_rate: 0.0,
    };
    let mut group_hits = [0usize; 4];
    let mut hits_total = 0usize;
    let mut scored_docs = 0usize;
    for c in contexts {
        let n = c.tokens_original.len();
        if c.tokens_private.len() != n || c.labels.len() != n {
            return Err(Error::InvalidParameter(format!("document {:?} is not aligned", c.id)));
        }
        if n == 0 {
            continue;
        }
        scored_docs += 1;
        let mut hits = 0usize;
        let mut masked = 0usize;
        for ((o, p), l) in c.tokens_original.iter().zip(&c.tokens_private).zip(&c.labels) {
            report.group_tokens[l.index()] += 1;
            if o == p {
                hits += 1;
                group_hits[l.index()] += 1;
            }
            if p == mask_token {
                masked += 1;
            }
        }
        hits_total += hits;
        report.tokens += n;
        report.self_recovery += hits as f64 / n as f64;
        report.mask_rate += masked as f64 / n as f64;
        report.context_cosine += match (
            mean_unit_embedding(&c.tokens_original, store),
            mean_unit_embedding(&c.tokens_private, store),
        ) {
            (Some(a), Some(b)) => scalar::dot(&a, &b),
            _ => 0.0,
        };
    }
    if scored_docs == 0 {
        return Err(Error::EmptyInput("tokens"));
    }
    let k = scored_docs as f64;
    report.self_recovery /= k;
    report.mask_rate /= k;
    report.context_cosine /= k;
    report.self_recovery_pooled = hits_total as f64 / report.tokens as f64;
    for g in 0..4 {
        if report.group_tokens[g] > 0 {
            report.group_recovery[g] = Some(group_hits[g] as f64 / report.group_tokens[g] as f64);
        }
    }
    Ok(report)
}

/// Group histogram and pooled ε̄ of an output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectSummary {
    pub documents: usize,
    pub tokens: usize,
    pub group_counts: [usize; 4],
    pub mean_eps: f64,
    pub masked: usize,
    pub unprotected: usize,
}

pub fn inspect(records: &[OutputRecord]) -> InspectSummary {
    let mut s = InspectSummary {
        documents: records.len(),
        tokens: 0,
        group_counts: [0; 4],
        mean_eps: 0.0,
        masked: 0,
        unprotected: 0,
    };
    for r in records {
        s.tokens += r.receipt.len();
        for g in 0..4 {
            s.group_counts[g] += r.receipt.group_counts[g];
        }
        s.masked += r.receipt.masked_positions.len();
        s.unprotected += r.receipt.unprotected_positions.len();
    }
    s.mean_eps = budget::pooled_mean_eps(records.iter().map(|r| &r.receipt));
    s
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<D: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<D>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<S: Serialize, W: Write>(items: impl IntoIterator<Item = S>, mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))
}
